"""Numerical laboratory for Nash inequalities and heat kernel bounds on finite chains."""

from .profiles import (
    ProfileError, DomainError, MonotonicityError, DoublingFailure,
    UltracontractivityError, ExprProfile, TabulatedProfile, NashRate,
    theta_from_phi, phi_from_theta, theta_tilde, theta_star,
    check_doubling, product_constant, partial_product,
    regularize, check_regular_class, default_grid,
)
from .grammar import parse_profile, parse_rate, ProfileParseError
from .forms import (
    FormError, FiniteDirichletForm, Perturbation,
    energy, carre_du_champ, lambda_sq, admissibility_margin,
    part_form, truncate, gamma_rho,
)
from .models import cycle, path, torus, two_state, stable_like, build_named, to_model, from_model
from .semigroup import (
    SpectralKernel, SpectralError, heat_kernel, onediag_norm, perturbed_norm,
    dirichlet_kernel_and_spectrum,
)
from .nash_verify import (
    NashCheckReport, PremiseNotCertified, nash_margin, falsify_nash,
    ondiag_to_nash, nash_to_ondiag, fit_delta, default_time_grid,
    super_poincare_margin, faber_krahn_check,
)
from .davies import (
    DaviesCertificate, BallProfile, BallCertificate, BallBoundReport,
    PipelineReport, davies_lambda, davies_constants, offdiag_bound,
    verify_offdiag, build_psi_family, feasible_psi_distance,
    gaussian_envelope, log_gaussian_envelope, envelope_log_minimum,
    scaled_ray_family, beta_profile, beta_doubling_constant,
    beta_integral_constant, ball_certificate, dirichlet_ball_bound,
    stable_like_Phi, stable_like_pipeline,
)

__version__ = "0.1.0"
