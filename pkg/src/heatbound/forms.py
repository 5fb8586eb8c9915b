"""Finite symmetric Dirichlet forms on weighted graphs.

A form is specified by a reference measure m (positive weights per state) and
a symmetric conductance matrix c with zero diagonal:

    energy(u, v) = (1/2) * sum_{x != y} (u(x) - u(y)) (v(x) - v(y)) c[x, y]

with generator L u(x) = (1/m(x)) sum_y c[x, y] (u(y) - u(x)).  An optional
per-state killing mass (conductance to an absorbing boundary) turns the form
into the restriction of a larger form to a sub-domain; rows of the generator
then sum to a negative value instead of zero.

Lp norms are always weighted by m: ||u||_p^p = sum_x |u(x)|^p m(x).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FiniteDirichletForm",
    "Perturbation",
    "energy",
    "carre_du_champ",
    "lambda_sq",
    "admissibility_margin",
    "part_form",
    "truncate",
    "gamma_rho",
    "FormError",
]


class FormError(ValueError):
    pass


@dataclass
class FiniteDirichletForm:
    """Symmetric Markov form on n states.

    Parameters
    ----------
    m : (n,) positive reference weights.
    c : (n, n) symmetric nonnegative conductances, zero diagonal.
    coords : optional (n, d) point coordinates used for metric truncation,
        ball volumes and distance-based perturbations.
    kill : optional (n,) nonnegative boundary conductance mass per state;
        state x is additionally killed at rate kill[x] / m[x].
    labels : optional state labels (kept through restriction).
    """

    m: np.ndarray
    c: np.ndarray
    coords: np.ndarray | None = None
    kill: np.ndarray | None = None
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        n = self.m.size
        if self.m.ndim != 1 or np.any(self.m <= 0):
            raise FormError("m must be a 1-d array of positive weights")
        if self.c.shape != (n, n):
            raise FormError("c must be an (n, n) matrix")
        if np.any(self.c < 0):
            raise FormError("conductances must be nonnegative")
        if not np.allclose(self.c, self.c.T, rtol=0, atol=1e-12 * max(1.0, float(np.max(self.c)))):
            raise FormError("conductance matrix must be symmetric")
        if np.any(np.abs(np.diag(self.c)) > 0):
            raise FormError("conductance diagonal must be zero")
        if self.kill is None:
            self.kill = np.zeros(n)
        else:
            self.kill = np.asarray(self.kill, dtype=float)
            if self.kill.shape != (n,) or np.any(self.kill < 0):
                raise FormError("kill must be a nonnegative (n,) array")
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=float)
            if self.coords.ndim == 1:
                self.coords = self.coords[:, None]
            if self.coords.shape[0] != n:
                raise FormError("coords must have one row per state")
        if not self.labels:
            self.labels = list(range(n))

    @property
    def n(self) -> int:
        return self.m.size

    @property
    def has_killing(self) -> bool:
        return bool(np.any(self.kill > 0))

    def total_mass(self) -> float:
        return float(np.sum(self.m))

    # -- norms ---------------------------------------------------------------
    def norm_p(self, u, p: float) -> float:
        u = np.asarray(u, dtype=float)
        if np.isinf(p):
            return float(np.max(np.abs(u)))
        return float(np.sum(np.abs(u) ** p * self.m) ** (1.0 / p))

    # -- operators -----------------------------------------------------------
    def neg_generator_matrix(self) -> np.ndarray:
        """Matrix of -L acting on functions (not symmetric unless m is flat)."""
        deg = self.c.sum(axis=1) + self.kill
        return (np.diag(deg) - self.c) / self.m[:, None]

    def symmetrized_matrix(self) -> np.ndarray:
        """m^{1/2}-conjugated -L; symmetric positive semidefinite."""
        deg = self.c.sum(axis=1) + self.kill
        s = 1.0 / np.sqrt(self.m)
        return (np.diag(deg) - self.c) * s[:, None] * s[None, :]

    def distances(self) -> np.ndarray:
        """Pairwise metric distances from coords (coords required)."""
        if self.coords is None:
            raise FormError("form has no coords; metric operations unavailable")
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2))

    def graph_distances(self) -> np.ndarray:
        """Hop distances along edges with positive conductance (inf if disconnected)."""
        n = self.n
        adj = self.c > 0
        dist = np.full((n, n), np.inf)
        for s in range(n):
            dist[s, s] = 0.0
            frontier = [s]
            d = 0
            while frontier:
                d += 1
                nxt = []
                for x in frontier:
                    for y in np.flatnonzero(adj[x]):
                        if dist[s, y] == np.inf:
                            dist[s, y] = d
                            nxt.append(y)
                frontier = nxt
        return dist


@dataclass
class Perturbation:
    """A bounded potential psi used for exponential tilting e^psi P_t e^{-psi}."""

    psi: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        if self.psi.ndim != 1:
            raise FormError("psi must be a 1-d array")


def energy(form: FiniteDirichletForm, u, v) -> float:
    """Bilinear form energy(u, v), including the killing part if present."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    du = u[:, None] - u[None, :]
    dv = v[:, None] - v[None, :]
    val = 0.5 * float(np.sum(du * dv * form.c))
    if form.has_killing:
        val += float(np.sum(u * v * form.kill))
    return val


def carre_du_champ(form: FiniteDirichletForm, u) -> np.ndarray:
    """Energy density: Gamma(u, u) per unit of m at each state.

    Satisfies the exact identity
        sum_x v(x) Gamma(u,u)(x) m(x) = energy(u, u v) - (1/2) energy(u^2, v);
    killing contributes u^2 kill / (2 m) to the density.
    """
    u = np.asarray(u, dtype=float)
    du = u[:, None] - u[None, :]
    dens = np.sum(du * du * form.c, axis=1) / (2.0 * form.m)
    if form.has_killing:
        dens = dens + form.kill * u * u / (2.0 * form.m)
    return dens


def lambda_sq(form: FiniteDirichletForm, pert: Perturbation | np.ndarray) -> float:
    """Squared tilting size Lambda(psi)^2.

    The maximum over both tilt signs of the state-wise density

        (1 / (2 m(x))) * sum_y (1 - exp(±(psi(y) - psi(x))))^2 c[x, y].

    Computed through expm1 with a log-domain guard for very large increments;
    may return inf when increments exceed the overflow range, which is an
    honest value for a supremum.
    """
    psi = pert.psi if isinstance(pert, Perturbation) else np.asarray(pert, dtype=float)
    if psi.shape != (form.n,):
        raise FormError("psi length must match the state count")
    d = psi[None, :] - psi[:, None]
    out = 0.0
    with np.errstate(over="ignore"):
        for sgn in (1.0, -1.0):
            z = sgn * d
            big = z > 300.0
            sq = np.empty_like(z)
            sq[~big] = np.expm1(z[~big]) ** 2
            # (e^z - 1)^2 ~ e^{2z}: carried in log to preserve ordering
            sq[big] = np.exp(np.minimum(2.0 * z[big], 1420.0))
            dens = np.sum(np.where(form.c > 0, sq * form.c, 0.0), axis=1) / (2.0 * form.m)
            out = max(out, float(np.max(dens)))
    return out


def admissibility_margin(form: FiniteDirichletForm, pert: Perturbation | np.ndarray,
                         f, p: float, s: float) -> float:
    """Margin of the tilted-energy lower bound used by the off-diagonal iteration.

    Returns
        energy(e^psi f^{2p-1}, e^{-psi} f) - (s/p) energy(f^p, f^p)
        + (1 + 4 p^2 1_{p>1} / (1-s)) Lambda(psi)^2 ||f||_{2p}^{2p},

    which is nonnegative for f >= 0, p >= 1 and s in (0, 1).
    """
    if not 0 < s < 1:
        raise FormError("s must lie in (0, 1)")
    if p < 1:
        raise FormError("p must be >= 1")
    psi = pert.psi if isinstance(pert, Perturbation) else np.asarray(pert, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise FormError("admissibility margin is defined for nonnegative f")
    lam2 = lambda_sq(form, psi)
    coeff = 1.0 + (4.0 * p * p / (1.0 - s) if p > 1 else 0.0)
    lhs = energy(form, np.exp(psi) * f ** (2 * p - 1), np.exp(-psi) * f)
    mid = (s / p) * energy(form, f ** p, f ** p)
    norm = float(np.sum(f ** (2 * p) * form.m))
    return lhs - mid + coeff * lam2 * norm


def part_form(form: FiniteDirichletForm, domain) -> FiniteDirichletForm:
    """Restriction to a sub-domain with absorption outside.

    The generator of the restricted form is the principal sub-matrix of the
    original generator on ``domain``; conductance into the complement becomes
    killing mass.  Functions on the restriction correspond to functions
    vanishing outside ``domain``.
    """
    domain = np.asarray(domain, dtype=int)
    if domain.size == 0:
        raise FormError("domain must be nonempty")
    if len(set(domain.tolist())) != domain.size:
        raise FormError("domain indices must be distinct")
    mask = np.zeros(form.n, dtype=bool)
    mask[domain] = True
    outside = ~mask
    kill_extra = form.c[np.ix_(domain, np.flatnonzero(outside))].sum(axis=1)
    return FiniteDirichletForm(
        m=form.m[domain],
        c=form.c[np.ix_(domain, domain)],
        coords=None if form.coords is None else form.coords[domain],
        kill=form.kill[domain] + kill_extra,
        labels=[form.labels[i] for i in domain],
    )


def truncate(form: FiniteDirichletForm, rho: float) -> tuple[FiniteDirichletForm, float]:
    """Drop jumps longer than rho (metric length from coords).

    Returns the truncated form together with the exact tail constant

        tail = 2 * sup_x (1/m(x)) * sum_{|x-y| > rho} c[x, y]

    for which energy(u, u) <= energy_rho(u, u) + tail * ||u||_2^2 holds for
    every u (each long edge is bounded by 2(u(x)^2 + u(y)^2) conductance).
    """
    dist = form.distances()
    keep = dist <= rho
    c_trunc = np.where(keep, form.c, 0.0)
    tail_rates = (form.c - c_trunc).sum(axis=1) / form.m
    tail = 2.0 * float(np.max(tail_rates))
    trunc = FiniteDirichletForm(m=form.m.copy(), c=c_trunc, coords=form.coords,
                                kill=form.kill.copy(), labels=list(form.labels))
    return trunc, tail


def gamma_rho(form: FiniteDirichletForm, pert: Perturbation | np.ndarray,
              rho: float) -> np.ndarray:
    """Truncated tilting density at each state:

        (1 / (2 m(x))) * sum_{0 < |x-y| <= rho} (e^{psi(x) - psi(y)} - 1)^2 c[x, y].
    """
    psi = pert.psi if isinstance(pert, Perturbation) else np.asarray(pert, dtype=float)
    dist = form.distances()
    keep = (dist <= rho) & (form.c > 0)
    d = psi[:, None] - psi[None, :]
    with np.errstate(over="ignore"):
        sq = np.expm1(d) ** 2
    return np.sum(np.where(keep, sq * form.c, 0.0), axis=1) / (2.0 * form.m)
