"""Off-diagonal kernel machinery built on exponential perturbations.

Everything here follows one scheme: tilt the semigroup by e^{psi}, control
the tilted 1->inf norm through explicit constants, then choose psi to turn
on-diagonal decay into off-diagonal decay.  The module provides

* the explicit constant chain (iteration base lambda, envelope constants
  C_eps and c_eps) for profiles with certified doubling,
* grid verification of the tilted bound against exact kernels,
* rigorous lower bounds for the intrinsic perturbation distance
  (feasible psi certificates, no global optimality claimed),
* restricted-ball bounds driven by volume scaling constants, and
* the heavy-tailed lattice pipeline combining truncation, tilting, and
  an exact additive long-jump comparison.

Exact kernels come from spectral decompositions, so far off-diagonal
entries can sit below double-precision cancellation noise; comparisons are
skipped (and counted) when both sides are below that resolution floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forms import (FiniteDirichletForm, Perturbation, gamma_rho, lambda_sq,
                    part_form, truncate)
from .models import stable_like
from .nash_verify import (NashCheckReport, PremiseNotCertified, falsify_nash,
                          fit_delta, default_time_grid)
from .profiles import (DomainError, NashRate, ProfileError, ProfileFunction,
                       check_doubling, phi_from_theta, product_constant)
from .semigroup import SpectralKernel

__all__ = [
    "DaviesCertificate", "BallProfile", "BallCertificate", "BallBoundReport",
    "davies_lambda", "davies_constants", "constants_detail", "offdiag_bound", "verify_offdiag",
    "build_psi_family", "feasible_psi_distance", "gaussian_envelope",
    "log_gaussian_envelope", "envelope_log_minimum", "scaled_ray_family",
    "beta_profile", "beta_doubling_constant",
    "beta_integral_constant", "ball_certificate", "dirichlet_ball_bound",
    "stable_like_Phi", "stable_like_pipeline", "PipelineReport",
]

LOG_TOL = 1e-9   # log-margin tolerance for theorem-backed grid assertions


# ---------------------------------------------------------------------------
# Explicit constants.
# ---------------------------------------------------------------------------


def davies_lambda(eps: float, C: float, eta: float) -> int:
    """Smallest integer lambda > 2^eta with (lam-1)/lam*(1+C*2^eta/(lam-2^eta)) < 1+eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if C < 1:
        raise ValueError("C must be at least 1")
    if eta <= 0:
        raise ValueError("eta must be positive")
    two_eta = 2.0 ** eta
    lam = int(math.floor(two_eta)) + 1
    while True:
        if lam > two_eta:
            val = (lam - 1) / lam * (1.0 + C * two_eta / (lam - two_eta))
            if val < 1.0 + eps:
                return lam
        lam += 1


def _admissibility_constants(s: float, mode: str) -> tuple[float, float, float]:
    """(C0, C, eta) for the tilted-energy inequality.

    Jump forms admit every bounded psi with (s, 5/(1-s), 2).  The
    strongly-local triple (1, 1, 1) is exposed for graph approximations of
    diffusions; genuine strong locality does not exist on a discrete space,
    so that mode is a modeling convention, not a theorem.
    """
    if mode == "jump":
        if not 0 < s < 1:
            raise ValueError("s must lie in (0, 1)")
        return s, 5.0 / (1.0 - s), 2.0
    if mode == "local":
        return 1.0, 1.0, 1.0
    raise ValueError(f"unknown admissibility mode {mode!r}")


def constants_detail(phi: ProfileFunction, eps: float, s: float,
                      mode: str = "jump") -> dict:
    C0, C_adm, eta_adm = _admissibility_constants(s, mode)
    dc = check_doubling(phi)   # raises DoublingFailure when not certified
    lam = davies_lambda(eps, C_adm, eta_adm)
    C_lam, c_lam = product_constant(dc.envelope_C, dc.eta_d, lam)
    return {
        "eps": float(eps), "s": float(s), "mode": mode,
        "C0": C0, "C_adm": C_adm, "eta_adm": eta_adm,
        "lambda": lam, "envelope_C": dc.envelope_C, "eta_d": dc.eta_d,
        "C_eps": C_lam, "c_eps": C0 * c_lam,
    }


def davies_constants(phi: ProfileFunction, eps: float, s: float,
                     mode: str = "jump") -> tuple[float, float]:
    """Envelope constants (C_eps, c_eps) for a doubling-certified profile."""
    d = constants_detail(phi, eps, s, mode)
    return d["C_eps"], d["c_eps"]


@dataclass
class DaviesCertificate:
    """Verified tilted-bound certificate for one (form, profile) pair."""

    epsilon: float
    lam: int
    C_eps: float
    c_eps: float
    admissibility: dict
    phi: ProfileFunction
    delta: float
    grid: dict
    worst_log_margin: float
    passed: bool
    witness: tuple | None = None
    premise: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def lambda_inequality(self) -> float:
        """(lam-1)/lam * (1 + C*2^eta/(lam-2^eta)); must be < 1+epsilon."""
        C, eta = self.admissibility["C_adm"], self.admissibility["eta_adm"]
        two_eta = 2.0 ** eta
        return (self.lam - 1) / self.lam * (1.0 + C * two_eta / (self.lam - two_eta))

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon, "lambda": self.lam,
            "C_eps": self.C_eps, "c_eps": self.c_eps,
            "admissibility": dict(self.admissibility),
            "phi": self.phi.spec() if hasattr(self.phi, "spec") else repr(self.phi),
            "delta": self.delta, "grid": dict(self.grid),
            "worst_log_margin": self.worst_log_margin, "passed": self.passed,
            "witness": None if self.witness is None else list(self.witness),
            "premise": dict(self.premise), "notes": list(self.notes),
        }


def offdiag_bound(cert: DaviesCertificate, psi, t: float, x: int, y: int,
                  lam_sq_value: float) -> float:
    """C_eps * phi(c_eps t) * e^{delta t} * exp(-|psi(y)-psi(x)| + (1+eps) Lambda^2 t)."""
    if t <= 0:
        raise ValueError("t must be positive")
    p = psi.psi if isinstance(psi, Perturbation) else np.asarray(psi, dtype=float)
    drop = abs(float(p[y]) - float(p[x]))
    return (cert.C_eps * cert.phi.value(cert.c_eps * t) * math.exp(cert.delta * t)
            * math.exp(-drop + (1.0 + cert.epsilon) * lam_sq_value * t))


# ---------------------------------------------------------------------------
# Perturbation families and grid verification.
# ---------------------------------------------------------------------------

DEFAULT_SLOPES = tuple(np.geomspace(0.05, 1.0, 8))


def build_psi_family(form: FiniteDirichletForm, slopes=DEFAULT_SLOPES,
                     cone_centers=None, extra=()) -> list[Perturbation]:
    """Zero, coordinate ramps, and graph-distance cones at the given slopes."""
    fam = [Perturbation(np.zeros(form.n), name="zero")]
    if form.coords is not None:
        for axis in range(form.coords.shape[1]):
            col = form.coords[:, axis]
            if np.ptp(col) == 0:
                continue
            for s in slopes:
                fam.append(Perturbation(s * (col - col.min()),
                                        name=f"ramp[{axis}]*{s:.3g}"))
    Dg = form.graph_distances()
    if cone_centers is None:
        cone_centers = (0, form.n // 2) if form.n > 2 else (0,)
    for z0 in cone_centers:
        dz = Dg[int(z0)]
        if not np.all(np.isfinite(dz)):
            continue
        for s in slopes:
            fam.append(Perturbation(s * dz, name=f"cone[{z0}]*{s:.3g}"))
    fam.extend(extra)
    return fam


def verify_offdiag(form: FiniteDirichletForm, phi: ProfileFunction, delta: float,
                   eps: float, s: float, psi_family=None, t_grid=None,
                   mode: str = "jump", budget: int = 2000, seed: int = 0,
                   C_scale: float = 1.0, theta=None) -> DaviesCertificate:
    """Assert the tilted kernel bound on every (t, x, y, psi) grid tuple.

    The rate inequality behind the profile must pass the falsifier first
    (same gate as the on-diagonal direction).  ``C_scale`` rescales C_eps
    for fault-injection tests; anything but 1.0 is recorded in the notes.
    Tuples where both the exact kernel and the bound sit below the spectral
    resolution floor are counted as unresolved instead of compared.
    """
    if theta is None:
        theta = NashRate.from_profile(phi)
    premise = falsify_nash(form, theta, delta, budget=budget, seed=seed)
    if not premise.certified:
        raise PremiseNotCertified(
            "rate inequality behind the profile failed its falsifier certificate "
            f"(worst margin {premise.worst_margin:.3e}); refusing to verify"
        )
    detail = constants_detail(phi, eps, s, mode)
    if psi_family is None:
        psi_family = build_psi_family(form)
    if t_grid is None:
        t_grid = default_time_grid(form, 48)
    ts = np.asarray(t_grid, dtype=float)
    if ts.size == 0:
        raise ValueError("empty time grid")

    sk = SpectralKernel(form)
    floor = 32.0 * sk.resolution
    C_used = C_scale * detail["C_eps"]
    c_eps = detail["c_eps"]
    lam2s = [lambda_sq(form, psi) for psi in psi_family]

    worst = math.inf
    worst_tuple = None
    asserted = 0
    unresolved = 0
    for t in ts:
        P = sk.kernel(float(t))
        base = C_used * phi.value(c_eps * float(t)) * math.exp(delta * float(t))
        for k, psi in enumerate(psi_family):
            pv = psi.psi
            drop = np.abs(pv[None, :] - pv[:, None])
            with np.errstate(over="ignore", under="ignore"):
                B = base * np.exp(-drop + (1.0 + eps) * lam2s[k] * float(t))
            resolved = (P > floor) | (B > floor)
            unresolved += int(P.size - np.count_nonzero(resolved))
            asserted += int(np.count_nonzero(resolved))
            with np.errstate(divide="ignore"):
                margins = np.log(np.maximum(B, 1e-300)) - np.log(np.maximum(P, floor))
            margins = np.where(resolved, margins, math.inf)
            j = int(np.argmin(margins))
            if margins.flat[j] < worst:
                worst = float(margins.flat[j])
                worst_tuple = (float(t), j // form.n, j % form.n, k)

    notes = [f"psi family of {len(psi_family)}, {ts.size} times, all state pairs"]
    if C_scale != 1.0:
        notes.append(f"fault injection: C_eps scaled by {C_scale:g}")
    if unresolved:
        notes.append(f"{unresolved} tuples below the resolution floor were not compared")
    return DaviesCertificate(
        epsilon=float(eps), lam=detail["lambda"],
        C_eps=C_used, c_eps=c_eps,
        admissibility={k: detail[k] for k in ("C0", "C_adm", "eta_adm", "mode", "s")},
        phi=phi, delta=float(delta),
        grid={"t_points": int(ts.size), "t_lo": float(ts[0]), "t_hi": float(ts[-1]),
              "pairs": form.n * form.n, "psi_count": len(psi_family),
              "asserted": asserted, "unresolved": unresolved},
        worst_log_margin=worst,
        passed=bool(worst >= -LOG_TOL),
        witness=None if worst >= -LOG_TOL else worst_tuple,
        premise={"budget": budget, "seed": seed,
                 "worst_margin": premise.worst_margin,
                 "statement": f"falsifier-certified at budget {budget}, seed {seed}"},
        notes=notes,
    )


# ---------------------------------------------------------------------------
# Feasible perturbations and the intrinsic distance.
# ---------------------------------------------------------------------------


def _tilt_densities(form: FiniteDirichletForm, psi: np.ndarray,
                    states=None) -> np.ndarray:
    """Per-state worst-sign tilting density; max of this is lambda_sq."""
    idx = np.arange(form.n) if states is None else np.asarray(states, dtype=int)
    out = np.empty(idx.size)
    for i, z in enumerate(idx):
        row = form.c[z]
        mask = row > 0
        d = psi[mask] - psi[z]
        ds = np.minimum(d, 300.0)
        pos = np.sum(np.expm1(ds) ** 2 * row[mask])
        neg = np.sum(np.expm1(np.minimum(-d, 300.0)) ** 2 * row[mask])
        out[i] = max(pos, neg) / (2.0 * form.m[z])
    return out


def feasible_psi_distance(form: FiniteDirichletForm, x: int, y: int,
                          budget: int = 4000, seed: int = 0
                          ) -> tuple[float, Perturbation]:
    """Certified lower bound for the largest feasible drop psi(x) - psi(y).

    Feasible means every state's tilting density stays at most 1 (so the
    overall tilt size Lambda is at most 1).  Two runs of demand-driven
    projected coordinate moves, and the better result wins:

    * from the steepest feasible graph-distance ramp, every state may be
      recruited (suits pairs where whole arcs must translate downward);
    * from the zero field with the other neighbors of x pinned at the level
      of x, so y digs a one-sided channel (suits nearby pairs, where
      spending the density budget of x on a single edge is optimal).

    In both runs y is pushed downward, and whenever a move is rejected by
    some state's density, the neighbors of that state are recruited as
    relief and chase the blocked state's current level -- high neighbors
    descend, low neighbors rise back up -- each by an exact coordinate
    line search against the local constraints.

    Only y's own moves change the objective and they only descend, so the
    result is monotone in budget.  The final perturbation is re-verified
    globally, making the lower bound rigorous; global optimality is not
    claimed.

    A disconnected pair gets the +inf sentinel with a component-indicator
    witness (zero tilting cost at any height).
    """
    x, y = int(x), int(y)
    n = form.n
    if x == y:
        return 0.0, Perturbation(np.zeros(n), name="zero")
    Dg = form.graph_distances()
    if not np.isfinite(Dg[x, y]):
        comp = np.isfinite(Dg[x]).astype(float)
        return math.inf, Perturbation(comp, name="disconnection witness")

    dvec = Dg[x]
    finite = np.isfinite(dvec)
    dzero = np.where(finite, dvec, 0.0)

    def ramp_feasible(slope: float) -> bool:
        return float(np.max(_tilt_densities(form, -slope * dzero))) <= 1.0

    lo, hi = 0.0, 1.0
    grow = 0
    while ramp_feasible(hi) and grow < 60:
        lo, hi = hi, hi * 2.0
        grow += 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if ramp_feasible(mid):
            lo = mid
        else:
            hi = mid

    neighbors = [np.flatnonzero(form.c[z] > 0) for z in range(n)]
    local = [np.concatenate(([z], neighbors[z])) for z in range(n)]
    nbr_c = [form.c[z][neighbors[z]] for z in range(n)]
    psi = np.zeros(n)

    def density_at(u: int) -> float:
        d = np.minimum(psi[neighbors[u]] - psi[u], 300.0)
        pos = float(np.sum(np.expm1(d) ** 2 * nbr_c[u]))
        neg = float(np.sum(np.expm1(np.minimum(-d, 300.0)) ** 2 * nbr_c[u]))
        return max(pos, neg) / (2.0 * form.m[u])

    def feasible_step(z: int, sign: float, h: float) -> tuple[bool, np.ndarray]:
        old = psi[z]
        psi[z] = old + sign * h
        dens = np.array([density_at(u) for u in local[z]])
        ok = float(np.max(dens)) <= 1.0
        if not ok:
            psi[z] = old
        return ok, dens

    def try_move(z: int, sign: float, limit: float | None, h0: float) -> tuple[float, list]:
        """Largest accepted step for z; ``limit`` is the level not to cross.

        A geometric scan finds a feasible step, then bisection pushes it to
        the local feasibility boundary (or to the limit level exactly), so
        each proposal is a full coordinate line search.  Returns
        (step, blockers); blockers are the states whose density rejected the
        smallest trial, empty when a step was accepted.
        """
        if limit is not None:
            h0 = min(h0, abs(limit - psi[z]))
        if h0 < 1e-15:
            return 0.0, []
        blockers: list = []
        h, h_rej = h0, None
        accepted = False
        for _ in range(90):
            if h < 1e-15:
                break
            ok, dens = feasible_step(z, sign, h)
            if ok:
                accepted = True
                break
            blockers = [int(u) for u, dv in zip(local[z], dens) if dv > 1.0]
            h_rej = h
            h *= 0.75
        if not accepted:
            return 0.0, blockers
        if h_rej is not None:
            lo = h                      # psi already advanced by lo
            hi = h_rej
            for _ in range(48):
                mid = 0.5 * (lo + hi)
                if mid in (lo, hi):
                    break
                ok, _ = feasible_step(z, sign, mid - lo)
                if ok:
                    lo = mid
                else:
                    hi = mid
            h = lo
        return h, []

    def run(start: np.ndarray, recruitable: set, sub_budget: int) -> float:
        psi[:] = start
        h_mem = np.full(n, 1.0)
        active: dict[int, int | None] = {y: None}  # node -> reference it chases
        proposals = 0
        while proposals < sub_budget:
            moved = 0.0
            size_before = len(active)
            for z in list(active):
                if proposals >= sub_budget:
                    break
                ref = active[z]
                if ref is None:
                    sign, limit = -1.0, None
                else:
                    gap = psi[ref] - psi[z]
                    if abs(gap) < 1e-13:
                        continue
                    sign, limit = math.copysign(1.0, gap), float(psi[ref])
                proposals += 1
                step, blockers = try_move(z, sign, limit, min(h_mem[z], 8.0))
                if step > 0.0:
                    moved += step
                    h_mem[z] = 2.0 * step
                else:
                    h_mem[z] = max(h_mem[z] * 0.5, 1e-13)
                    for u in blockers:
                        for v in neighbors[u]:
                            v = int(v)
                            if v != z and v in recruitable and v not in active:
                                active[v] = int(u)
            if moved < 1e-12 and len(active) == size_before:
                break
        return float(psi[x] - psi[y])

    everyone = set(range(n)) - {x}
    best = run(-lo * dzero, everyone, budget // 2)
    best_psi = psi.copy()
    pinned = everyone - {int(v) for v in neighbors[x] if v != y}
    d_pin = run(np.zeros(n), pinned, budget - budget // 2)
    if d_pin > best:
        best, best_psi = d_pin, psi.copy()

    lam = math.sqrt(lambda_sq(form, best_psi))
    if lam > 1.0 + 1e-12:
        raise RuntimeError(f"internal error: returned perturbation has size {lam:.15g} > 1")
    best_psi = best_psi - best_psi[x]
    return float(best_psi[x] - best_psi[y]), Perturbation(best_psi, name=f"feasible[{x}->{y}]")


def gaussian_envelope(cert: DaviesCertificate, d_hat: float, t: float) -> float:
    """C_eps * phi(c_eps t) * e^{delta t} * exp(-d_hat^2 / (4 (1+eps) t)).

    With d_hat = 0 this is exactly the on-diagonal envelope.  Validity for a
    pair (x, y) rests on the tilted bound holding for the scaled feasible
    perturbation mu * psi* with mu = d_hat / (2 (1+eps) t): scaling a
    feasible psi does not scale its tilting size on a jump form, so the
    scaled rays must be part of the verified family (see build_psi_family's
    ``extra``) rather than assumed.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    logv = log_gaussian_envelope(cert, d_hat, t)
    try:
        return math.exp(logv)
    except OverflowError:
        return math.inf


def log_gaussian_envelope(cert: DaviesCertificate, d_hat: float, t: float) -> float:
    """log of gaussian_envelope, safe where the envelope itself overflows."""
    if t <= 0:
        raise ValueError("t must be positive")
    return (math.log(cert.C_eps) + math.log(cert.phi.value(cert.c_eps * t))
            + cert.delta * t - (d_hat * d_hat) / (4.0 * (1.0 + cert.epsilon) * t))


def envelope_log_minimum(cert: DaviesCertificate, d_hat: float,
                         t_grid=None) -> tuple[float, float]:
    """(argmin t, min log value) of the envelope over a grid; reported, not asserted."""
    if t_grid is None:
        t_grid = np.geomspace(max(cert.phi.t_lo * 2, 1e-6), cert.phi.t_hi / 2, 400)
    vals = [log_gaussian_envelope(cert, d_hat, float(t)) for t in t_grid]
    k = int(np.argmin(vals))
    return float(t_grid[k]), float(vals[k])


def scaled_ray_family(psi_star: Perturbation, d_hat: float, eps: float,
                      t_grid) -> list[Perturbation]:
    """The scaled rays mu_t * psi* used by the two-point envelope."""
    out = []
    for t in np.asarray(t_grid, dtype=float):
        mu = d_hat / (2.0 * (1.0 + eps) * float(t))
        out.append(Perturbation(mu * psi_star.psi, name=f"ray*{mu:.4g}"))
    return out


# ---------------------------------------------------------------------------
# Volume scaling and restricted-ball bounds.
# ---------------------------------------------------------------------------


def _scaling_value(phi_scaling, r: float) -> float:
    return float(phi_scaling.value(r)) if hasattr(phi_scaling, "value") else float(phi_scaling(r))


def _scaling_inverse(phi_scaling, v: float) -> float:
    if hasattr(phi_scaling, "inverse"):
        return float(phi_scaling.inverse(v))
    lo, hi = 1e-12, 1e12
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if _scaling_value(phi_scaling, mid) < v:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


@dataclass
class BallProfile:
    """Measured volume and scaling constants of a form's embedding.

    V(x, R) / V(x, r) is pinched between C1 (R/r)^{d1} and C2 (R/r)^{d2};
    V(x, r) <= C3 V(y, r) for metrically close x, y; the scaling function
    satisfies phi(R)/phi(r) >= C_star (R/r)^{beta1}.
    """

    d1: float
    d2: float
    C1: float
    C2: float
    C3: float
    C_star: float
    beta1: float
    V: object
    phi_scaling: object

    def __post_init__(self):
        if not 0 < self.d1 <= self.d2:
            raise ValueError("need 0 < d1 <= d2")
        if self.C1 > self.C2:
            raise ValueError("need C1 <= C2")
        if self.C3 < 1:
            raise ValueError("need C3 >= 1")

    @classmethod
    def from_form(cls, form: FiniteDirichletForm, phi_scaling,
                  radii=None, centers=None) -> "BallProfile":
        dist = form.distances()

        def V(x: int, r: float) -> float:
            return float(np.sum(form.m[dist[int(x)] <= r]))

        if radii is None:
            pos = dist[dist > 0]
            r0 = float(np.min(pos))
            r1 = float(np.max(pos)) / 2.5
            radii = np.unique(np.geomspace(r0, max(r1, 2 * r0), 7))
        radii = np.asarray(radii, dtype=float)
        if centers is None:
            centers = np.unique(np.linspace(0, form.n - 1, min(form.n, 32)).astype(int))

        slopes, ratios = [], []
        for xc in centers:
            vols = np.array([V(xc, r) for r in radii])
            for i in range(len(radii)):
                for j in range(i + 1, len(radii)):
                    rr = radii[j] / radii[i]
                    ratio = vols[j] / vols[i]
                    slopes.append(math.log(ratio) / math.log(rr))
                    ratios.append((ratio, rr))
        d1, d2 = max(min(slopes), 1e-9), max(slopes)
        C1 = min(r / rr ** d1 for r, rr in ratios)
        C2 = max(r / rr ** d2 for r, rr in ratios)
        # metric closeness constant over sampled radii
        C3 = 1.0
        for r in radii:
            vs = np.array([V(xc, r) for xc in centers])
            close = dist[np.ix_(centers, centers)] < r
            if np.any(close):
                rat = vs[:, None] / vs[None, :]
                C3 = max(C3, float(np.max(np.where(close, rat, 1.0))))
        ps, pr = [], []
        for i in range(len(radii)):
            for j in range(i + 1, len(radii)):
                ratio = _scaling_value(phi_scaling, radii[j]) / _scaling_value(phi_scaling, radii[i])
                rr = radii[j] / radii[i]
                ps.append(math.log(ratio) / math.log(rr))
                pr.append((ratio, rr))
        beta1 = min(ps)
        C_star = min(r / rr ** beta1 for r, rr in pr)
        return cls(d1=d1, d2=d2, C1=min(C1, 1.0), C2=max(C2, 1.0), C3=C3,
                   C_star=min(C_star, 1.0), beta1=beta1, V=V, phi_scaling=phi_scaling)

    def verify(self, form: FiniteDirichletForm, rtol: float = 1e-9) -> list[str]:
        """Re-measure the three scaling displays against the stored constants."""
        dist = form.distances()
        pos = dist[dist > 0]
        radii = np.unique(np.geomspace(float(np.min(pos)), float(np.max(pos)) / 2.5, 7))
        centers = np.unique(np.linspace(0, form.n - 1, min(form.n, 32)).astype(int))
        bad = []
        for xc in centers:
            vols = np.array([self.V(xc, r) for r in radii])
            for i in range(len(radii)):
                for j in range(i + 1, len(radii)):
                    rr = radii[j] / radii[i]
                    ratio = vols[j] / vols[i]
                    if ratio > self.C2 * rr ** self.d2 * (1 + rtol):
                        bad.append(f"volume ratio {ratio:.6g} above C2 (R/r)^d2 at x={xc}")
                    if ratio < self.C1 * rr ** self.d1 * (1 - rtol):
                        bad.append(f"volume ratio {ratio:.6g} below C1 (R/r)^d1 at x={xc}")
        for r in radii:
            vs = np.array([self.V(xc, r) for xc in centers])
            close = dist[np.ix_(centers, centers)] < r
            if np.any(close):
                rat = np.where(close, vs[:, None] / vs[None, :], 1.0)
                if float(np.max(rat)) > self.C3 * (1 + rtol):
                    bad.append(f"close-center volume ratio {float(np.max(rat)):.6g} exceeds C3={self.C3:.6g}")
        for i in range(len(radii)):
            for j in range(i + 1, len(radii)):
                ratio = (_scaling_value(self.phi_scaling, radii[j])
                         / _scaling_value(self.phi_scaling, radii[i]))
                rr = radii[j] / radii[i]
                if ratio < self.C_star * rr ** self.beta1 * (1 - rtol):
                    bad.append("scaling ratio below C_star (R/r)^beta1")
        return bad


def beta_profile(bp: BallProfile, R: float, r: float, x0: int = 0) -> float:
    """(1/V(x0,R)) * max{(R/phi^{-1}(r))^{d2}, (R/phi^{-1}(r))^{d1}}."""
    if r <= 0 or R <= 0:
        raise ValueError("r and R must be positive")
    q = R / _scaling_inverse(bp.phi_scaling, r)
    return (max(q ** bp.d2, q ** bp.d1)) / float(bp.V(x0, R))


def beta_doubling_constant(bp: BallProfile) -> tuple[float, float]:
    """(multiplier, exponent) with beta(s)/beta(t) <= mult * (t/s)^expnt for s <= t."""
    return bp.C_star ** (-1.0 / bp.beta1), bp.d2 / bp.beta1


def beta_integral_constant(bp: BallProfile) -> float:
    """C_star^{-1/d2} / (1 - 2^{-beta1/d2}): tail-integral comparison constant."""
    return bp.C_star ** (-1.0 / bp.d2) / (1.0 - 2.0 ** (-bp.beta1 / bp.d2))


@dataclass
class BallCertificate:
    """Premise constants for restricted-ball verification.

    ``C_eps`` starts unset; the first ball fits it (1.05 times the observed
    need) and every later ball must pass with that same value, which is what
    makes the check a uniformity statement rather than a tautology.
    """

    eps: float
    c_premise: float
    C_hat: float
    premise_grid: dict
    C_eps: float | None = None
    notes: list = field(default_factory=list)


def ball_certificate(form: FiniteDirichletForm, bp: BallProfile, eps: float,
                     t_grid=None) -> BallCertificate:
    """Fit and verify the on-diagonal volume premise p(t,x,x) <= c / V(x, phi^{-1}(t))."""
    if t_grid is None:
        t_grid = default_time_grid(form, 24)
    ts = np.asarray(t_grid, dtype=float)
    sk = SpectralKernel(form)
    need = 0.0
    for t in ts:
        diag = np.diag(sk.kernel(float(t)))
        s = _scaling_inverse(bp.phi_scaling, float(t))
        vols = np.array([bp.V(x, s) for x in range(form.n)])
        need = max(need, float(np.max(diag * vols)))
    c = need
    C_hat = c * bp.C3 * max(1.0 / bp.C1, bp.C2)
    return BallCertificate(
        eps=float(eps), c_premise=c, C_hat=C_hat,
        premise_grid={"t_lo": float(ts[0]), "t_hi": float(ts[-1]), "points": int(ts.size)},
    )


@dataclass
class BallBoundReport:
    x0: int
    R: float
    ball_size: int
    passed: bool
    worst_log_margin: float
    C_eps_used: float
    C_eps_needed: float
    fitted_here: bool
    unresolved: int
    witness: tuple | None
    notes: list = field(default_factory=list)


def dirichlet_ball_bound(form: FiniteDirichletForm, bp: BallProfile, x0: int,
                         R: float, cert: BallCertificate, psi_family=None,
                         t_grid=None) -> BallBoundReport:
    """Exact restricted kernel against C_eps * beta_{x0,R}(t) * tilt factor.

    Gates, in order: the volume scaling displays re-verify against the
    stored constants (a corrupted profile fails here, before any kernel
    work); the on-diagonal volume premise re-verifies on the grid.  Then
    the restriction absorbed outside the metric ball B(x0, R) is compared
    tuple by tuple.  The first call fits C_eps; later calls reuse it.
    """
    bad = bp.verify(form)
    if bad:
        raise PremiseNotCertified("volume scaling constants failed re-verification: "
                                  + "; ".join(bad[:3]))
    if t_grid is None:
        t_grid = default_time_grid(form, 24)
    ts = np.asarray(t_grid, dtype=float)

    sk_full = SpectralKernel(form)
    for t in ts:
        diag = np.diag(sk_full.kernel(float(t)))
        s = _scaling_inverse(bp.phi_scaling, float(t))
        for x in range(form.n):
            if diag[x] > cert.c_premise / bp.V(x, s) * (1 + 1e-9):
                raise PremiseNotCertified(
                    f"on-diagonal volume premise fails at t={t:g}, state {x}: "
                    f"{diag[x]:.6g} > {cert.c_premise / bp.V(x, s):.6g}"
                )

    dist = form.distances()
    ball = np.flatnonzero(dist[int(x0)] < R)
    if ball.size == 0:
        raise ValueError("empty ball")
    sub = part_form(form, ball)
    sk = SpectralKernel(sub)
    floor = 32.0 * sk.resolution
    if psi_family is None:
        psi_family = build_psi_family(form)
    lam2s = [lambda_sq(form, psi) for psi in psi_family]

    need = 0.0
    rows = []
    unresolved = 0
    for t in ts:
        P = sk.kernel(float(t))
        beta_t = beta_profile(bp, R, float(t), x0=int(x0))
        for k, psi in enumerate(psi_family):
            pv = psi.psi[ball]
            drop = np.abs(pv[None, :] - pv[:, None])
            with np.errstate(over="ignore", under="ignore"):
                shape = beta_t * np.exp(-drop + (1.0 + cert.eps) * lam2s[k] * float(t))
            resolved = P > floor
            unresolved += int(P.size - np.count_nonzero(resolved))
            ratio = np.where(resolved, P / np.maximum(shape, 1e-300), 0.0)
            need = max(need, float(np.max(ratio)))
            rows.append((float(t), k, float(np.max(ratio))))

    fitted = False
    if cert.C_eps is None:
        cert.C_eps = 1.05 * need
        cert.notes.append(f"C_eps fitted on ball (x0={x0}, R={R:g}): {cert.C_eps:.6g}")
        fitted = True
    worst = math.log(cert.C_eps) - math.log(need) if need > 0 else math.inf
    witness = None
    if worst < -LOG_TOL:
        t_bad, k_bad, _ = max(rows, key=lambda rec: rec[2])
        witness = (t_bad, int(x0), float(R), k_bad)
    return BallBoundReport(
        x0=int(x0), R=float(R), ball_size=int(ball.size),
        passed=bool(worst >= -LOG_TOL),
        worst_log_margin=float(worst),
        C_eps_used=float(cert.C_eps), C_eps_needed=float(need),
        fitted_here=fitted, unresolved=unresolved, witness=witness,
        notes=[f"{ts.size} times, {len(psi_family)} perturbations, "
               f"{ball.size}^2 pairs per tuple"],
    )


# ---------------------------------------------------------------------------
# Heavy-tailed lattice pipeline.
# ---------------------------------------------------------------------------


def stable_like_Phi(phi_scaling, r: float) -> float:
    """r^2 / (2 * integral_0^r s/phi(s) ds) with analytic small-s closure.

    The scaling must keep s/phi(s) integrable at zero (local growth slower
    than s^2); otherwise the construction is rejected.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    from scipy.integrate import quad

    a = r * 1e-12
    fa, f2a = _scaling_value(phi_scaling, a), _scaling_value(phi_scaling, 2 * a)
    alpha0 = math.log(f2a / fa) / math.log(2.0)
    if alpha0 >= 2.0 - 1e-6:
        raise ProfileError("scaling not admissible: s/phi(s) diverges at zero")
    head = a * a / (fa * (2.0 - alpha0))
    total = head
    lo = a
    while lo < r * 0.9999999999:
        hi = min(lo * 10.0, r)
        val, _ = quad(lambda u: math.exp(2.0 * u) / _scaling_value(phi_scaling, math.exp(u)),
                      math.log(lo), math.log(hi), epsrel=1e-11, limit=200)
        total += val
        lo = hi
    return r * r / (2.0 * total)


def _phi_cap_inverse(phi_scaling, t: float, lo: float = 1e-9, hi: float = 1e9) -> float:
    """Inverse of r -> stable_like_Phi(phi_scaling, r) by bisection."""
    for _ in range(120):
        mid = math.sqrt(lo * hi)
        if stable_like_Phi(phi_scaling, mid) < t:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


class _PhiCache:
    """Log-log table of r -> Phi(r) built from one cumulative integral sweep.

    The rate closure and the profile reconstruction evaluate Phi thousands of
    times across many decades; a fresh quadrature per call would dominate the
    pipeline.  The table shares a single running integral of s/phi(s), so node
    values match the direct computation to quadrature accuracy, and log-log
    interpolation is exact for power scalings.  Ends extrapolate with the
    boundary slopes.
    """

    def __init__(self, phi_scaling, r_lo: float = 1e-12, r_hi: float = 1e12,
                 per_decade: int = 16):
        from scipy.integrate import quad

        decades = math.log10(r_hi / r_lo)
        grid = np.geomspace(r_lo, r_hi, int(decades * per_decade) + 1)
        a = grid[0]
        fa = _scaling_value(phi_scaling, a)
        alpha0 = math.log(_scaling_value(phi_scaling, 2 * a) / fa) / math.log(2.0)
        if alpha0 >= 2.0 - 1e-6:
            raise ProfileError("scaling not admissible: s/phi(s) diverges at zero")
        acc = a * a / (fa * (2.0 - alpha0))
        integ = [acc]
        for lo, hi in zip(grid[:-1], grid[1:]):
            val, _ = quad(lambda u: math.exp(2.0 * u) / _scaling_value(phi_scaling, math.exp(u)),
                          math.log(lo), math.log(hi), epsrel=1e-11, limit=200)
            acc += val
            integ.append(acc)
        phi_vals = grid * grid / (2.0 * np.asarray(integ))
        if np.any(np.diff(np.log(phi_vals)) <= 0):
            raise ProfileError("Phi table is not strictly increasing")
        self.logr = np.log(grid)
        self.logp = np.log(phi_vals)

    def _interp(self, xs, x, y) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        out = np.interp(xs, x, y)
        lo_slope = (y[1] - y[0]) / (x[1] - x[0])
        hi_slope = (y[-1] - y[-2]) / (x[-1] - x[-2])
        out = np.where(xs < x[0], y[0] + (xs - x[0]) * lo_slope, out)
        out = np.where(xs > x[-1], y[-1] + (xs - x[-1]) * hi_slope, out)
        return out

    def value(self, r: float) -> float:
        return float(np.exp(self._interp(math.log(r), self.logr, self.logp))[0])

    def inverse(self, t: float) -> float:
        return float(np.exp(self._interp(math.log(t), self.logp, self.logr))[0])


@dataclass
class PipelineReport:
    gamma: float
    beta1: float
    c0: float
    delta0: float
    constants: dict
    c11: float
    per_pair: list
    diagonal_rows: list
    stability_ratio: float
    worst_theorem_margin: float
    worst_chain_margin: float
    worst_additive_margin: float
    unresolved: int
    slopes: dict
    passed: bool
    notes: list = field(default_factory=list)
    csv_rows: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma, "beta1": self.beta1, "c0": self.c0,
            "delta0": self.delta0, "constants": dict(self.constants),
            "c11": self.c11, "stability_ratio": self.stability_ratio,
            "worst_theorem_margin": self.worst_theorem_margin,
            "worst_chain_margin": self.worst_chain_margin,
            "worst_additive_margin": self.worst_additive_margin,
            "unresolved": self.unresolved, "slopes": dict(self.slopes),
            "passed": self.passed, "notes": list(self.notes),
            "per_pair": self.per_pair, "diagonal_rows": self.diagonal_rows,
        }


def _pairwise_scaling_constants(phi_scaling, r_lo, r_hi) -> tuple[float, float, float, float]:
    rs = np.geomspace(r_lo, r_hi, 17)
    slopes, ratios = [], []
    for i in range(len(rs)):
        for j in range(i + 1, len(rs)):
            ratio = _scaling_value(phi_scaling, rs[j]) / _scaling_value(phi_scaling, rs[i])
            rr = rs[j] / rs[i]
            slopes.append(math.log(ratio) / math.log(rr))
            ratios.append((ratio, rr))
    beta1, beta2 = min(slopes), max(slopes)
    C_L = min(r / rr ** beta1 for r, rr in ratios)
    C_U = max(r / rr ** beta2 for r, rr in ratios)
    return min(C_L, 1.0), beta1, max(C_U, 1.0), beta2


def stable_like_pipeline(n: int, d: int, phi_scaling, c_bound: float = 1.0,
                         eps: float = 1.0, seed: int = 0, t_fractions=None,
                         pair_list=None, s: float = 0.5, budget: int = 400
                         ) -> PipelineReport:
    """End-to-end envelope check for a long-range lattice chain.

    Builds the chain with jump weights within [1/c_bound, c_bound] of the
    reference 1/(|x-y|^d phi(|x-y|)), certifies the rate inequality once on
    the untruncated form (truncation only adds a computable zero-order term,
    so no re-certification per radius is needed), then for each pair with
    t <= Phi(|x-y|):

    * truncation radius rho = gamma |x-y| with gamma = beta1/(3(d+beta1)),
    * cone perturbation psi(z) = (slope/3)(|z-x| /\\ |x-y|) with the slope
      chosen from log(Phi(|x-y|)/t),
    * tilted bound for the truncated kernel with explicit constants,
    * exact additive long-jump comparison p <= p_rho + t * sup_far j,

    and fits a single c11 against min{(Phi^{-1}(t))^{-d}, t/(|x-y|^d Phi(|x-y|))}.
    Pairs with t > Phi(|x-y|) take the on-diagonal branch automatically.
    """
    if c_bound < 1.0:
        raise ValueError("c_bound must be >= 1")
    form = stable_like(n, d, phi_scaling if not hasattr(phi_scaling, "value")
                       else (lambda r: _scaling_value(phi_scaling, r)),
                       c_lower=1.0 / c_bound, c_upper=c_bound, seed=seed)
    dist = form.distances()
    pos = dist[dist > 0]
    C_L, beta1, C_U, beta2 = _pairwise_scaling_constants(
        phi_scaling, float(np.min(pos)) / 4.0, float(np.max(pos)))
    if not 0 < beta1 < 2:
        raise ProfileError(f"scaling exponent beta1={beta1:.4g} outside (0, 2)")
    gamma = beta1 / (3.0 * (d + beta1))

    cache = _PhiCache(phi_scaling)

    def Phi_at(r: float) -> float:
        return cache.value(r)

    # rate inequality certified once, on the untruncated form
    c0 = 1.0

    def theta_fn(r):
        rr = np.asarray(r, dtype=float)
        scalar = rr.ndim == 0
        rr = np.atleast_1d(rr)
        out = np.array([c0 * ri / Phi_at(ri ** (-1.0 / d)) for ri in rr])
        return float(out[0]) if scalar else out

    theta = NashRate(theta_fn, kind="stable", r_lo=1e-5, r_hi=1e4,
                     describe=f"c0*r/Phi(r^(-1/{d}))", check=False)
    delta0 = fit_delta(form, theta, budget=budget, seed=seed)

    phi_theta = phi_from_theta(theta, t_lo=1e-6, t_hi=1e6)
    detail = constants_detail(phi_theta, eps, s, "jump")
    C_eps, c_eps = detail["C_eps"], detail["c_eps"]

    sk = SpectralKernel(form)
    floor = 32.0 * sk.resolution

    if pair_list is None:
        x0 = max(0, n // 2 - 28) if d == 1 else 0
        offs = [3, 6, 12, 24, 30]
        pair_list = [(x0, x0 + o) for o in offs if x0 + o < n]
    if t_fractions is None:
        t_fractions = (0.02, 0.05, 0.12, 0.3, 0.6, 0.95, 1.5)

    worst_theorem = math.inf
    worst_chain = math.inf
    worst_additive = math.inf
    unresolved = 0
    per_pair = []
    csv_rows = []
    c6_measured = 0.0
    c6_analytic = 0.0

    for (px, py) in pair_list:
        r_xy = float(dist[px, py])
        Phi_r = Phi_at(r_xy)
        rho = gamma * r_xy
        trunc_form, tail = truncate(form, rho)
        far = dist > rho
        j_max = float(np.max(np.where(far, form.c, 0.0)
                             / (form.m[:, None] * form.m[None, :])))
        sk_rho = SpectralKernel(trunc_form)
        cone_base = np.minimum(dist[px], r_xy)
        rows = []
        pair_need = 0.0
        for fr in t_fractions:
            t = fr * Phi_r
            exact = float(sk.kernel(t)[px, py])
            env = min(cache.inverse(t) ** (-d),
                      t / (r_xy ** d * Phi_r))
            branch = "offdiag" if t <= Phi_r else "ondiag"
            row = {"t": t, "fraction": fr, "exact": exact, "envelope": env,
                   "branch": branch}
            if exact > floor:
                pair_need = max(pair_need, exact / env)
            else:
                unresolved += 1
            if t <= Phi_r:
                slope = math.log(Phi_r / t) / (gamma * r_xy) if t < Phi_r else 0.0
                psi = (slope / 3.0) * cone_base
                g_plus = gamma_rho(form, psi, rho)
                g_minus = gamma_rho(form, -psi, rho)
                lam2_rho = max(float(np.max(g_plus)), float(np.max(g_minus)))
                if slope > 0 and rho > 0:
                    c6_measured = max(c6_measured,
                                      lam2_rho * Phi_at(rho) * math.exp(-slope * rho))
                    sup_short = 0.0
                    short = (dist <= rho) & (dist > 0)
                    if np.any(short):
                        contrib = np.where(short, dist ** 2 * form.c, 0.0)
                        sup_short = float(np.max(contrib.sum(axis=1) / form.m))
                    c6_analytic = max(c6_analytic,
                                      (9.0 / 2.0) * sup_short / (rho ** 2 / Phi_at(rho)))
                p_rho = float(sk_rho.kernel(t)[px, py])
                drop = abs(float(psi[py]) - float(psi[px]))
                bound_rho = (C_eps * phi_theta.value(c_eps * t)
                             * math.exp((delta0 + tail) * t)
                             * math.exp(-drop + (1.0 + eps) * lam2_rho * t))
                chain = bound_rho + t * j_max
                row.update({"slope": slope, "lam2_rho": lam2_rho, "p_rho": p_rho,
                            "bound_rho": bound_rho, "chain": chain,
                            "tail": tail, "j_max": j_max})
                if p_rho > floor:
                    worst_theorem = min(worst_theorem,
                                        math.log(bound_rho) - math.log(p_rho))
                else:
                    unresolved += 1
                if exact > floor:
                    worst_chain = min(worst_chain,
                                      math.log(chain) - math.log(exact))
                    add_rhs = max(p_rho, 0.0) + t * j_max
                    worst_additive = min(worst_additive,
                                         (add_rhs - exact) / max(exact, add_rhs))
                csv_rows.append((t, px, py, exact, chain,
                                 math.log(chain) - math.log(max(exact, floor))))
            rows.append(row)
        per_pair.append({"x": px, "y": py, "dist": r_xy, "Phi": Phi_r,
                         "rho": rho, "needed_c": pair_need, "rows": rows})

    # diagonal branch of the envelope
    diag_rows = []
    t_diag = np.geomspace(0.5, 10.0, 10)
    diag_need = 0.0
    for t in t_diag:
        dmax = float(np.max(np.diag(sk.kernel(float(t)))))
        env = cache.inverse(float(t)) ** (-d)
        diag_need = max(diag_need, dmax / env)
        diag_rows.append({"t": float(t), "diag_sup": dmax, "envelope": env})

    needs = [pp["needed_c"] for pp in per_pair if pp["needed_c"] > 0]
    c11 = max(max(needs), diag_need)
    stability = max(needs) / min(needs)

    # envelope shape slopes: diagonal decay in t, off-diagonal growth in t
    logt = np.log([row["t"] for row in diag_rows])
    logd = np.log([row["diag_sup"] for row in diag_rows])
    slope_diag = float(np.polyfit(logt, logd, 1)[0])
    far_pair = per_pair[-2] if len(per_pair) > 1 else per_pair[-1]
    pts = [(row["t"], row["exact"]) for row in far_pair["rows"]
           if row["branch"] == "offdiag" and row["exact"] > floor and row["fraction"] <= 0.3]
    slope_off = float("nan")
    if len(pts) >= 2:
        lt = np.log([p[0] for p in pts])
        lp = np.log([p[1] for p in pts])
        slope_off = float(np.polyfit(lt, lp, 1)[0])

    passed = (worst_theorem >= -LOG_TOL and worst_chain >= -LOG_TOL
              and worst_additive >= -1e-9 and stability <= 3.0)
    return PipelineReport(
        gamma=gamma, beta1=beta1, c0=c0, delta0=delta0,
        constants={"C_eps": C_eps, "c_eps": c_eps, "lambda": detail["lambda"],
                   "eps": eps, "s": s, "C_L": C_L, "C_U": C_U, "beta2": beta2,
                   "c6_measured": c6_measured, "c6_analytic": c6_analytic,
                   "c_bound": c_bound},
        c11=float(c11), per_pair=per_pair, diagonal_rows=diag_rows,
        stability_ratio=float(stability),
        worst_theorem_margin=float(worst_theorem),
        worst_chain_margin=float(worst_chain),
        worst_additive_margin=float(worst_additive),
        unresolved=int(unresolved),
        slopes={"diagonal": slope_diag, "offdiagonal": slope_off},
        passed=bool(passed),
        notes=["long-jump comparison is the exact finite additive bound "
               "p <= p_rho + t * sup_far j, not an asymptotic lemma",
               "rate certificate transfers to truncated forms by adding the "
               "tail constant to the zero-order term"],
        csv_rows=csv_rows,
    )
