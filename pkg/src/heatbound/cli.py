"""Command-line surface.

Every command emits a deterministic report: identical inputs and seed give
an identical canonical hash (the timestamp field is excluded from hashing).
Exit codes separate the failure kinds:

    0   all asserted inequalities hold
    2   could not parse inputs (grammar, model spec, grids, arguments)
    3   a premise gate refused to certify (nothing was asserted)
    4   an asserted inequality failed; the report carries the witness

Model specs use the compact constructor grammar, e.g. ``cycle(64)``,
``path_killed(64)``, ``torus(128,1)``, ``stable_like(256,1)`` (the latter
needs ``--scaling pow:ALPHA``).  Profile expressions use the multiplicative
grammar, e.g. ``pow(-0.5)`` or ``pow(-1.5)*expg(1,1)``.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .davies import (
    build_psi_family, constants_detail, davies_constants, davies_lambda,
    stable_like_pipeline, verify_offdiag,
)
from .forms import FormError, lambda_sq
from .grammar import ProfileParseError, parse_profile, parse_rate
from .models import PowerScaling, build_named
from .nash_verify import PremiseNotCertified, falsify_nash, fit_delta
from .profiles import DomainError, NashRate, ProfileError, theta_from_phi, theta_tilde
from .reports import (
    check_report_hash, envelope_csv, make_report, profile_csv, read_report,
    report_hash, write_report,
)
from .semigroup import SpectralKernel

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_PREMISE = 3
EXIT_FAIL = 4


@dataclass
class RunConfig:
    """Parsed invocation: what ran, with which inputs, grids, and outputs."""

    command: str
    inputs: dict
    seed: int = 0
    grids: dict = field(default_factory=dict)
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        for name, grid in self.grids.items():
            if len(grid) == 0:
                raise ValueError(f"grid {name!r} is empty")

    def as_dict(self) -> dict:
        # out/format are emission plumbing, hashed separately (see reports)
        return {
            "command": self.command,
            "inputs": self.inputs,
            "seed": int(self.seed),
            "grids": {k: [float(v) for v in g] for k, g in self.grids.items()},
        }

    def emission(self) -> dict:
        return {"out": self.out, "format": self.format}


def _grid(text: str) -> np.ndarray:
    """LO:HI:N log-spaced grid; N >= 1, LO, HI > 0."""
    try:
        lo_s, hi_s, n_s = text.split(":")
        lo, hi, n = float(lo_s), float(hi_s), int(n_s)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"grid must be LO:HI:N, got {text!r}") from None
    if n < 1 or lo <= 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad grid bounds {text!r}")
    return np.geomspace(lo, hi, n)


def _pairs(text: str) -> list[tuple[int, int]]:
    out = []
    for part in text.split(","):
        try:
            x_s, y_s = part.split(":")
            out.append((int(x_s), int(y_s)))
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"pairs must be X:Y[,X:Y...], got {part!r}") from None
    return out


def _scaling(text: str) -> PowerScaling:
    if not text.startswith("pow:"):
        raise argparse.ArgumentTypeError(
            f"scaling must be pow:BETA, got {text!r}")
    try:
        return PowerScaling(float(text[4:]))
    except (ValueError, FormError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _emit(report: dict, cfg: RunConfig, csv_text: str | None = None) -> None:
    if cfg.out:
        write_report(report, cfg.out)
        if csv_text is not None:
            csv_path = cfg.out.rsplit(".", 1)[0] + ".csv"
            with open(csv_path, "w", encoding="ascii") as fh:
                fh.write(csv_text)
    else:
        if cfg.format == "csv" and csv_text is not None:
            sys.stdout.write(csv_text)
        else:
            from .reports import canonical_json
            sys.stdout.write(canonical_json(report) + "\n")


def _theta_from_spec(spec: str):
    """'from-phi:EXPR' derives the rate from a profile; 'expr:EXPR' is direct."""
    if spec.startswith("from-phi:"):
        phi = parse_profile(spec[len("from-phi:"):])
        return NashRate.from_profile(phi), {"phi": spec[len("from-phi:"):]}
    if spec.startswith("expr:"):
        return parse_rate(spec[len("expr:"):]), {"rate": spec[len("expr:"):]}
    raise ProfileParseError("theta spec must start with 'from-phi:' or 'expr:'",
                            spec, 0)


def cmd_profile(args) -> int:
    phi = parse_profile(args.spec)
    cfg = RunConfig("profile", {"spec": args.spec}, seed=args.seed,
                    grids={"r": args.grid}, out=args.out, format=args.format)
    rows, skipped = [], 0
    for r in args.grid:
        r = float(r)
        vals = (r, phi.value(r), theta_from_phi(phi, r), theta_tilde(phi, r))
        if all(math.isfinite(v) for v in vals):
            rows.append(vals)
        else:
            skipped += 1
    if not rows:
        print("error: no finite rows on this grid", file=sys.stderr)
        return EXIT_PARSE
    report = make_report("profile", cfg.as_dict(), cfg.seed,
                         {"grid_points": len(args.grid)},
                         {"rows": [list(r) for r in rows],
                          "skipped_nonfinite": skipped},
                         __version__, emission=cfg.emission())
    _emit(report, cfg, profile_csv(rows))
    return EXIT_OK


def cmd_model(args) -> int:
    form = build_named(args.spec, phi_scaling=args.scaling)
    cfg = RunConfig("model", {"spec": args.spec,
                              "scaling": repr(args.scaling) if args.scaling else None},
                    seed=args.seed, out=args.out, format=args.format)
    sk = SpectralKernel(form)
    pos = sk.mu[sk.mu > 1e-12 * max(1.0, float(sk.mu[-1]))]
    dist = form.distances()
    finite = dist[np.isfinite(dist)]
    results = {
        "n": int(form.n),
        "total_mass": float(np.sum(form.m)),
        "edges": int(np.count_nonzero(form.c) // 2),
        "killing_total": float(np.sum(form.kill)),
        "spectral_gap": float(pos[0]) if pos.size else 0.0,
        "diameter": float(np.max(finite)),
        "kernel_resolution": float(sk.resolution),
    }
    report = make_report("model", cfg.as_dict(), cfg.seed, {}, results,
                     __version__, emission=cfg.emission())
    _emit(report, cfg)
    return EXIT_OK


def cmd_verify(args) -> int:
    form = build_named(args.model, phi_scaling=args.scaling)
    theta, theta_desc = _theta_from_spec(args.theta)
    cfg = RunConfig("verify", {"model": args.model, "theta": args.theta,
                               "delta": args.delta, "budget": args.budget},
                    seed=args.seed, out=args.out, format=args.format)
    rep = falsify_nash(form, theta, delta=args.delta,
                       budget=args.budget, seed=args.seed)
    results = rep.as_dict()
    results["theta"] = theta_desc
    report = make_report("verify", cfg.as_dict(), cfg.seed,
                         rep.constants, results, __version__,
                         emission=cfg.emission())
    _emit(report, cfg)
    print(f"verify {args.model}: worst margin {rep.worst_margin:.6g} "
          f"({'PASS' if rep.certified else 'FAIL'})", file=sys.stderr)
    return EXIT_OK if rep.certified else EXIT_FAIL


def cmd_envelope(args) -> int:
    form = build_named(args.model, phi_scaling=args.scaling)
    phi = parse_profile(args.phi)
    if args.delta == "fit":
        delta = fit_delta(form, NashRate.from_profile(phi),
                          budget=args.budget, seed=args.seed)
    else:
        delta = float(args.delta)
    cfg = RunConfig("envelope", {"model": args.model, "phi": args.phi,
                                 "delta": delta, "eps": args.eps, "s": args.s,
                                 "budget": args.budget},
                    seed=args.seed, grids={"t": args.grid},
                    out=args.out, format=args.format)
    cert = verify_offdiag(form, phi, delta, eps=args.eps, s=args.s,
                          t_grid=args.grid, budget=args.budget, seed=args.seed)
    family = build_psi_family(form)
    lam2 = [lambda_sq(form, psi) for psi in family]
    sk = SpectralKernel(form)
    floor = 32.0 * sk.resolution
    pairs = args.pairs if args.pairs else [(0, form.n // 2)]
    rows = []
    for t in args.grid:
        t = float(t)
        P = sk.kernel(t)
        base = cert.C_eps * phi.value(cert.c_eps * t) * math.exp(delta * t)
        for (x, y) in pairs:
            bound = min(
                base * math.exp(-abs(float(psi.psi[x] - psi.psi[y]))
                                + (1.0 + args.eps) * l2 * t)
                for psi, l2 in zip(family, lam2))
            exact = float(P[x, y])
            rows.append((t, x, y, exact, bound,
                         math.log(bound) - math.log(max(exact, floor))))
    results = cert.as_dict()
    results["pair_rows"] = [list(r) for r in rows]
    report = make_report("envelope", cfg.as_dict(), cfg.seed,
                         {"C_eps": cert.C_eps, "c_eps": cert.c_eps,
                          "lambda": cert.lam, "delta": delta},
                         results, __version__, emission=cfg.emission())
    _emit(report, cfg, envelope_csv(rows))
    print(f"envelope {args.model}: worst log-margin {cert.worst_log_margin:.6g} "
          f"({'PASS' if cert.passed else 'FAIL'})", file=sys.stderr)
    return EXIT_OK if cert.passed else EXIT_FAIL


def cmd_constants(args) -> int:
    phi = parse_profile(args.phi)
    detail = constants_detail(phi, args.eps, args.s, args.mode)
    C_eps, c_eps = davies_constants(phi, args.eps, args.s, mode=args.mode)
    cfg = RunConfig("constants", {"phi": args.phi, "eps": args.eps,
                                  "s": args.s, "mode": args.mode},
                    seed=args.seed, out=args.out, format=args.format)
    print(f"lambda={detail['lambda']}  C_eps={C_eps:.6g}  c_eps={c_eps:.6g}")
    if args.out:
        report = make_report("constants", cfg.as_dict(), cfg.seed, detail,
                             {"C_eps": C_eps, "c_eps": c_eps}, __version__,
                             emission=cfg.emission())
        _emit(report, cfg)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    if args.kind != "stable-like":
        print(f"error: unknown pipeline {args.kind!r}", file=sys.stderr)
        return EXIT_PARSE
    scaling = PowerScaling(args.alpha)
    cfg = RunConfig("pipeline", {"kind": args.kind, "n": args.n, "d": args.d,
                                 "alpha": args.alpha, "c_bound": args.c_bound,
                                 "eps": args.eps},
                    seed=args.seed, out=args.out, format=args.format)
    rep = stable_like_pipeline(args.n, args.d, scaling, c_bound=args.c_bound,
                               eps=args.eps, seed=args.seed)
    report = make_report("pipeline", cfg.as_dict(), cfg.seed,
                         {"c11": rep.c11, **rep.constants},
                         rep.as_dict(), __version__, emission=cfg.emission())
    _emit(report, cfg, envelope_csv(rep.csv_rows))
    print(f"pipeline stable-like n={args.n} d={args.d}: c11={rep.c11:.6g} "
          f"stability={rep.stability_ratio:.4g} "
          f"({'PASS' if rep.passed else 'FAIL'})", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_report(args) -> int:
    report = read_report(args.path)
    ok = check_report_hash(report)
    print(f"{report_hash(report)}  {args.path}  "
          f"({'hash OK' if ok else 'HASH MISMATCH'})")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="heatbound",
        description="Exact finite-chain laboratory for Nash inequalities "
                    "and heat-kernel upper bounds.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="write JSON report here")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("profile", parents=[common],
                       help="tabulate phi, theta, theta_tilde on a grid")
    p.add_argument("spec", help="profile expression, e.g. pow(-0.5)")
    p.add_argument("--grid", type=_grid, default=_grid("1e-3:1e3:61"))
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("model", parents=[common],
                       help="build a named model and summarize it")
    p.add_argument("spec", help="model spec, e.g. cycle(64)")
    p.add_argument("--scaling", type=_scaling, default=None)
    p.set_defaults(fn=cmd_model)

    p = sub.add_parser("verify", parents=[common],
                       help="run the randomized rate-inequality falsifier")
    p.add_argument("--model", required=True)
    p.add_argument("--theta", required=True,
                   help="'from-phi:EXPR' or 'expr:EXPR'")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--scaling", type=_scaling, default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("envelope", parents=[common],
                       help="certify tilted off-diagonal bounds and tabulate pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--phi", required=True, help="profile expression")
    p.add_argument("--delta", default="fit",
                   help="zero-order constant, or 'fit' to calibrate")
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--grid", type=_grid, default=_grid("0.01:5:48"))
    p.add_argument("--pairs", type=_pairs, default=None)
    p.add_argument("--budget", type=int, default=400)
    p.add_argument("--scaling", type=_scaling, default=None)
    p.set_defaults(fn=cmd_envelope)

    p = sub.add_parser("constants", parents=[common],
                       help="print the off-diagonal constant chain")
    p.add_argument("--phi", required=True)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--mode", choices=("jump", "local"), default="jump")
    p.set_defaults(fn=cmd_constants)

    p = sub.add_parser("pipeline", parents=[common],
                       help="run a full model pipeline")
    p.add_argument("kind", choices=("stable-like",))
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--c-bound", type=float, default=1.0, dest="c_bound")
    p.add_argument("--eps", type=float, default=1.0)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("report", help="recompute and check a report hash")
    p.add_argument("path")
    p.set_defaults(fn=cmd_report)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ProfileParseError, FormError, DomainError, ProfileError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except PremiseNotCertified as exc:
        print(f"premise not certified: {exc}", file=sys.stderr)
        return EXIT_PREMISE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
