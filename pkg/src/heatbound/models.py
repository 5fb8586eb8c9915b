"""Built-in chain generators and the JSON model format.

A model document is a plain dict with keys

    states : int
    m      : list of positive weights
    edges  : list of [x, y, c] with x < y and c > 0
    coords : optional list of coordinate rows

The generators return `FiniteDirichletForm` objects directly; `to_model` /
`from_model` convert between forms and documents.  Keeping file handling here
leaves the form layer free of formats.
"""

from __future__ import annotations

import re

import numpy as np

from .forms import FiniteDirichletForm, FormError

__all__ = [
    "cycle", "path", "torus", "two_state", "stable_like",
    "PowerScaling", "to_model", "from_model", "build_named",
]


class PowerScaling:
    """Scaling function r -> r^beta with an exact inverse, 0 < beta < 2."""

    def __init__(self, beta: float):
        if not 0 < beta < 2:
            raise FormError("scaling exponent must lie in (0, 2)")
        self.beta = float(beta)

    def __call__(self, r: float) -> float:
        return float(r) ** self.beta

    def value(self, r: float) -> float:
        return float(r) ** self.beta

    def inverse(self, t: float) -> float:
        return float(t) ** (1.0 / self.beta)

    def __repr__(self) -> str:
        return f"PowerScaling({self.beta:g})"


def cycle(n: int) -> FiniteDirichletForm:
    """Nearest-neighbour cycle on n states, unit weights and conductances."""
    if n < 3:
        raise FormError("cycle needs n >= 3")
    c = np.zeros((n, n))
    idx = np.arange(n)
    c[idx, (idx + 1) % n] = 1.0
    c[(idx + 1) % n, idx] = 1.0
    ang = 2 * np.pi * idx / n
    # embed on a circle with unit edge length so metric ~ graph distance locally
    rad = 0.5 / np.sin(np.pi / n)
    coords = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    return FiniteDirichletForm(m=np.ones(n), c=c, coords=coords)


def path(n: int, killed: bool = False) -> FiniteDirichletForm:
    """Nearest-neighbour segment on n states; ``killed`` absorbs at both ends.

    The killed variant is the segment viewed inside an infinite line: the two
    end states carry unit killing mass, so the spectrum matches the interior
    block of a longer path.
    """
    if n < 2:
        raise FormError("path needs n >= 2")
    c = np.zeros((n, n))
    idx = np.arange(n - 1)
    c[idx, idx + 1] = 1.0
    c[idx + 1, idx] = 1.0
    kill = np.zeros(n)
    if killed:
        kill[0] = 1.0
        kill[-1] = 1.0
    coords = np.arange(n, dtype=float)[:, None]
    return FiniteDirichletForm(m=np.ones(n), c=c, coords=coords, kill=kill)


def torus(n: int, d: int) -> FiniteDirichletForm:
    """Nearest-neighbour torus with n points per side in d dimensions."""
    if n < 3 or d < 1:
        raise FormError("torus needs n >= 3 and d >= 1")
    shape = (n,) * d
    size = n ** d
    coords = np.stack(np.unravel_index(np.arange(size), shape), axis=1).astype(float)
    c = np.zeros((size, size))
    for axis in range(d):
        shifted = coords.copy()
        shifted[:, axis] = (shifted[:, axis] + 1) % n
        j = np.ravel_multi_index(tuple(shifted.astype(int).T), shape)
        i = np.arange(size)
        c[i, j] = 1.0
        c[j, i] = 1.0
    return FiniteDirichletForm(m=np.ones(size), c=c, coords=coords)


def two_state(c12: float = 1.0, m=(1.0, 1.0)) -> FiniteDirichletForm:
    c = np.array([[0.0, c12], [c12, 0.0]])
    return FiniteDirichletForm(m=np.asarray(m, float), c=c,
                               coords=np.array([[0.0], [1.0]]))


def stable_like(n: int, d: int, phi_scaling, c_lower: float = 1.0,
                c_upper: float = 1.0, seed: int = 0) -> FiniteDirichletForm:
    """Long-range chain on a d-dimensional box with jump weights

        c[x, y] = U(x, y) / (|x - y|^d * phi_scaling(|x - y|)),

    U symmetric, drawn uniformly from [c_lower, c_upper] with the given seed.
    ``phi_scaling`` is an increasing scaling function (callable on floats).
    """
    if c_lower <= 0 or c_upper < c_lower:
        raise FormError("need 0 < c_lower <= c_upper")
    side = int(round(n ** (1.0 / d)))
    if side ** d != n:
        raise FormError(f"n={n} is not a d={d} power")
    shape = (side,) * d
    coords = np.stack(np.unravel_index(np.arange(n), shape), axis=1).astype(float)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    rng = np.random.default_rng(seed)
    u = rng.uniform(c_lower, c_upper, size=(n, n))
    u = np.triu(u, 1)
    u = u + u.T
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.array([[0.0 if dist[i, j] == 0 else
                           1.0 / (dist[i, j] ** d * float(phi_scaling(dist[i, j])))
                           for j in range(n)] for i in range(n)])
    c = u * scale
    np.fill_diagonal(c, 0.0)
    return FiniteDirichletForm(m=np.ones(n), c=c, coords=coords)


# ---------------------------------------------------------------------------
# Documents.
# ---------------------------------------------------------------------------


def to_model(form: FiniteDirichletForm) -> dict:
    edges = []
    for x in range(form.n):
        for y in range(x + 1, form.n):
            if form.c[x, y] > 0:
                edges.append([x, y, float(form.c[x, y])])
    doc = {
        "states": form.n,
        "m": [float(v) for v in form.m],
        "edges": edges,
    }
    if form.coords is not None:
        doc["coords"] = [[float(v) for v in row] for row in form.coords]
    if form.has_killing:
        doc["kill"] = [float(v) for v in form.kill]
    return doc


def from_model(doc: dict) -> FiniteDirichletForm:
    try:
        n = int(doc["states"])
        m = np.asarray(doc["m"], dtype=float)
        edges = doc["edges"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormError(f"malformed model document: {exc}")
    c = np.zeros((n, n))
    for row in edges:
        x, y, w = int(row[0]), int(row[1]), float(row[2])
        if not (0 <= x < n and 0 <= y < n) or x == y or w <= 0:
            raise FormError(f"bad edge {row}")
        c[x, y] = w
        c[y, x] = w
    coords = np.asarray(doc["coords"], dtype=float) if "coords" in doc else None
    kill = np.asarray(doc["kill"], dtype=float) if "kill" in doc else None
    return FiniteDirichletForm(m=m, c=c, coords=coords, kill=kill)


_NAMED = re.compile(r"^([a-z_]+)\(([^)]*)\)$")


def build_named(spec: str, phi_scaling=None) -> FiniteDirichletForm:
    """Build a form from a compact name like ``cycle(64)`` or ``torus(128,1)``.

    Recognised: cycle(n), path(n), path_killed(n), torus(n,d), two_state(),
    stable_like(n,d,c_lower,c_upper,seed) (requires ``phi_scaling``).
    """
    m = _NAMED.match(spec.strip())
    if not m:
        raise FormError(f"unrecognised model spec {spec!r}")
    name, raw = m.group(1), m.group(2)
    args = [a.strip() for a in raw.split(",")] if raw.strip() else []
    if name == "cycle":
        return cycle(int(args[0]))
    if name == "path":
        return path(int(args[0]))
    if name == "path_killed":
        return path(int(args[0]), killed=True)
    if name == "torus":
        return torus(int(args[0]), int(args[1]))
    if name == "two_state":
        return two_state(*(float(a) for a in args))
    if name == "stable_like":
        if phi_scaling is None:
            raise FormError("stable_like needs a scaling function (--scaling)")
        n, d = int(args[0]), int(args[1])
        c_lo = float(args[2]) if len(args) > 2 else 1.0
        c_hi = float(args[3]) if len(args) > 3 else c_lo
        seed = int(args[4]) if len(args) > 4 else 0
        return stable_like(n, d, phi_scaling, c_lo, c_hi, seed)
    raise FormError(f"unrecognised model name {name!r}")
