"""Space-time i.i.d. jump environments on the integer lattice Z^d.

An environment assigns to every space-time point (s, x) an independent
random probability vector over a fixed finite set of jump offsets; a
particle at site x at time s jumps by offset z with probability
``omega_{s,x}(z)``.  ``EnvSpec`` describes the law of one such vector
(the *family*), ``EnvField`` is one realized environment: an immutable,
lazily evaluated field addressed by (level, site) whose values are
regenerated counter-mode from a seed, so shifting the field is free and
two queries of the same point always agree.

Families
--------
dirichlet      omega ~ Dirichlet(alpha) over the offsets
two_point      omega = law_a with probability weight_a, else law_b
deterministic  omega identically equal to a fixed law (constant field)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import gammaincinv

from .rng import Stream, extend_hash, hash_coords, u01

FAMILIES = ("dirichlet", "two_point", "deterministic")


def _canonical_offsets(offsets, dim: int) -> np.ndarray:
    arr = np.asarray(offsets, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"offsets must have shape (k, {dim}), got {arr.shape}")
    order = np.lexsort(arr.T[::-1])
    arr = arr[order]
    if len(np.unique(arr, axis=0)) != len(arr):
        raise ValueError("offsets contain duplicates")
    arr.setflags(write=False)
    return arr, order


def _check_law(probs, k: int, name: str) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (k,):
        raise ValueError(f"{name} must have length {k}, got shape {p.shape}")
    if np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-12):
        raise ValueError(f"{name} must be a probability vector (got sum {p.sum()!r})")
    p.setflags(write=False)
    return p


@dataclass(frozen=True)
class JumpLaw:
    """A probability distribution over lattice jump offsets."""

    offsets: np.ndarray  # (k, d) int64
    probs: np.ndarray    # (k,) float64, sums to 1

    def __post_init__(self):
        if self.offsets.shape[0] != self.probs.shape[0]:
            raise ValueError("offsets and probs length mismatch")

    @property
    def dim(self) -> int:
        return self.offsets.shape[1]

    def as_dict(self) -> dict:
        return {tuple(z): p for z, p in zip(self.offsets.tolist(), self.probs)}


@dataclass(frozen=True)
class EnvSpec:
    """Law of a single environment vector: family + parameters + support."""

    dim: int
    offsets: np.ndarray          # (k, d) canonical (lexicographically sorted)
    family: str
    alpha: np.ndarray | None = None       # dirichlet
    law_a: np.ndarray | None = None       # two_point
    law_b: np.ndarray | None = None       # two_point
    weight_a: float = 0.5                 # two_point
    law: np.ndarray | None = None         # deterministic

    def __post_init__(self):
        offs, order = _canonical_offsets(self.offsets, self.dim)
        object.__setattr__(self, "offsets", offs)
        k = offs.shape[0]
        if self.family == "dirichlet":
            a = np.asarray(self.alpha, dtype=np.float64)[order]
            if a.shape != (k,) or np.any(a <= 0):
                raise ValueError("alpha must be positive with one entry per offset")
            a.setflags(write=False)
            object.__setattr__(self, "alpha", a)
        elif self.family == "two_point":
            object.__setattr__(self, "law_a", _check_law(np.asarray(self.law_a)[order], k, "law_a"))
            object.__setattr__(self, "law_b", _check_law(np.asarray(self.law_b)[order], k, "law_b"))
            if not 0.0 <= self.weight_a <= 1.0:
                raise ValueError("weight_a must lie in [0, 1]")
        elif self.family == "deterministic":
            object.__setattr__(self, "law", _check_law(np.asarray(self.law)[order], k, "law"))
        else:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")

    @property
    def n_offsets(self) -> int:
        return self.offsets.shape[0]

    @property
    def jump_range(self) -> int:
        """Sup-norm radius R of the offset set."""
        return int(np.abs(self.offsets).max()) if self.n_offsets else 0

    @property
    def n_draws(self) -> int:
        """Uniform variates consumed per environment vector."""
        if self.family == "dirichlet":
            return self.n_offsets
        if self.family == "two_point":
            return 1
        return 0

    # -- JSON round trip ---------------------------------------------------

    def to_json_dict(self) -> dict:
        params: dict = {"offsets": self.offsets.tolist()}
        if self.family == "dirichlet":
            params["alpha"] = self.alpha.tolist()
        elif self.family == "two_point":
            params.update(law_a=self.law_a.tolist(), law_b=self.law_b.tolist(),
                          weight_a=self.weight_a)
        else:
            params["law"] = self.law.tolist()
        return {"dim": self.dim, "range": self.jump_range,
                "family": self.family, "params": params}

    @staticmethod
    def from_json_dict(block: dict) -> "EnvSpec":
        for key in ("dim", "family", "params"):
            if key not in block:
                raise ValueError(f"environment config missing field {key!r}")
        params = dict(block["params"])
        if "offsets" not in params:
            raise ValueError("environment config missing field 'params.offsets'")
        kwargs = {}
        fam = block["family"]
        if fam == "dirichlet":
            kwargs["alpha"] = params.get("alpha")
            if kwargs["alpha"] is None:
                raise ValueError("environment config missing field 'params.alpha'")
        elif fam == "two_point":
            for key in ("law_a", "law_b"):
                if key not in params:
                    raise ValueError(f"environment config missing field 'params.{key}'")
            kwargs.update(law_a=params["law_a"], law_b=params["law_b"],
                          weight_a=params.get("weight_a", 0.5))
        elif fam == "deterministic":
            if "law" not in params:
                raise ValueError("environment config missing field 'params.law'")
            kwargs["law"] = params["law"]
        else:
            raise ValueError(f"unknown family {fam!r}; expected one of {FAMILIES}")
        spec = EnvSpec(dim=int(block["dim"]), offsets=params["offsets"],
                       family=fam, **kwargs)
        if "range" in block and int(block["range"]) != spec.jump_range:
            raise ValueError(
                f"config field 'range' is {block['range']} but offsets have "
                f"sup-norm radius {spec.jump_range}")
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


# ---------------------------------------------------------------------------
# Named fixtures used throughout the test batteries and CLI.
# ---------------------------------------------------------------------------

def lazy_u() -> EnvSpec:
    """d=1 Dirichlet(1,1) on offsets {0, 1}: hold/step-right with Uniform bias."""
    return EnvSpec(dim=1, offsets=[[0], [1]], family="dirichlet", alpha=[1.0, 1.0])


def flip3() -> EnvSpec:
    """d=1 two-point mixture on {-1, 0, 1}: mostly-left law vs mostly-right law."""
    return EnvSpec(dim=1, offsets=[[-1], [0], [1]], family="two_point",
                   law_a=[0.8, 0.1, 0.1], law_b=[0.1, 0.1, 0.8], weight_a=0.5)


def dirichlet_line(alpha=(1.0, 1.0, 1.0)) -> EnvSpec:
    """d=1 Dirichlet on {-1, 0, 1}."""
    return EnvSpec(dim=1, offsets=[[-1], [0], [1]], family="dirichlet", alpha=alpha)


def dirichlet_star2() -> EnvSpec:
    """d=2 Dirichlet(1,...,1) on the 5-point star (hold + nearest neighbors)."""
    offs = [[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]]
    return EnvSpec(dim=2, offsets=offs, family="dirichlet", alpha=[1.0] * 5)


def dirichlet_star3() -> EnvSpec:
    """d=3 Dirichlet(1,...,1) on the 7-point star."""
    offs = [[0, 0, 0]]
    for axis in range(3):
        for sgn in (1, -1):
            z = [0, 0, 0]
            z[axis] = sgn
            offs.append(z)
    return EnvSpec(dim=3, offsets=offs, family="dirichlet", alpha=[1.0] * 7)


FIXTURES = {
    "lazy-u": lazy_u,
    "flip3": flip3,
    "dirichlet-line": dirichlet_line,
    "dirichlet-star2": dirichlet_star2,
    "dirichlet-star3": dirichlet_star3,
}


# ---------------------------------------------------------------------------
# Field evaluation
# ---------------------------------------------------------------------------

def _draw_uniforms(spec: EnvSpec, keys, s, sites: np.ndarray) -> np.ndarray:
    """Counter-mode uniforms: keys (...,) x sites (m, d) -> (..., m, n_draws).

    The coordinate chain (level, site axes) is hashed once per site and
    extended per draw index, which is what the numba engines replicate.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    cols = [sites[:, a] for a in range(spec.dim)]
    prefix = hash_coords(keys[..., None], s, *cols)
    out = np.empty(prefix.shape + (spec.n_draws,))
    for j in range(spec.n_draws):
        out[..., j] = u01(extend_hash(prefix, j))
    return out


def _laws_from_uniforms(spec: EnvSpec, u: np.ndarray) -> np.ndarray:
    """Map uniforms (..., n_draws) to probability vectors (..., k)."""
    if spec.family == "deterministic":
        return np.broadcast_to(spec.law, u.shape[:-1] + (spec.n_offsets,)).copy()
    if spec.family == "two_point":
        pick_a = u[..., 0] < spec.weight_a
        return np.where(pick_a[..., None], spec.law_a, spec.law_b)
    # dirichlet: normalized Gamma(alpha_j) quantiles.  The all-ones case uses
    # the explicit exponential quantile so the numba engines can reproduce it
    # bit for bit.
    if np.all(spec.alpha == 1.0):
        g = -np.log1p(-u)
    else:
        g = gammaincinv(spec.alpha, u)
    total = g.sum(axis=-1)
    total = np.where(total == 0.0, 1.0, total)  # probability ~2^-53k guard
    return g / total[..., None]


@dataclass(frozen=True)
class EnvField:
    """One realized environment: an immutable random field over (level, site).

    ``kernel_at(s, x)`` is a pure function of (seed, spec, s + s0, x + x0):
    repeated queries agree exactly, and ``shifted(ds, dx)`` relocates the
    origin without copying anything, so the shift identity
    ``field.shifted(a, u).kernel_at(s, x) == field.kernel_at(a + s, u + x)``
    holds exactly.
    """

    spec: EnvSpec
    seed: int
    origin_s: int = 0
    origin_x: tuple = ()

    def __post_init__(self):
        ox = self.origin_x if len(self.origin_x) else (0,) * self.spec.dim
        ox = tuple(int(v) for v in ox)
        if len(ox) != self.spec.dim:
            raise ValueError("origin_x dimension mismatch")
        object.__setattr__(self, "origin_x", ox)
        object.__setattr__(self, "_key", Stream.from_seed(self.seed).child("env-field").key)

    @property
    def sampling_key(self) -> np.uint64:
        """uint64 key feeding the counter-mode draws (shared with numba engines)."""
        return np.uint64(self._key)

    def shifted(self, ds: int, dx) -> "EnvField":
        dx = np.atleast_1d(np.asarray(dx, dtype=np.int64))
        if dx.shape != (self.spec.dim,):
            raise ValueError("shift vector dimension mismatch")
        new_x = tuple(int(a + b) for a, b in zip(self.origin_x, dx))
        return EnvField(self.spec, self.seed, self.origin_s + int(ds), new_x)

    def laws_block(self, s: int, sites) -> np.ndarray:
        """Probability vectors at level ``s`` for an (m, d) array of sites."""
        sites = np.asarray(sites, dtype=np.int64)
        if sites.ndim == 1:
            sites = sites[:, None]
        abs_sites = sites + np.asarray(self.origin_x, dtype=np.int64)[None, :]
        u = _draw_uniforms(self.spec, np.uint64(self._key),
                           int(s) + self.origin_s, abs_sites)
        return _laws_from_uniforms(self.spec, u)

    def kernel_at(self, s: int, x) -> JumpLaw:
        """The jump law governing a particle sitting at site ``x`` at level ``s``."""
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        probs = self.laws_block(s, x[None, :])[0]
        return JumpLaw(self.spec.offsets, probs)


def field_from_config(block: dict) -> EnvField:
    """Build an EnvField from a JSON config block {dim, range, family, params, seed}."""
    if "seed" not in block:
        raise ValueError("environment config missing field 'seed'")
    return EnvField(EnvSpec.from_json_dict(block), int(block["seed"]))


def field_to_config(field: EnvField) -> dict:
    """Inverse of ``field_from_config`` (origin shifts are not serialized)."""
    return {**field.spec.to_json_dict(), "seed": field.seed}


# ---------------------------------------------------------------------------
# Moments and standing assumptions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvMoments:
    """First and second moments of the environment vector over its offsets."""

    offsets: np.ndarray   # (k, d)
    mean: np.ndarray      # (k,)   E omega(z)
    second: np.ndarray    # (k, k) E omega(z_i) omega(z_j)

    def mean_dict(self) -> dict:
        return {tuple(z): p for z, p in zip(self.offsets.tolist(), self.mean)}


def env_moments(spec: EnvSpec) -> EnvMoments:
    """Exact first/second moments per family."""
    if spec.family == "dirichlet":
        a = spec.alpha
        a0 = a.sum()
        mean = a / a0
        second = (np.outer(a, a) + np.diag(a)) / (a0 * (a0 + 1.0))
    elif spec.family == "two_point":
        w = spec.weight_a
        mean = w * spec.law_a + (1 - w) * spec.law_b
        second = w * np.outer(spec.law_a, spec.law_a) \
            + (1 - w) * np.outer(spec.law_b, spec.law_b)
    else:
        mean = spec.law.copy()
        second = np.outer(spec.law, spec.law)
    return EnvMoments(spec.offsets, mean, second)


def env_moments_mc(spec: EnvSpec, n: int, stream: Stream):
    """Monte Carlo moment estimates with standard errors (cross-check path).

    Returns (mean, mean_se, second, second_se) with shapes matching
    ``env_moments``.
    """
    field = EnvField(spec, seed=stream.child("env-moments-mc").key & ((1 << 63) - 1))
    sites = np.zeros((n, spec.dim), dtype=np.int64)
    sites[:, 0] = np.arange(n)
    laws = field.laws_block(0, sites)
    mean = laws.mean(axis=0)
    mean_se = laws.std(axis=0, ddof=1) / np.sqrt(n)
    prods = laws[:, :, None] * laws[:, None, :]
    second = prods.mean(axis=0)
    second_se = prods.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, mean_se, second, second_se


def _lattice_index(vectors: np.ndarray) -> int:
    """Index in Z^d of the subgroup generated by integer vectors (0 if rank < d)."""
    rows = [list(map(int, v)) for v in np.atleast_2d(vectors) if np.any(v)]
    d = vectors.shape[1]
    det = 1
    for col in range(d):
        while True:
            nz = [r for r in rows if r[col] != 0]
            if not nz:
                return 0
            pivot = min(nz, key=lambda r: abs(r[col]))
            reduced = False
            for r in nz:
                if r is pivot:
                    continue
                f = r[col] // pivot[col]
                for j in range(d):
                    r[j] -= f * pivot[j]
                reduced = reduced or r[col] != 0
            if not reduced:
                break
        det *= abs(pivot[col])
        rows = [r for r in rows if r is not pivot and any(r)]
    return det


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the standing-assumption checks for an environment law."""

    nondegenerate: bool    # local law is not a.s. a point mass
    span_one: bool         # averaged walk's support differences generate Z^d
    messages: tuple = ()

    @property
    def ok(self) -> bool:
        return self.nondegenerate and self.span_one


def validate_assumptions(spec: EnvSpec) -> AssumptionReport:
    """Check nondegeneracy and the span-1 (aperiodicity) condition.

    Nondegeneracy asks that with positive probability the local jump law is
    not a point mass (otherwise every characteristic-function modulus is 1
    and the homogenization constant degenerates to 0).  Span-1 asks that
    the differences of the mean walk's support generate all of Z^d, which
    keeps the symmetrized characteristic function away from 1 off the
    origin of the torus.
    """
    messages = []

    def is_mixed(law) -> bool:
        return bool(np.any((law > 0.0) & (law < 1.0)))

    if spec.family == "dirichlet":
        nondeg = spec.n_offsets >= 2
        if not nondeg:
            messages.append("dirichlet law on a single offset is a point mass")
    elif spec.family == "two_point":
        picks = []
        if spec.weight_a > 0:
            picks.append(spec.law_a)
        if spec.weight_a < 1:
            picks.append(spec.law_b)
        nondeg = any(is_mixed(p) for p in picks)
        if not nondeg:
            messages.append("both selectable laws are point masses")
    else:
        nondeg = is_mixed(spec.law)
        if not nondeg:
            messages.append("deterministic law is a point mass")
        else:
            messages.append("environment is constant: exact covariances vanish")

    mean = env_moments(spec).mean
    support = spec.offsets[mean > 0]
    if support.shape[0] < 2:
        span_one = False
        messages.append("mean walk support has fewer than two points")
    else:
        diffs = support[1:] - support[0]
        span_one = _lattice_index(diffs) == 1
        if not span_one:
            messages.append("support differences generate a proper sublattice of Z^d")
    return AssumptionReport(nondeg, span_one, tuple(messages))
