"""Deterministic lattice kernels derived from an environment law.

Everything here is exact linear algebra / quadrature on Z^d — no Monte
Carlo.  From the first and second moments of the environment vector we
build three convolution stencils:

``mean_jump_law``       the annealed single-step law (average of the local law)
``pair_step_same_site`` one step of two walkers sitting on the same site, who
                        share one environment vector (difference coordinates)
``pair_step_apart``     one step of two walkers on distinct sites, whose
                        vectors are independent (difference of two mean steps)
``pair_step_excess``    same-site row minus apart row; its total mass is 0

These feed the closed-form objects the rest of the package verifies:
spectral gap ratios on the torus, the scalar ``beta`` normalizing the
stationary density's fluctuations, the potential kernel of the
symmetrized mean walk (by Fourier quadrature and, independently, by
Richardson-extrapolated partial sums), and the exact finite-horizon
occupation covariances with their infinite-horizon limits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .envmodel import EnvSpec, env_moments

# ---------------------------------------------------------------------------
# Sparse lattice stencils and dense-window helpers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Stencil:
    """A finitely supported real function on Z^d (offsets + values)."""

    offsets: np.ndarray  # (K, d) int64, lexicographically sorted
    values: np.ndarray   # (K,) float64

    def __post_init__(self):
        offs = np.asarray(self.offsets, dtype=np.int64)
        if offs.ndim == 1:
            offs = offs[:, None]
        vals = np.asarray(self.values, dtype=np.float64)
        order = np.lexsort(offs.T[::-1])
        offs, vals = offs[order], vals[order]
        offs.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.offsets.shape[1]

    @property
    def radius(self) -> int:
        """Sup-norm radius of the support."""
        return int(np.abs(self.offsets).max()) if len(self.values) else 0

    def get(self, z) -> float:
        z = np.atleast_1d(np.asarray(z, dtype=np.int64))
        hit = np.all(self.offsets == z[None, :], axis=1)
        idx = np.nonzero(hit)[0]
        return float(self.values[idx[0]]) if len(idx) else 0.0

    def to_dict(self) -> dict:
        return {tuple(z): float(v) for z, v in zip(self.offsets.tolist(), self.values)}

    def total(self) -> float:
        return float(self.values.sum())

    def reversed(self) -> "Stencil":
        return Stencil(-self.offsets, self.values)


def _aggregate(points: np.ndarray, weights: np.ndarray) -> Stencil:
    """Sum weights landing on the same lattice point into one stencil."""
    uniq, inverse = np.unique(points, axis=0, return_inverse=True)
    vals = np.zeros(len(uniq))
    np.add.at(vals, inverse.ravel(), weights.ravel())
    return Stencil(uniq, vals)


def as_offsets(ms, dim: int) -> np.ndarray:
    """Normalize scalars / tuples / arrays into an (n, dim) int64 offset array."""
    arr = np.asarray(ms, dtype=np.int64)
    if arr.ndim == 0:
        arr = arr[None]
    if arr.ndim == 1:
        if dim == 1:
            arr = arr[:, None]
        elif arr.shape[0] == dim:
            arr = arr[None, :]
        else:
            raise ValueError(f"cannot interpret offsets of shape {arr.shape} in d={dim}")
    if arr.shape[1] != dim:
        raise ValueError(f"offsets must have {dim} columns, got {arr.shape}")
    return arr


def shift_accumulate(dst: np.ndarray, src: np.ndarray, offset, weight: float) -> None:
    """dst[x + offset] += weight * src[x], clipped at the window boundary."""
    src_sl, dst_sl = [], []
    for o, n in zip(np.atleast_1d(offset), src.shape):
        o = int(o)
        if o >= 0:
            src_sl.append(slice(0, n - o))
            dst_sl.append(slice(o, n))
        else:
            src_sl.append(slice(-o, n))
            dst_sl.append(slice(0, n + o))
    dst[tuple(dst_sl)] += weight * src[tuple(src_sl)]


def convolve_window(arr: np.ndarray, stencil: Stencil) -> np.ndarray:
    """(arr * stencil)(y) = sum_z arr(y - z) stencil(z) on the same window."""
    out = np.zeros_like(arr)
    for off, v in zip(stencil.offsets, stencil.values):
        shift_accumulate(out, arr, off, v)
    return out


def stencil_window(stencil: Stencil, half) -> np.ndarray:
    """Render a stencil on a dense window with per-axis half-widths."""
    half = np.broadcast_to(np.asarray(half, dtype=np.int64), (stencil.dim,))
    arr = np.zeros(tuple(2 * h + 1 for h in half))
    for off, v in zip(stencil.offsets, stencil.values):
        arr[tuple(int(o + h) for o, h in zip(off, half))] += v
    return arr


# ---------------------------------------------------------------------------
# The three pair-step rows
# ---------------------------------------------------------------------------


def mean_jump_law(spec: EnvSpec) -> Stencil:
    """Annealed one-step law of a single walker."""
    mom = env_moments(spec)
    return Stencil(spec.offsets, mom.mean)


def pair_step_same_site(spec: EnvSpec) -> Stencil:
    """Difference-step row for two walkers sharing one environment vector."""
    mom = env_moments(spec)
    k, d = spec.offsets.shape
    diffs = (spec.offsets[None, :, :] - spec.offsets[:, None, :]).reshape(-1, d)
    return _aggregate(diffs, mom.second.reshape(-1))


def pair_step_apart(spec: EnvSpec) -> Stencil:
    """Difference-step row for two walkers with independent vectors."""
    mom = env_moments(spec)
    k, d = spec.offsets.shape
    diffs = (spec.offsets[None, :, :] - spec.offsets[:, None, :]).reshape(-1, d)
    return _aggregate(diffs, np.outer(mom.mean, mom.mean).reshape(-1))


def pair_step_excess(spec: EnvSpec) -> Stencil:
    """Same-site row minus apart row; sums to zero and is even."""
    same = pair_step_same_site(spec)
    apart = pair_step_apart(spec)
    pts = np.concatenate([same.offsets, apart.offsets])
    wts = np.concatenate([same.values, -apart.values])
    return _aggregate(pts, wts)


def drift_and_variance(spec: EnvSpec):
    """Mean vector and covariance matrix of the annealed one-step law."""
    p = mean_jump_law(spec)
    z = p.offsets.astype(np.float64)
    v = p.values @ z
    centered = z - v[None, :]
    cov = (p.values[:, None] * centered).T @ centered
    return v, cov


# ---------------------------------------------------------------------------
# Spectral gaps on the torus
# ---------------------------------------------------------------------------


def spectral_gap(stencil: Stencil, theta: np.ndarray) -> np.ndarray:
    """sum_z stencil(z) * (1 - cos(theta . z)), stable near theta = 0.

    For a probability row this equals 1 minus its cosine transform.
    """
    theta = np.atleast_2d(theta)
    dots = theta @ stencil.offsets.T.astype(np.float64)
    return (2.0 * np.sin(dots / 2.0) ** 2) @ stencil.values


# ---------------------------------------------------------------------------
# Torus quadrature: (2 pi)^-d * integral over [-pi, pi]^d
# ---------------------------------------------------------------------------


def _quad_torus_1d(fn, tol: float):
    """Midpoint rule with doubling; integrands are analytic on the torus."""
    n, prev = 128, None
    while n <= 2 ** 22:
        theta = (-np.pi + (np.arange(n) + 0.5) * (2 * np.pi / n))[:, None]
        est = np.asarray(fn(theta), dtype=np.float64).mean(axis=0)
        if prev is not None and np.all(np.abs(est - prev) <= 0.25 * tol * np.maximum(1.0, np.abs(est))):
            return est
        prev, n = est, 2 * n
    return est


def _panel_axes(a: float, thin_axis: int, sign: int, dim: int):
    """Per-axis panel edges for one slab of the dyadic annulus at scale ``a``.

    The slab fixes |theta_i| in (a/2, a] on the thin axis, lets axes before
    it range over [-a, a] and axes after it over [-a/2, a/2]; every axis is
    subdivided into panels of length <= a/2 so each panel sits at distance
    >= a/2 from the origin while staying small enough for fixed-order
    Gauss-Legendre to resolve it.
    """
    axes = []
    for j in range(dim):
        if j == thin_axis:
            lo, hi = (a / 2, a) if sign > 0 else (-a, -a / 2)
            edges = np.array([lo, hi])
        elif j < thin_axis:
            edges = np.linspace(-a, a, 5)     # four panels of length a/2
        else:
            edges = np.linspace(-a / 2, a / 2, 3)  # two panels
        axes.append(edges)
    return axes


def _quad_torus_nd(fn, dim: int, tol: float):
    """Dyadic annulus peel toward the (bounded, direction-dependent) point 0.

    The integrands here are analytic away from the origin of the torus but
    may only have directional limits at 0, so a single smooth rule cannot
    converge.  Each annulus {a/2 < max|theta_i| <= a} is split into boxes
    that keep a distance >= a/2 from the origin; Gauss-Legendre is spectrally
    accurate on each, and the leftover central box contributes at most
    max|f| * (a / 2 pi)^d, which halves geometrically per level.
    """
    m = 16 if dim == 2 else 12
    nodes, weights = leggauss(m)
    total = None
    a = np.pi
    for _ in range(80):
        level_max = 0.0
        for thin_axis in range(dim):
            for sign in (1, -1):
                axes = _panel_axes(a, thin_axis, sign, dim)
                for corner in np.ndindex(*[len(e) - 1 for e in axes]):
                    los = [axes[j][corner[j]] for j in range(dim)]
                    his = [axes[j][corner[j] + 1] for j in range(dim)]
                    pts_1d = [(hi + lo) / 2 + (hi - lo) / 2 * nodes for lo, hi in zip(los, his)]
                    wts_1d = [(hi - lo) / 2 * weights for lo, hi in zip(los, his)]
                    grid = np.stack([g.ravel() for g in np.meshgrid(*pts_1d, indexing="ij")], axis=-1)
                    wt = np.prod(np.stack([g.ravel() for g in np.meshgrid(*wts_1d, indexing="ij")], axis=-1), axis=-1)
                    vals = np.asarray(fn(grid), dtype=np.float64)
                    level_max = max(level_max, float(np.abs(vals).max(initial=0.0)))
                    contrib = wt @ vals
                    total = contrib if total is None else total + contrib
        a /= 2
        if level_max * (2 * a) ** dim < 0.5 * tol * (2 * np.pi) ** dim:
            break
    return total / (2 * np.pi) ** dim


def quad_torus(fn, dim: int, tol: float = 1e-12):
    """Normalized torus integral of a (possibly vector-valued) integrand."""
    if dim == 1:
        return _quad_torus_1d(fn, tol)
    return _quad_torus_nd(fn, dim, tol)


# ---------------------------------------------------------------------------
# beta, limit covariances, potential kernel
# ---------------------------------------------------------------------------


def beta_fourier(spec: EnvSpec, tol: float = 1e-12) -> float:
    """Torus average of the same-site / apart spectral gap ratio, in (0, 1]."""
    same = pair_step_same_site(spec)
    apart = pair_step_apart(spec)

    def ratio(theta):
        return spectral_gap(same, theta) / spectral_gap(apart, theta)

    return float(quad_torus(ratio, spec.dim, tol))


def cov_limit(spec: EnvSpec, ms, tol: float = 1e-12) -> np.ndarray:
    """Infinite-horizon occupation covariance at lattice lags ``ms``.

    One Fourier formula covers every lag: the value at lag m is
    beta^-1 times the torus average of cos(theta . m) * (gap_apart -
    gap_same) / gap_apart.  At m = 0 this is the limiting variance
    1/beta - 1; at m != 0 the constant term integrates away.
    """
    ms = as_offsets(ms, spec.dim)
    same = pair_step_same_site(spec)
    apart = pair_step_apart(spec)

    def integrand(theta):
        ga = spectral_gap(apart, theta)
        ratio = (ga - spectral_gap(same, theta)) / ga
        return np.cos(theta @ ms.T.astype(np.float64)) * ratio[:, None]

    avg = np.atleast_1d(quad_torus(integrand, spec.dim, tol))
    return avg / beta_fourier(spec, tol)


def potential_kernel_fourier(spec: EnvSpec, xs, tol: float = 1e-12) -> np.ndarray:
    """Potential kernel of the symmetrized mean walk, by torus quadrature."""
    xs = as_offsets(xs, spec.dim)
    apart = pair_step_apart(spec)

    def integrand(theta):
        gaps_x = 2.0 * np.sin((theta @ xs.T.astype(np.float64)) / 2.0) ** 2
        return gaps_x / spectral_gap(apart, theta)[:, None]

    return np.atleast_1d(quad_torus(integrand, spec.dim, tol))


_SERIES_LADDERS = {
    1: ((1024, 2048, 4096, 8192, 16384, 32768), (0.5, 1.5, 2.5, 3.5, 4.5)),
    2: ((24, 48, 96, 192, 384), (1.0, 2.0, 3.0, 4.0)),
    3: ((16, 32, 64, 128), (1.5, 2.5, 3.5)),
}


def potential_kernel_series(spec: EnvSpec, xs) -> np.ndarray:
    """Potential kernel via Richardson-extrapolated Green-function partial sums.

    The n-step partial sums of (return mass at 0) minus (return mass at x)
    approach the potential kernel with an asymptotic error expansion in the
    half-integer (d odd) or integer (d even) powers of 1/n that local CLT
    expansions of a symmetric driftless walk produce; fitting the known
    leading powers on a doubling ladder of horizons removes them.  This
    pipeline is independent of all torus quadrature.
    """
    xs = as_offsets(xs, spec.dim)
    d = spec.dim
    ladder, powers = _SERIES_LADDERS.get(d, _SERIES_LADDERS[3])
    n_max = ladder[-1]

    p = mean_jump_law(spec)
    p_rev = p.reversed()
    v, cov = drift_and_variance(spec)
    sigma_axis = np.sqrt(2.0 * np.diag(cov))      # per-axis std of the symmetrized step

    half = (np.ceil(9.0 * sigma_axis * np.sqrt(n_max)).astype(np.int64)
            + np.abs(xs).max(axis=0) + 2 * spec.jump_range)
    center = tuple(int(h) for h in half)
    g = np.zeros(tuple(2 * h + 1 for h in half))
    g[center] = 1.0
    x_idx = tuple(np.asarray([c + x[a] for x in xs], dtype=np.int64)
                  for a, c in enumerate(center))

    diffs = np.zeros(len(xs))
    snapshots = np.empty((len(ladder), len(xs)))
    taken = 0
    for k in range(n_max):
        diffs += g[center] - g[x_idx]
        if k + 1 in ladder:
            snapshots[taken] = diffs
            taken += 1
        if k + 1 < n_max:
            g = convolve_window(convolve_window(g, p), p_rev)

    # Fit  a_N = (limit) - sum_j c_j N^{-p_j}  on the ladder; the first
    # solved coefficient is the extrapolated limit.  Columns are equilibrated
    # before solving: their scales differ by many orders of magnitude.
    design = np.ones((len(ladder), len(powers) + 1))
    for j, pw in enumerate(powers):
        design[:, j + 1] = -np.asarray(ladder, dtype=np.float64) ** (-pw)
    scale = np.abs(design).max(axis=0)
    coef = np.linalg.solve(design / scale, snapshots)
    return coef[0] / scale[0]


def beta_from_potential(spec: EnvSpec, method: str = "series") -> float:
    """Duality route to beta: same-site row paired with the potential kernel.

    With the potential kernel computed from Green-function partial sums this
    shares no numerics with ``beta_fourier``, which makes their agreement a
    meaningful end-to-end check.
    """
    same = pair_step_same_site(spec)
    if method == "series":
        abar = potential_kernel_series(spec, same.offsets)
    elif method == "fourier":
        abar = potential_kernel_fourier(spec, same.offsets)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(same.values @ abar)


def cov_limit_from_potential(spec: EnvSpec, ms, beta: float | None = None) -> np.ndarray:
    """Limit covariance at nonzero lags via potential-kernel differences.

    Entirely lattice-based (partial-sum potential kernel and series beta);
    cross-validates the Fourier pipeline of ``cov_limit``.
    """
    ms = as_offsets(ms, spec.dim)
    if np.any(np.all(ms == 0, axis=1)):
        raise ValueError("potential-kernel route applies to nonzero lags only")
    same = pair_step_same_site(spec)
    if beta is None:
        beta = beta_from_potential(spec, method="series")

    points = np.concatenate([-ms, (same.offsets[None, :, :] - ms[:, None, :]).reshape(-1, spec.dim)])
    uniq, inverse = np.unique(points, axis=0, return_inverse=True)
    abar = potential_kernel_series(spec, uniq)
    a_minus_m = abar[inverse[: len(ms)]]
    a_z_minus_m = abar[inverse[len(ms):]].reshape(len(ms), -1)
    return (a_minus_m[:, None] - a_z_minus_m) @ same.values / beta


# ---------------------------------------------------------------------------
# Exact finite-horizon occupation covariances
# ---------------------------------------------------------------------------


def cov_finite(spec: EnvSpec, n_steps: int, ms, snapshots=None):
    """Exact occupation covariance of the stationary density at finite horizon.

    Propagates the excess row through the pair walk: w_0 is the excess row
    and each step convolves with the apart row and re-injects w_k(0) times
    the excess row at the origin (the same-site correction).  The horizon-n
    covariance at lag m is the sum of the first n iterates at m.  Windows
    are sized so no support is ever clipped: the values are exact up to
    float rounding.

    With ``snapshots`` (an iterable of horizons) also returns the partial
    sums at those horizons as a (len(snapshots), len(ms)) array.
    """
    ms = as_offsets(ms, spec.dim)
    excess = pair_step_excess(spec)
    apart = pair_step_apart(spec)
    if len(excess.values) == 0 or not np.any(excess.values):
        totals = np.zeros(len(ms))
        if snapshots is None:
            return totals
        return totals, np.zeros((len(list(snapshots)), len(ms)))

    radius = max(excess.radius, 2 * spec.jump_range)
    half = np.full(spec.dim, radius * n_steps + excess.radius, dtype=np.int64)
    half = np.maximum(half, np.abs(ms).max(axis=0) + 1)
    center = tuple(int(h) for h in half)
    m_idx = tuple(np.asarray([c + m[a] for m in ms], dtype=np.int64)
                  for a, c in enumerate(center))

    w = np.zeros(tuple(2 * h + 1 for h in half))
    for off, v in zip(excess.offsets, excess.values):
        w[tuple(int(o + c) for o, c in zip(off, center))] += v
    excess_win = w.copy()

    snap_list = sorted(snapshots) if snapshots is not None else []
    snap_vals = np.empty((len(snap_list), len(ms)))
    snap_at = {n: i for i, n in enumerate(snap_list)}

    totals = np.zeros(len(ms))
    for k in range(n_steps):
        totals += w[m_idx]
        if k + 1 in snap_at:
            snap_vals[snap_at[k + 1]] = totals
        if k + 1 < n_steps:
            w0 = w[center]
            w = convolve_window(w, apart)
            w += w0 * excess_win
    if snapshots is None:
        return totals
    return totals, snap_vals


def pair_nstep_column(spec: EnvSpec, n_steps: int) -> np.ndarray:
    """Dense window of the n-step (y -> 0) weights of the pair walk.

    The pair walk moves by the apart row away from the origin and by the
    same-site row at the origin; entry y of the returned array is its
    n-step transition weight from y to 0.  The origin sits at the center
    index and the window is wide enough to be exact.
    """
    same = pair_step_same_site(spec)
    apart = pair_step_apart(spec)
    radius = max(same.radius, apart.radius)
    half = np.full(spec.dim, max(radius * n_steps, 1), dtype=np.int64)
    center = tuple(int(h) for h in half)

    g = np.zeros(tuple(2 * h + 1 for h in half))
    g[center] = 1.0
    same_idx = tuple(np.asarray([c + z[a] for z in same.offsets], dtype=np.int64)
                     for a, c in enumerate(center))
    for _ in range(n_steps):
        origin_val = float(same.values @ g[same_idx])
        g = convolve_window(g, apart)
        g[center] = origin_val
    return g


def density_second_moments(spec: EnvSpec, n_max: int) -> np.ndarray:
    """Second moment of the stationary density for horizons 0..n_max.

    Equals the total mass of the n-step pair column; nondecreasing in the
    horizon and converging to 1/beta.
    """
    same = pair_step_same_site(spec)
    apart = pair_step_apart(spec)
    radius = max(same.radius, apart.radius)
    half = np.full(spec.dim, max(radius * n_max, 1), dtype=np.int64)
    center = tuple(int(h) for h in half)

    g = np.zeros(tuple(2 * h + 1 for h in half))
    g[center] = 1.0
    same_idx = tuple(np.asarray([c + z[a] for z in same.offsets], dtype=np.int64)
                     for a, c in enumerate(center))
    out = np.empty(n_max + 1)
    out[0] = 1.0
    for k in range(n_max):
        origin_val = float(same.values @ g[same_idx])
        g = convolve_window(g, apart)
        g[center] = origin_val
        out[k + 1] = g.sum()
    return out
