"""The stationary density functional of the environment.

Starting one unit of mass on every site and letting the environment push
it forward for ``horizon`` levels yields, at the observation site, the
density whose multiple is the intensity of the invariant Poisson field.
Mass entering a target window over ``horizon`` levels can only originate
within jump-range times horizon of it, so evolving on a padded window
gives values on the target window that are exact up to float rounding.

The evolution is vectorized both over the window and over replica
environments (distinct field keys), which is what the Monte Carlo
verification paths use.
"""

from __future__ import annotations

import numpy as np

from .envmodel import EnvField, EnvSpec, _draw_uniforms, _laws_from_uniforms
from .rng import Stream, hash_coords


def window_sites(half) -> np.ndarray:
    """All lattice sites of the centered box with per-axis half-widths."""
    half = np.atleast_1d(np.asarray(half, dtype=np.int64))
    axes = [np.arange(-h, h + 1, dtype=np.int64) for h in half]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _shift_add_batch(dst: np.ndarray, src: np.ndarray, offset, weight) -> None:
    """dst[..., x + offset] += weight[..., x] * src[..., x] on trailing axes."""
    offset = np.atleast_1d(offset)
    lead = src.ndim - len(offset)
    src_sl = [slice(None)] * lead
    dst_sl = [slice(None)] * lead
    for o, n in zip(offset, src.shape[lead:]):
        o = int(o)
        if o >= 0:
            src_sl.append(slice(0, n - o))
            dst_sl.append(slice(o, n))
        else:
            src_sl.append(slice(-o, n))
            dst_sl.append(slice(0, n + o))
    dst[tuple(dst_sl)] += weight[tuple(src_sl)] * src[tuple(src_sl)]


def density_windows(spec: EnvSpec, keys, horizon: int, half, *, level: int = 0,
                    origin_s: int = 0, origin_x=None, batch: int | None = None) -> np.ndarray:
    """Density at horizon ``horizon`` on a window, for many field keys at once.

    Returns an array of shape ``keys.shape + window shape`` whose entry at
    (r, y) is the density of field r shifted to observation point
    (level, y).  ``level`` is the observation time: the evolution consumes
    environment levels ``level - horizon .. level - 1``.
    """
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    half = np.broadcast_to(np.asarray(half, dtype=np.int64), (spec.dim,))
    if origin_x is None:
        origin_x = np.zeros(spec.dim, dtype=np.int64)

    if batch is not None and len(keys) > batch:
        parts = [density_windows(spec, keys[i:i + batch], horizon, half,
                                 level=level, origin_s=origin_s, origin_x=origin_x)
                 for i in range(0, len(keys), batch)]
        return np.concatenate(parts, axis=0)

    big = half + spec.jump_range * horizon
    shape = tuple(2 * h + 1 for h in big)
    sites = window_sites(big)
    abs_sites = sites + np.asarray(origin_x, dtype=np.int64)[None, :]

    u = np.ones((len(keys),) + shape)
    for s in range(level - horizon, level):
        uniforms = _draw_uniforms(spec, keys, s + origin_s, abs_sites)
        laws = _laws_from_uniforms(spec, uniforms).reshape(
            (len(keys),) + shape + (spec.n_offsets,))
        out = np.zeros_like(u)
        for j, z in enumerate(spec.offsets):
            _shift_add_batch(out, u, z, laws[..., j])
        u = out

    trim = tuple([slice(None)] + [slice(int(b - h), int(b + h + 1))
                                  for b, h in zip(big, half)])
    return u[trim]


def density_window(field: EnvField, horizon: int, half, level: int = 0) -> np.ndarray:
    """Exact density values of one field on a centered window."""
    out = density_windows(field.spec, np.uint64(field.sampling_key), horizon, half,
                          level=level, origin_s=field.origin_s,
                          origin_x=np.asarray(field.origin_x, dtype=np.int64))
    return out[0]


def density_at(field: EnvField, horizon: int, sites, level: int = 0) -> np.ndarray:
    """Exact density values of one field at the given sites."""
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    half = np.abs(sites).max(axis=0)
    win = density_window(field, horizon, half, level=level)
    idx = tuple(sites[:, a] + half[a] for a in range(field.spec.dim))
    return win[idx]


def harmonicity_residual(field: EnvField, horizon: int,
                         use_shifted: bool = False) -> float:
    """One-step consistency defect of the density functional at the origin.

    The horizon-(N+1) density at the origin must equal the horizon-N
    densities one level earlier, averaged against the jump law of the site
    that feeds the origin.  ``use_shifted`` evaluates the earlier densities
    through re-centered fields instead of direct off-origin evaluation,
    exercising the shift machinery; both routes must agree to rounding.
    """
    spec = field.spec
    origin = np.zeros((1, spec.dim), dtype=np.int64)
    lhs = float(density_at(field, horizon + 1, origin, level=0)[0])
    rhs = 0.0
    for j, z in enumerate(spec.offsets):
        x = -np.asarray(z, dtype=np.int64)
        if use_shifted:
            f_n = float(density_at(field.shifted(-1, x), horizon, origin)[0])
        else:
            f_n = float(density_at(field, horizon, x[None, :], level=-1)[0])
        rhs += float(field.kernel_at(-1, x).probs[j]) * f_n
    return abs(lhs - rhs)


def density_mc_origin(spec: EnvSpec, horizon: int, n_rep: int, stream: Stream,
                      batch: int = 20000) -> np.ndarray:
    """Density at the origin across ``n_rep`` independent replica fields.

    The sample mean estimates 1 (exactly, for every horizon) and the sample
    variance estimates the exact horizon-``horizon`` occupation variance.
    """
    keys = hash_coords(stream.child("density-mc").key, np.arange(n_rep))
    vals = density_windows(spec, keys, horizon, np.zeros(spec.dim, dtype=np.int64),
                           batch=batch)
    return vals.reshape(n_rep)
