"""Particle-current fluctuations and their Gaussian limit.

The signed current through a moving threshold is, for a level ``c`` and a
step count ``T``,

    Y = sum over initial sites x > 0 of walkers at or below c at time T
      - sum over initial sites x <= 0 of walkers above c at time T.

Walkers start from a Poisson field whose intensity is ``rho`` times the
stationary density profile, move independently through one shared
environment, and the environment-resolved mean of Y is subtracted before
scaling.  Centered currents at macroscopic observation points (t, r)
(threshold c = floor(n*v*t) + r*sqrt(n) at step floor(n*t), scaled by
n**(-1/4)) converge to a centered Gaussian field; this module carries the
closed-form limit covariance, an independent Brownian-functional oracle
for it, exact quenched crossing probabilities, and the Monte Carlo driver
that measures the finite-n Gram matrix.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.stats import norm

from . import _engines
from .density import density_at
from .envmodel import EnvField, EnvSpec
from .kernels import drift_and_variance
from .rng import Stream, hash_coords


def half_gaussian_expectation(var, x):
    """E[(B - x)^+] for B ~ N(0, var); equals max(-x, 0) when var == 0."""
    var = np.asarray(var, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.maximum(-x, 0.0)
    pos = var > 0
    if np.any(pos):
        sd = np.sqrt(np.where(pos, var, 1.0))
        z = x / sd
        val = sd * norm.pdf(z) - x * (1.0 - norm.cdf(z))
        out = np.where(pos, val, out)
    if out.ndim == 0:
        return float(out)
    return out


def gamma_pair(s, q, t, r, sigma2):
    """The two covariance shape factors for observation points (s,q), (t,r).

    The first multiplies the mean particle density (motion noise), the
    second the variance of the initial occupation field (seeding noise).
    Both are symmetric in the two points and nonnegative.
    """
    psi = half_gaussian_expectation
    g1 = psi(sigma2 * (t + s), r - q) - psi(sigma2 * abs(t - s), r - q)
    g2 = psi(sigma2 * s, -q) + psi(sigma2 * t, r) - psi(sigma2 * (t + s), r - q)
    return float(g1), float(g2)


def limit_cov(points, sigma2, rho0=1.0, sig02=1.0):
    """Limit covariance matrix of the scaled current at ``points``.

    points: sequence of (t, r) macroscopic observation points, t > 0.
    sigma2: variance rate of the averaged walk (per unit macroscopic time).
    rho0:   mean particle density of the initial field.
    sig02:  variance density of the initial field (== rho0 for Poisson).
    """
    pts = [(float(t), float(r)) for t, r in points]
    n = len(pts)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            g1, g2 = gamma_pair(pts[i][0], pts[i][1], pts[j][0], pts[j][1], sigma2)
            out[i, j] = out[j, i] = rho0 * g1 + sig02 * g2
    return out


# ---------------------------------------------------------------------------
# Brownian-functional oracle for the same covariance
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = leggauss(24)


def _composite_gl(lo, hi, n_panels):
    """Composite Gauss-Legendre nodes/weights on [lo, hi]."""
    edges = np.linspace(lo, hi, n_panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return x, w


def _binorm_cdf(a, b, corr):
    """P(Z1 <= a, Z2 <= b) for standard normals with correlation corr.

    Vectorized over a, b (broadcast together); corr is a scalar in (-1, 1).
    Uses the one-dimensional reduction P = int_{-inf}^{a} phi(z) *
    Phi((b - corr z)/sqrt(1-corr^2)) dz on a truncated panelized grid.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    if corr >= 1.0 - 1e-12:
        return norm.cdf(np.minimum(a, b))
    if corr <= -1.0 + 1e-12:
        return np.maximum(norm.cdf(a) + norm.cdf(b) - 1.0, 0.0)
    zmax = 8.0
    hi = np.clip(a, -zmax, zmax)
    nodes, weights = _composite_gl(-1.0, 1.0, 8)
    center = 0.5 * (hi - zmax)
    half = 0.5 * (hi + zmax)
    z = center[..., None] + half[..., None] * nodes
    s = math.sqrt(1.0 - corr * corr)
    integrand = norm.pdf(z) * norm.cdf((b[..., None] - corr * z) / s)
    return np.einsum("...k,k->...", integrand, weights) * half


def gamma_pair_bm(s, q, t, r, sigma2, n_panels=40):
    """Shape factors computed directly from the Brownian crossing picture.

    Independent of the closed forms in gamma_pair: the motion factor is
    the integrated covariance of one walker's two crossing indicators, the
    seeding factor the integrated product of crossing means.
    """
    sd_s = math.sqrt(sigma2 * s)
    sd_t = math.sqrt(sigma2 * t)
    corr = sigma2 * min(s, t) / (sd_s * sd_t)
    reach = 10.0 * max(sd_s, sd_t) + abs(q) + abs(r) + 1.0

    def parts(x):
        aa = (q - x) / sd_s
        bb = (r - x) / sd_t
        joint = _binorm_cdf(aa, bb, corr)
        fs = norm.cdf(aa)
        ft = norm.cdf(bb)
        return joint - fs * ft, fs, ft

    xn, wn = _composite_gl(-reach, 0.0, n_panels)
    xp, wp = _composite_gl(0.0, reach, n_panels)
    c_n, fs_n, ft_n = parts(xn)
    c_p, fs_p, ft_p = parts(xp)
    g1 = float(wn @ c_n + wp @ c_p)
    g2 = float(wp @ (fs_p * ft_p) + wn @ ((1.0 - fs_n) * (1.0 - ft_n)))
    return g1, g2


def limit_cov_bm(points, sigma2, rho0=1.0, sig02=1.0, n_panels=40):
    """limit_cov computed through the Brownian-functional integrals."""
    pts = [(float(t), float(r)) for t, r in points]
    n = len(pts)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            g1, g2 = gamma_pair_bm(pts[i][0], pts[i][1], pts[j][0], pts[j][1],
                                   sigma2, n_panels=n_panels)
            out[i, j] = out[j, i] = rho0 * g1 + sig02 * g2
    return out


# ---------------------------------------------------------------------------
# quenched crossing probabilities (exact numpy reference)
# ---------------------------------------------------------------------------


def crossing_probs(field: EnvField, steps: int, threshold: int, clamp_k=0.0):
    """Probability of finishing at or below ``threshold`` after ``steps``.

    Returns (band_lo, g) where g[i] is the quenched probability for a
    walker starting at site band_lo + i at level 0; starting points below
    the band finish at or below the threshold surely, points above it
    never do.  clamp_k > 0 trims the band to that many standard deviations
    around the drifting front (Gaussian-tail truncation error).
    """
    spec = field.spec
    if spec.dim != 1:
        raise ValueError("crossing probabilities are one-dimensional")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    offs = spec.offsets[:, 0]
    zmin = int(offs.min())
    zmax = int(offs.max())
    v, cov = drift_and_variance(spec)
    drift = float(v[0])
    sig = math.sqrt(float(cov[0, 0]))

    lo_next = threshold + 1
    hi_next = threshold
    g_next = np.zeros(0)
    for s in range(steps - 1, -1, -1):
        rem = steps - s
        lo = threshold - zmax * rem + 1
        hi = threshold - zmin * rem
        if clamp_k > 0.0:
            spread = clamp_k * sig * math.sqrt(rem) + 1.0
            lo = max(lo, int(math.floor(threshold - drift * rem - spread)))
            hi = min(hi, int(math.ceil(threshold - drift * rem + spread)))
        sites = np.arange(lo, hi + 1)
        laws = field.laws_block(s, sites[:, None])
        g = np.zeros(sites.size)
        for j, z in enumerate(offs):
            yz = sites + int(z)
            vals = np.where(yz < lo_next, 1.0, 0.0)
            inside = (yz >= lo_next) & (yz <= hi_next)
            if g_next.size:
                vals[inside] = g_next[yz[inside] - lo_next]
            g += laws[:, j] * vals
        g_next, lo_next, hi_next = g, lo, hi
    return lo_next, g_next


def crossing_prob_at(field: EnvField, steps: int, threshold: int, sites,
                     clamp_k=0.0):
    """crossing_probs evaluated at arbitrary starting sites (with plateaus)."""
    band_lo, g = crossing_probs(field, steps, threshold, clamp_k=clamp_k)
    sites = np.asarray(sites, dtype=np.int64)
    out = np.where(sites < band_lo, 1.0, 0.0)
    inside = (sites >= band_lo) & (sites < band_lo + g.size)
    if g.size:
        out[inside] = g[sites[inside] - band_lo]
    return out


def quenched_current_mean(field: EnvField, steps: int, threshold: int,
                          rho=1.0, dens_horizon=64, clamp_k=0.0):
    """Environment-resolved mean of the signed current Y (see module doc)."""
    spec = field.spec
    offs = spec.offsets[:, 0]
    zmin = int(offs.min())
    zmax = int(offs.max())
    a_lo = threshold - zmax * steps + 1
    a_hi = threshold - zmin * steps
    total = 0.0
    if a_hi >= 1:
        sites = np.arange(1, a_hi + 1)
        f = density_at(field, dens_horizon, sites[:, None], level=0)
        g = crossing_prob_at(field, steps, threshold, sites, clamp_k=clamp_k)
        total += float(f @ g)
    if a_lo <= 0:
        sites = np.arange(a_lo, 1)
        f = density_at(field, dens_horizon, sites[:, None], level=0)
        g = crossing_prob_at(field, steps, threshold, sites, clamp_k=clamp_k)
        total -= float(f @ (1.0 - g))
    return rho * total


# ---------------------------------------------------------------------------
# Monte Carlo driver
# ---------------------------------------------------------------------------


def simulate_current(spec: EnvSpec, n: int, points, rho: float, n_rep: int,
                     stream: Stream, dens_horizon: int = 64,
                     clamp_k: float = 8.0, reps=None):
    """Sample the scaled centered current at ``points`` over fresh environments.

    points are macroscopic (t, r); each replica draws one environment, one
    Poisson initial field (intensity rho * density profile), walks every
    particle through the shared noise, and records n**(-1/4) * (Y - E_env Y)
    jointly at all points.  Returns the samples with empirical mean, the
    empirical second-moment (Gram) matrix with entrywise standard errors,
    and the predicted limit matrix.

    ``reps`` selects explicit replica indices (overriding ``n_rep``); each
    replica is keyed by its absolute index, so disjoint blocks merged with
    :func:`merge_current_runs` reproduce the single-call result exactly.
    """
    if spec.dim != 1:
        raise ValueError("the current experiment is one-dimensional")
    fam, offs, law_a, law_b, weight_a = _engines.family_code(spec)
    v, cov = drift_and_variance(spec)
    drift = float(v[0])
    sigma2 = float(cov[0, 0])
    sig = math.sqrt(sigma2)
    zmin = int(offs.min())
    zmax = int(offs.max())

    pts = [(float(t), float(r)) for t, r in points]
    npts = len(pts)
    t_steps = np.array([int(math.floor(n * t)) for t, _ in pts], dtype=np.int64)
    c_ints = np.array(
        [int(math.floor(math.floor(n * drift * t) + r * math.sqrt(n)))
         for t, r in pts],
        dtype=np.int64,
    )
    if np.any(t_steps <= 0):
        raise ValueError("observation times must satisfy floor(n*t) >= 1")
    snap_times, snap_of = np.unique(t_steps, return_inverse=True)
    snap_times = snap_times.astype(np.int64)
    snap_of = snap_of.astype(np.int64)
    act_lo = c_ints - zmax * t_steps + 1
    act_hi = c_ints - zmin * t_steps
    if np.any(act_lo > 0) or np.any(act_hi < 0):
        raise ValueError(
            "threshold drifts outside the random-crossing window; choose "
            "points with |r| sqrt(n) below the jump-range times floor(n*t)")
    u_lo = int(act_lo.min())
    u_hi = int(act_hi.max())

    if reps is None:
        reps = np.arange(n_rep, dtype=np.int64)
    else:
        reps = np.asarray(reps, dtype=np.int64)
        n_rep = reps.size
    env_keys = hash_coords(stream.child("fields").key, reps)
    jump_keys = hash_coords(stream.child("jumps").key, reps)
    init_keys = hash_coords(stream.child("init").key, reps)

    raw = np.empty((n_rep, npts))
    quenched = np.empty((n_rep, npts))
    y_buf = np.empty(npts)
    ey_buf = np.empty(npts)
    for rep in range(n_rep):
        _engines.current_replica_1d(
            env_keys[rep], jump_keys[rep], init_keys[rep], fam, offs,
            law_a, law_b, weight_a, snap_times, c_ints, snap_of,
            act_lo, act_hi, u_lo, u_hi, rho, dens_horizon, clamp_k,
            drift, sig, y_buf, ey_buf)
        raw[rep] = y_buf
        quenched[rep] = ey_buf

    scale = float(n) ** -0.25
    samples = scale * (raw - quenched)
    out = _current_stats(samples)
    out.update(
        n=n,
        points=pts,
        rho=rho,
        t_steps=t_steps,
        thresholds=c_ints,
        drift=drift,
        sigma2=sigma2,
        limit=limit_cov(pts, sigma2, rho0=rho, sig02=rho),
    )
    return out


def _current_stats(samples: np.ndarray) -> dict:
    """Mean and second-moment summaries of a block of current samples."""
    n_rep = samples.shape[0]
    mean = samples.mean(axis=0)
    prods = samples[:, :, None] * samples[:, None, :]
    gram = prods.mean(axis=0)
    if n_rep > 1:
        mean_se = samples.std(axis=0, ddof=1) / math.sqrt(n_rep)
        gram_se = prods.std(axis=0, ddof=1) / math.sqrt(n_rep)
    else:
        mean_se = np.zeros_like(mean)
        gram_se = np.zeros_like(gram)
    return {
        "n_rep": n_rep,
        "samples": samples,
        "mean": mean,
        "mean_se": mean_se,
        "gram": gram,
        "gram_se": gram_se,
    }


def merge_current_runs(runs) -> dict:
    """Exactly merge :func:`simulate_current` results from disjoint replica blocks.

    Each replica's sample vector depends only on its absolute index, so
    concatenating blocks in index order and re-deriving the statistics
    reproduces the single-call result bit for bit, independent of the
    partition.
    """
    runs = list(runs)
    samples = np.concatenate([r["samples"] for r in runs], axis=0)
    out = dict(runs[0])
    out.update(_current_stats(samples))
    return out
