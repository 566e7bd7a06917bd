"""Particle systems sharing one random environment.

Every particle at site x at level t draws its own jump from the law the
environment assigns to (t, x); particles at the same site draw
independently.  Jump randomness is addressed counter-mode by the
*absolute* coordinates (level, site, class tag, rank within the site),
which makes the dynamics exactly equivariant under shifting the
environment and reproducible in any evaluation order.

The coupling evolves three per-site classes: shared particles (present
in both marginal systems) and plus/minus excess particles (present in
only one).  All classes jump from the same local laws with independent
draws; colliding plus/minus excess pairs merge into shared particles.
Each marginal (shared + one excess class) then evolves exactly as a
plain one-class system in law, while the total excess mass can only
decrease.

Everything here is the d-general numpy reference implementation; the
long-horizon d=1 Monte Carlo loops live in ``_engines`` (numba) and are
parity-tested against this module.
"""

from __future__ import annotations

import numpy as np

from .density import density_window, density_windows, window_sites
from .envmodel import EnvField, EnvSpec, _draw_uniforms, _laws_from_uniforms
from .rng import Stream, extend_hash, hash_coords, u01

#: class tags feeding the jump-key hash chain
SHARED, PLUS, MINUS = 0, 1, 2


def jump_indices(laws: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF jump choice: laws (..., k), uniforms (...,) -> indices.

    A uniform in [cum_{i-1}, cum_i) selects offset i; the index is clamped
    to k-1 so float rounding in the cumulative sum can never overflow.
    """
    cum = np.cumsum(laws, axis=-1)
    idx = (u[..., None] >= cum).sum(axis=-1)
    return np.minimum(idx, laws.shape[-1] - 1)


def quenched_step_counts(spec: EnvSpec, env_keys, jump_keys, counts: np.ndarray,
                         first_site, level: int, *, origin_s: int = 0,
                         origin_x=None, class_tag: int = SHARED):
    """One synchronous step of per-site particle counts.

    ``counts`` has shape (n_rep,) + window, with the window's lower corner
    at lattice position ``first_site``; replica r uses environment key
    ``env_keys[r]`` and jump key ``jump_keys[r]``.  Returns (new_counts,
    new_first_site) on a window grown by the jump range on every side, so
    no landing is ever clipped and the step is exact.
    """
    counts = np.asarray(counts)
    squeeze = counts.ndim == spec.dim
    if squeeze:
        counts = counts[None]
    env_keys = np.atleast_1d(np.asarray(env_keys, dtype=np.uint64))
    jump_keys = np.atleast_1d(np.asarray(jump_keys, dtype=np.uint64))
    first_site = np.broadcast_to(np.asarray(first_site, dtype=np.int64), (spec.dim,))
    if origin_x is None:
        origin_x = np.zeros(spec.dim, dtype=np.int64)
    origin_x = np.asarray(origin_x, dtype=np.int64)

    n_rep = counts.shape[0]
    window = counts.shape[1:]
    rng_range = spec.jump_range
    new_window = tuple(w + 2 * rng_range for w in window)
    new_first = first_site - rng_range

    sites = np.stack([g.ravel() for g in np.meshgrid(
        *[np.arange(w) for w in window], indexing="ij")], axis=-1)  # window indices
    flat_counts = counts.reshape(n_rep, -1)
    occupied = np.nonzero(flat_counts.max(axis=0) > 0)[0]

    new_flat = np.zeros((n_rep,) + (int(np.prod(new_window)),), dtype=counts.dtype)
    t_abs = level + origin_s

    for col in occupied:
        idx_vec = sites[col]
        x_lat = idx_vec + first_site          # lattice coordinates of the site
        x_abs = x_lat + origin_x              # absolute field coordinates
        laws = _laws_from_uniforms(
            spec, _draw_uniforms(spec, env_keys, t_abs, x_abs[None, :]))[:, 0, :]
        cum = np.cumsum(laws, axis=-1)

        dest_cols = np.asarray([
            int(np.ravel_multi_index(tuple(idx_vec + rng_range + z), new_window))
            for z in spec.offsets])

        cnt = flat_counts[:, col]
        prefix = hash_coords(jump_keys, t_abs, *x_abs, class_tag)
        for j in range(int(cnt.max())):
            active = cnt > j
            u = u01(extend_hash(prefix, j))
            choice = np.minimum((u[:, None] >= cum).sum(axis=1), spec.n_offsets - 1)
            for k_off in range(spec.n_offsets):
                sel = active & (choice == k_off)
                if np.any(sel):
                    new_flat[sel, dest_cols[k_off]] += 1

    new_counts = new_flat.reshape((n_rep,) + new_window)
    if squeeze:
        new_counts = new_counts[0]
    return new_counts, new_first


def initial_coupling(eta: np.ndarray, zeta: np.ndarray):
    """Split two occupancy fields into shared / plus-excess / minus-excess."""
    shared = np.minimum(eta, zeta)
    return shared, eta - shared, zeta - shared


def coupled_step_counts(spec: EnvSpec, env_keys, jump_keys, shared, plus, minus,
                        first_site, level: int, *, origin_s: int = 0, origin_x=None):
    """One coupled step: all three classes jump, then excess pairs merge."""
    sh, fs = quenched_step_counts(spec, env_keys, jump_keys, shared, first_site,
                                  level, origin_s=origin_s, origin_x=origin_x,
                                  class_tag=SHARED)
    pl, _ = quenched_step_counts(spec, env_keys, jump_keys, plus, first_site,
                                 level, origin_s=origin_s, origin_x=origin_x,
                                 class_tag=PLUS)
    mi, _ = quenched_step_counts(spec, env_keys, jump_keys, minus, first_site,
                                 level, origin_s=origin_s, origin_x=origin_x,
                                 class_tag=MINUS)
    merged = np.minimum(pl, mi)
    return sh + merged, pl - merged, mi - merged, fs


def invariance_check(spec: EnvSpec, horizon: int, obs_half: int, rho: float,
                     n_rep: int, stream: Stream, batch: int = 2000) -> dict:
    """One-step stationarity of the Poisson field with density intensities.

    For each replica environment: draw site counts Poisson(rho * density at
    horizon), advance every particle one quenched step, and compare the
    occupancies on the observation window against Poisson(rho * density at
    horizon + 1, one level later).  Under stationarity both the means and
    the second factorial moments match the intensity predictions, and the
    paired per-replica differences have mean zero; their z-scores are
    returned per site and aggregated over the window.
    """
    d = spec.dim
    rng_range = spec.jump_range
    init_half = obs_half + rng_range
    obs_shape = tuple(2 * obs_half + 1 for _ in range(d))
    n_sites = int(np.prod(obs_shape))

    env_keys = hash_coords(stream.child("fields").key, np.arange(n_rep))
    jump_keys = hash_coords(stream.child("jumps").key, np.arange(n_rep))
    gen = stream.child("init").generator()

    sums = np.zeros((4, n_sites))   # d1, d1^2, d2, d2^2 per site
    agg = np.zeros((4,))            # replica-level window totals

    for lo in range(0, n_rep, batch):
        kb = env_keys[lo:lo + batch]
        jb = jump_keys[lo:lo + batch]
        lam0 = rho * density_windows(spec, kb, horizon, init_half, level=0)
        eta0 = gen.poisson(lam0)
        eta1, first = quenched_step_counts(
            spec, kb, jb, eta0, np.full(d, -init_half), 0)
        trim = tuple([slice(None)] + [slice(int(-obs_half - first[a]),
                                            int(obs_half - first[a] + 1))
                                      for a in range(d)])
        obs = eta1[trim].reshape(len(kb), n_sites).astype(np.float64)
        lam1 = rho * density_windows(spec, kb, horizon + 1, obs_half, level=1)
        lam1 = lam1.reshape(len(kb), n_sites)

        d1 = obs - lam1
        d2 = obs * (obs - 1.0) - lam1 ** 2
        sums[0] += d1.sum(axis=0)
        sums[1] += (d1 ** 2).sum(axis=0)
        sums[2] += d2.sum(axis=0)
        sums[3] += (d2 ** 2).sum(axis=0)
        t1 = d1.sum(axis=1)
        t2 = d2.sum(axis=1)
        agg += np.array([t1.sum(), (t1 ** 2).sum(), t2.sum(), (t2 ** 2).sum()])

    def z_of(total, total_sq, n):
        mean = total / n
        var = (total_sq - n * mean ** 2) / (n - 1)
        se = np.sqrt(np.maximum(var, 1e-300) / n)
        return mean / se

    z_mean = z_of(sums[0], sums[1], n_rep)
    z_disp = z_of(sums[2], sums[3], n_rep)
    return {
        "n_rep": n_rep,
        "horizon": horizon,
        "obs_half": obs_half,
        "rho": rho,
        "max_abs_z_mean": float(np.abs(z_mean).max()),
        "max_abs_z_disp": float(np.abs(z_disp).max()),
        "agg_z_mean": float(z_of(agg[0], agg[1], n_rep)),
        "agg_z_disp": float(z_of(agg[2], agg[3], n_rep)),
        "n_sites": n_sites,
        "z_mean": z_mean.reshape(obs_shape),
        "z_disp": z_disp.reshape(obs_shape),
    }


def quenched_profile_check(field: EnvField, horizon: int, obs_half: int,
                           rho: float, n_rep: int, stream: Stream,
                           batch: int = 2000) -> dict:
    """Per-site occupation statistics after one step in one fixed environment.

    Each replica draws Poisson(rho * density at ``horizon``) counts on a
    padded window and advances them one quenched step with fresh jump
    randomness; the per-site empirical means on the observation window
    estimate rho times the exact densities at ``horizon + 1`` one level
    later.  Returned means and standard errors are divided by ``rho`` so
    they compare directly against the density column.
    """
    spec = field.spec
    d = spec.dim
    init_half = obs_half + spec.jump_range
    lam0 = rho * density_window(field, horizon, np.full(d, init_half), level=0)
    pred = density_window(field, horizon + 1, np.full(d, obs_half), level=1)

    env_keys = np.full(n_rep, np.uint64(field.sampling_key), dtype=np.uint64)
    jump_keys = hash_coords(stream.child("jumps").key, np.arange(n_rep))
    gen = stream.child("init").generator()

    obs_shape = tuple(2 * obs_half + 1 for _ in range(d))
    n_sites = int(np.prod(obs_shape))
    s1 = np.zeros(n_sites)
    s2 = np.zeros(n_sites)
    for lo in range(0, n_rep, batch):
        nb = min(batch, n_rep - lo)
        eta0 = gen.poisson(np.broadcast_to(lam0, (nb,) + lam0.shape))
        eta1, first = quenched_step_counts(
            spec, env_keys[lo:lo + nb], jump_keys[lo:lo + nb], eta0,
            np.full(d, -init_half), 0,
            origin_s=field.origin_s, origin_x=field.origin_x)
        trim = tuple([slice(None)] + [slice(int(-obs_half - first[a]),
                                            int(obs_half - first[a] + 1))
                                      for a in range(d)])
        obs = eta1[trim].reshape(nb, n_sites) / rho
        s1 += obs.sum(axis=0)
        s2 += (obs ** 2).sum(axis=0)

    mean = s1 / n_rep
    var = np.maximum(s2 - n_rep * mean ** 2, 0.0) / (n_rep - 1)
    se = np.sqrt(var / n_rep)
    return {
        "horizon": horizon,
        "obs_half": obs_half,
        "rho": rho,
        "n_rep": n_rep,
        "sites": window_sites(obs_half),
        "density": pred.reshape(n_sites),
        "empirical_mean": mean,
        "empirical_se": se,
    }


def sample_initial(gen: np.random.Generator, law, size: int) -> np.ndarray:
    """Draw an i.i.d. initial occupation row from a named marginal law.

    law is ("poisson", mean) or ("two_mass", value, prob): ``value``
    particles with probability ``prob``, else none (mean value * prob).
    """
    kind = law[0]
    if kind == "poisson":
        return gen.poisson(float(law[1]), size=size).astype(np.int64)
    if kind == "two_mass":
        value, prob = int(law[1]), float(law[2])
        return value * gen.binomial(1, prob, size=size).astype(np.int64)
    raise ValueError(f"unknown initial law {kind!r}")


def initial_mean(law) -> float:
    kind = law[0]
    if kind == "poisson":
        return float(law[1])
    if kind == "two_mass":
        return int(law[1]) * float(law[2])
    raise ValueError(f"unknown initial law {kind!r}")


def coupling_decay(spec: EnvSpec, horizon: int, n_rep: int, stream,
                   eta_law=("poisson", 1.0), zeta_law=("two_mass", 2, 0.5),
                   inner_half: int = 50, track_shared: bool = False,
                   reps=None):
    """Decay of the coupled-discrepancy mass between two initial laws.

    Both occupation fields start i.i.d. with equal means, ride the same
    environment and the same jump randomness under the componentwise-minimum
    coupling, and the surviving plus/minus discrepancy masses inside the
    measurement window |x| <= inner_half are recorded at every step.  The
    evolution window is padded by the full influence cone (jump range times
    horizon), so edge clamping never reaches the measured sites and the
    recorded values are exact samples of the infinite-volume dynamics.

    Because jump randomness is keyed per class, the matched (shared) mass
    never influences the discrepancy trajectories; by default it is not
    simulated at all.  ``track_shared=True`` evolves it too, yielding
    terminal occupied means of both marginals as a coupling sanity check.

    Per-step means/SEs are reported per site (spatial stationarity makes
    every site in the exact window an identically distributed copy of the
    origin).

    ``reps`` selects explicit replica indices (overriding ``n_rep``); every
    replica is keyed by its absolute index, so disjoint blocks computed
    separately and merged with :func:`merge_decay_runs` reproduce the
    single-call result exactly.
    """
    from . import _engines

    if spec.dim != 1:
        raise ValueError("the coupling experiment is one-dimensional")
    fam, offs, law_a, law_b, weight_a = _engines.family_code(spec)
    rng_range = spec.jump_range
    evolve_half = inner_half + rng_range * horizon
    width = 2 * evolve_half + 1
    n_inner = 2 * inner_half + 1

    if reps is None:
        reps = np.arange(n_rep, dtype=np.int64)
    else:
        reps = np.asarray(reps, dtype=np.int64)
        n_rep = reps.size
    env_keys = hash_coords(stream.child("fields").key, reps)
    jump_keys = hash_coords(stream.child("jumps").key, reps)
    init_keys = hash_coords(stream.child("init").key, reps)

    series = np.empty((n_rep, horizon + 1, 2), dtype=np.int64)
    eta_tail = np.empty(n_rep)
    zeta_tail = np.empty(n_rep)
    decay = np.zeros((horizon + 1, 2), dtype=np.int64)
    for rep in range(n_rep):
        gen = np.random.Generator(np.random.Philox(key=int(init_keys[rep])))
        eta = sample_initial(gen, eta_law, width)
        zeta = sample_initial(gen, zeta_law, width)
        shared, plus, minus = initial_coupling(eta, zeta)
        if not track_shared:
            shared = np.zeros_like(shared)
        _engines.couple_run(env_keys[rep], jump_keys[rep], fam, offs,
                            law_a, law_b, weight_a, shared, plus, minus,
                            -evolve_half, horizon, -inner_half, inner_half,
                            decay)
        series[rep] = decay
        sl = slice(evolve_half - inner_half, evolve_half + inner_half + 1)
        eta_tail[rep] = (shared[sl] + plus[sl]).mean()
        zeta_tail[rep] = (shared[sl] + minus[sl]).mean()
    out = _decay_stats(series, n_inner)
    out.update(
        horizon=horizon,
        inner_half=inner_half,
        evolve_half=evolve_half,
        eta_mean=initial_mean(eta_law),
        zeta_mean=initial_mean(zeta_law),
    )
    if track_shared:
        out["eta_terminal"] = eta_tail
        out["zeta_terminal"] = zeta_tail
        out["eta_terminal_mean"] = float(eta_tail.mean())
        out["zeta_terminal_mean"] = float(zeta_tail.mean())
    return out


def _decay_stats(series: np.ndarray, n_inner: int) -> dict:
    """Per-site mean/SE summaries of an integer discrepancy series block."""
    n_rep = series.shape[0]
    per_site = series / float(n_inner)
    mean = per_site.mean(axis=0)
    if n_rep > 1:
        se = per_site.std(axis=0, ddof=1) / np.sqrt(n_rep)
    else:
        se = np.zeros_like(mean)
    return {
        "n_rep": n_rep,
        "n_inner_sites": n_inner,
        "plus_mean": mean[:, 0],
        "plus_se": se[:, 0],
        "minus_mean": mean[:, 1],
        "minus_se": se[:, 1],
        "series": series,
    }


def merge_decay_runs(runs) -> dict:
    """Exactly merge :func:`coupling_decay` results from disjoint replica blocks.

    The per-replica series are integers keyed by absolute replica index, so
    concatenating blocks (in index order) and re-deriving the statistics
    reproduces the single-call arrays bit for bit, independent of how the
    replicas were partitioned.
    """
    runs = list(runs)
    series = np.concatenate([r["series"] for r in runs], axis=0)
    out = dict(runs[0])
    out.update(_decay_stats(series, runs[0]["n_inner_sites"]))
    if "eta_terminal" in runs[0]:
        eta = np.concatenate([r["eta_terminal"] for r in runs])
        zeta = np.concatenate([r["zeta_terminal"] for r in runs])
        out.update(eta_terminal=eta, zeta_terminal=zeta,
                   eta_terminal_mean=float(eta.mean()),
                   zeta_terminal_mean=float(zeta.mean()))
    return out
