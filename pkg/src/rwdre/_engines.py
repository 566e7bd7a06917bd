"""Serial numba kernels for long-horizon d=1 Monte Carlo.

These loops re-implement the exact counter-mode hash chain of ``rng`` /
``envmodel`` (parity-pinned by tests), so a numba run and the numpy
reference produce bit-identical particle trajectories from the same
keys.  Only the families actually used in long runs are supported:

====  =====================  ==========================================
code  family                 parameters used
====  =====================  ==========================================
0     deterministic          law_a (the fixed law)
1     dirichlet, all ones    none (law arrays ignored)
2     two_point              law_a, law_b, weight_a
====  =====================  ==========================================

General Dirichlet laws need incomplete-gamma inversion and stay on the
vectorized numpy path.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .envmodel import EnvSpec

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MULT = np.uint64(0xD6E8FEB86659FD93)


def family_code(spec: EnvSpec):
    """Map a spec to (code, offsets_1d, law_a, law_b, weight_a) engine params."""
    if spec.dim != 1:
        raise ValueError("engine kernels are one-dimensional")
    offs = spec.offsets[:, 0].astype(np.int64)
    k = spec.n_offsets
    zeros = np.zeros(k)
    if spec.family == "deterministic":
        return 0, offs, spec.law.copy(), zeros, 0.0
    if spec.family == "dirichlet":
        if not np.all(spec.alpha == 1.0):
            raise ValueError("engine kernels support only all-ones dirichlet laws")
        return 1, offs, zeros, zeros, 0.0
    return 2, offs, spec.law_a.copy(), spec.law_b.copy(), float(spec.weight_a)


@njit(cache=True, inline="always")
def _mix64(x):
    x = np.uint64(x)
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


@njit(cache=True, inline="always")
def _chain_start(key):
    return _mix64(np.uint64(key) + _GOLDEN)


@njit(cache=True, inline="always")
def _extend(h, c):
    return _mix64((np.uint64(h) ^ (np.uint64(c) * _MULT)) + _GOLDEN)


@njit(cache=True, inline="always")
def _u01(bits):
    return np.float64(bits >> np.uint64(11)) * (2.0 ** -53)


@njit(cache=True, inline="always")
def _env_prefix(env_key, t, x):
    return _extend(_extend(_chain_start(env_key), t), x)


@njit(cache=True)
def _law_at(prefix, fam, law_a, law_b, weight_a, out):
    k = out.size
    if fam == 0:
        for j in range(k):
            out[j] = law_a[j]
    elif fam == 1:
        total = 0.0
        for j in range(k):
            u = _u01(_extend(prefix, j))
            g = -np.log1p(-u)
            out[j] = g
            total += g
        if total == 0.0:
            total = 1.0
        for j in range(k):
            out[j] /= total
    else:
        u = _u01(_extend(prefix, 0))
        if u < weight_a:
            for j in range(k):
                out[j] = law_a[j]
        else:
            for j in range(k):
                out[j] = law_b[j]


@njit(cache=True, inline="always")
def _pick(cum, u):
    k = cum.size
    z = 0
    while z < k - 1 and u >= cum[z]:
        z += 1
    return z


@njit(cache=True)
def _poisson_icdf(u, lam):
    p = np.exp(-lam)
    cum = p
    n = 0
    while u >= cum and n < 500:
        n += 1
        p *= lam / n
        cum += p
    return n


# ---------------------------------------------------------------------------
# density by forward evolution (exact on the requested range)
# ---------------------------------------------------------------------------


@njit(cache=True)
def density_range_1d(env_key, fam, offsets, law_a, law_b, weight_a,
                     horizon, level, lo, hi):
    """Density values at sites lo..hi (inclusive) observed at ``level``."""
    k = offsets.size
    rng_range = 0
    for j in range(k):
        if abs(offsets[j]) > rng_range:
            rng_range = abs(offsets[j])
    base = lo - rng_range * horizon
    width = (hi - lo + 1) + 2 * rng_range * horizon
    f = np.ones(width)
    law = np.empty(k)
    for s in range(level - horizon, level):
        nf = np.zeros(width)
        for i in range(width):
            if f[i] == 0.0:
                continue
            _law_at(_env_prefix(env_key, s, base + i), fam, law_a, law_b, weight_a, law)
            for j in range(k):
                dest = i + offsets[j]
                if 0 <= dest < width:
                    nf[dest] += f[i] * law[j]
        f = nf
    out = np.empty(hi - lo + 1)
    for i in range(hi - lo + 1):
        out[i] = f[lo - base + i]
    return out


# ---------------------------------------------------------------------------
# coupled occupation dynamics
# ---------------------------------------------------------------------------


@njit(cache=True)
def couple_run(env_key, jump_key, fam, offsets, law_a, law_b, weight_a,
               shared, plus, minus, first, horizon, inner_lo, inner_hi,
               decay_out):
    """Evolve the three coupled classes in place for ``horizon`` steps.

    ``decay_out[t]`` receives (plus total, minus total) inside sites
    inner_lo..inner_hi before step t (and after the last).  Landings
    outside the window are clamped to the edge; callers size the window so
    the clamp never influences the measured region.

    Jump randomness is keyed by (step, site, class, within-site rank), so
    the plus/minus trajectories do not depend on the shared field at all:
    passing an all-zero ``shared`` reproduces the exact same discrepancy
    evolution at a fraction of the cost.

    The update rule is local (range = max |offset|), so only the backward
    light cone of the recording window is ever processed: at step t the
    loop covers sites within inner bounds widened by range * (horizon - t).
    Sites outside the shrinking cone are left stale — they can no longer
    influence any recorded value.
    """
    w = shared.size
    k = offsets.size
    rng_range = 0
    for j in range(k):
        if abs(offsets[j]) > rng_range:
            rng_range = abs(offsets[j])
    law = np.empty(k)
    cum = np.empty(k)
    n_sh = np.empty(w, np.int64)
    n_pl = np.empty(w, np.int64)
    n_mi = np.empty(w, np.int64)

    tot_p = 0
    tot_m = 0
    for i in range(max(0, inner_lo - first), min(w - 1, inner_hi - first) + 1):
        tot_p += plus[i]
        tot_m += minus[i]
    decay_out[0, 0] = tot_p
    decay_out[0, 1] = tot_m

    for t in range(horizon):
        reach = rng_range * (horizon - t)
        src_lo = max(0, inner_lo - reach - first)
        src_hi = min(w - 1, inner_hi + reach - first)
        dst_lo = max(0, src_lo - rng_range)
        dst_hi = min(w - 1, src_hi + rng_range)
        for i in range(dst_lo, dst_hi + 1):
            n_sh[i] = 0
            n_pl[i] = 0
            n_mi[i] = 0
        for i in range(src_lo, src_hi + 1):
            if shared[i] + plus[i] + minus[i] == 0:
                continue
            x = first + i
            _law_at(_env_prefix(env_key, t, x), fam, law_a, law_b, weight_a, law)
            cum[0] = law[0]
            for j in range(1, k):
                cum[j] = cum[j - 1] + law[j]
            for cls in range(3):
                cnt = shared[i] if cls == 0 else (plus[i] if cls == 1 else minus[i])
                if cnt == 0:
                    continue
                jprefix = _extend(_extend(_extend(
                    _chain_start(jump_key), t), x), cls)
                for j in range(cnt):
                    z = _pick(cum, _u01(_extend(jprefix, j)))
                    dest = i + offsets[z]
                    if dest < dst_lo:
                        dest = dst_lo
                    elif dest > dst_hi:
                        dest = dst_hi
                    if cls == 0:
                        n_sh[dest] += 1
                    elif cls == 1:
                        n_pl[dest] += 1
                    else:
                        n_mi[dest] += 1
        tot_p = 0
        tot_m = 0
        for i in range(dst_lo, dst_hi + 1):
            merged = min(n_pl[i], n_mi[i])
            shared[i] = n_sh[i] + merged
            plus[i] = n_pl[i] - merged
            minus[i] = n_mi[i] - merged
            if inner_lo <= first + i <= inner_hi:
                tot_p += plus[i]
                tot_m += minus[i]
        decay_out[t + 1, 0] = tot_p
        decay_out[t + 1, 1] = tot_m


# ---------------------------------------------------------------------------
# particle current: walks, crossing probabilities, quenched means
# ---------------------------------------------------------------------------


@njit(cache=True)
def crossing_probs_1d(env_key, fam, offsets, law_a, law_b, weight_a,
                      steps, threshold, clamp_k, drift, sig):
    """Backward crossing probabilities g_0 on the full nontrivial band.

    g_s(y) is the quenched probability that a walker at y at level s sits
    at or below ``threshold`` after the remaining steps.  Returns
    (band_lo, g) where g covers y = band_lo .. band_lo + len(g) - 1 at
    level 0; below the band g is exactly 1, above it exactly 0.  With
    clamp_k > 0 the band is narrowed to clamp_k standard deviations around
    the drifting front (plateau values are used outside; the neglected
    mass is a Gaussian tail).
    """
    k = offsets.size
    zmin = offsets[0]
    zmax = offsets[k - 1]
    law = np.empty(k)

    width_max = (zmax - zmin) * steps + 1
    g_next = np.zeros(width_max)
    g_cur = np.zeros(width_max)
    lo_next = threshold + 1   # empty band at s = steps: plateau edge at threshold
    hi_next = threshold
    law_buf = law

    for s in range(steps - 1, -1, -1):
        rem = steps - s
        lo = threshold - zmax * rem + 1
        hi = threshold - zmin * rem
        if clamp_k > 0.0:
            spread = clamp_k * sig * np.sqrt(rem) + 1.0
            c_lo = np.int64(np.floor(threshold - drift * rem - spread))
            c_hi = np.int64(np.ceil(threshold - drift * rem + spread))
            if c_lo > lo:
                lo = c_lo
            if c_hi < hi:
                hi = c_hi
        for y in range(lo, hi + 1):
            _law_at(_env_prefix(env_key, s, y), fam, law_a, law_b, weight_a, law_buf)
            acc = 0.0
            for j in range(k):
                yz = y + offsets[j]
                if yz < lo_next:
                    acc += law_buf[j]
                elif yz <= hi_next:
                    acc += law_buf[j] * g_next[yz - lo_next]
            g_cur[y - lo] = acc
        tmp = g_next
        g_next = g_cur
        g_cur = tmp
        lo_next = lo
        hi_next = hi

    out = np.empty(hi_next - lo_next + 1)
    for i in range(hi_next - lo_next + 1):
        out[i] = g_next[i]
    return lo_next, out


@njit(cache=True)
def current_replica_1d(env_key, jump_key, init_key, fam, offsets,
                       law_a, law_b, weight_a, snap_times, c_ints, snap_of,
                       act_lo, act_hi, u_lo, u_hi, rho, dens_horizon,
                       clamp_k, drift, sig, y_out, ey_out):
    """One environment replica of the multi-point current experiment.

    Particles start from a Poisson field with intensity rho * f on the
    union window u_lo..u_hi (f = density observed at level 0 after
    ``dens_horizon`` warm-up steps), walk through the shared environment,
    and each observation point pt counts signed crossings of its threshold
    c_ints[pt] at step snap_times[snap_of[pt]].  y_out[pt] receives the
    realized current, ey_out[pt] its quenched mean from the backward
    crossing probabilities and the same intensity profile.
    """
    k = offsets.size
    n_snap = snap_times.size
    npts = c_ints.size

    f_active = density_range_1d(env_key, fam, offsets, law_a, law_b, weight_a,
                                dens_horizon, 0, u_lo, u_hi)

    law = np.empty(k)
    cum = np.empty(k)
    pos_snap = np.empty(n_snap, np.int64)
    t_max = snap_times[n_snap - 1]

    for pt in range(npts):
        y_out[pt] = 0.0

    for x in range(u_lo, u_hi + 1):
        lam = rho * f_active[x - u_lo]
        cnt = _poisson_icdf(_u01(_extend(_chain_start(init_key), x)), lam)
        for j in range(cnt):
            pprefix = _extend(_extend(_chain_start(jump_key), x), j)
            pos = x
            si = 0
            for s in range(t_max):
                _law_at(_env_prefix(env_key, s, pos), fam, law_a, law_b,
                        weight_a, law)
                cum[0] = law[0]
                for m in range(1, k):
                    cum[m] = cum[m - 1] + law[m]
                pos += offsets[_pick(cum, _u01(_extend(pprefix, s)))]
                if si < n_snap and s + 1 == snap_times[si]:
                    pos_snap[si] = pos
                    si += 1
            for pt in range(npts):
                if x < act_lo[pt] or x > act_hi[pt]:
                    continue
                p = pos_snap[snap_of[pt]]
                if x > 0:
                    if p <= c_ints[pt]:
                        y_out[pt] += 1.0
                else:
                    if p > c_ints[pt]:
                        y_out[pt] -= 1.0

    for pt in range(npts):
        steps = snap_times[snap_of[pt]]
        band_lo, g0 = crossing_probs_1d(env_key, fam, offsets, law_a, law_b,
                                        weight_a, steps, c_ints[pt], clamp_k,
                                        drift, sig)
        band_hi = band_lo + g0.size - 1
        acc = 0.0
        for x in range(act_lo[pt], act_hi[pt] + 1):
            if x < band_lo:
                g = 1.0
            elif x > band_hi:
                g = 0.0
            else:
                g = g0[x - band_lo]
            lam = rho * f_active[x - u_lo]
            if x > 0:
                acc += lam * g
            else:
                acc -= lam * (1.0 - g)
        ey_out[pt] = acc
