"""Compiled hot loops: counter-based hashing, site kernels, walk stepping and
regeneration detection.

Everything here works on plain numpy arrays so the public modules can wrap it
with friendlier types. All functions are pure given their arguments.
"""
import numpy as np
from numba import njit

_U = np.uint64
GOLDEN = _U(0x9E3779B97F4A7C15)
_M1 = _U(0xBF58476D1CE4E5B9)
_M2 = _U(0x94D049BB133111EB)
_STREAM_SALT = _U(0xD1B54A32D192ED03)
_TIME_SALT = _U(0x8CB92BA72F3D8DD7)
_INV53 = 1.0 / 9007199254740992.0

# reserved hash streams; 0 .. 2d-1 carry the per-direction environment field
COIN_STREAM = 1 << 20
DIRECTION_STREAM = (1 << 20) + 1
GIBBS_INIT_STREAM = (1 << 20) + 2
GIBBS_SWEEP_STREAM = (1 << 20) + 3
GIBBS_NOISE_STREAM = (1 << 20) + 4
REPLICA_STREAM = (1 << 20) + 5
DERIVE_STREAM = (1 << 20) + 6

FAMILY_FIELD = 0  # IID and BLOCK: kernel computed from the hashed field
FAMILY_TABLE = 1  # GIBBS: kernel looked up in a realized box


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _U(30))) * _M1
    z = (z ^ (z >> _U(27))) * _M2
    return z ^ (z >> _U(31))


@njit(cache=True, inline="always")
def _absorb(h, word, k):
    return mix64(h ^ (_U(word) + _U(k + 1) * GOLDEN))


@njit(cache=True)
def site_hash(seed, site, stream):
    h = mix64(_U(seed) ^ GOLDEN)
    for k in range(site.shape[0]):
        h = _absorb(h, site[k], k)
    return mix64(h ^ (_U(stream) * GOLDEN + _STREAM_SALT))


@njit(cache=True)
def site_time_hash(seed, site, time, stream):
    h = site_hash(seed, site, stream)
    return mix64(h ^ (_U(time) * _TIME_SALT + GOLDEN))


@njit(cache=True, inline="always")
def time_hash(seed, time):
    h = mix64(_U(seed) ^ _STREAM_SALT)
    return mix64(h ^ (_U(time) * _TIME_SALT + GOLDEN))


@njit(cache=True, inline="always")
def to_unit(h):
    # open interval (0, 1)
    return (float(h >> _U(11)) + 0.5) * _INV53


@njit(cache=True)
def site_hash_many(seed, sites, stream):
    out = np.empty(sites.shape[0], dtype=np.uint64)
    for i in range(sites.shape[0]):
        out[i] = site_hash(seed, sites[i], stream)
    return out


@njit(cache=True)
def derive_seed(seed, index, stream):
    h = mix64(_U(seed) ^ GOLDEN)
    h = _absorb(h, index, 0)
    return mix64(h ^ (_U(stream) * GOLDEN + _STREAM_SALT))


# ---------------------------------------------------------------------------
# site kernels


@njit(cache=True)
def field_kernel(seed, site, offsets, kappa, rho, tilt, out):
    """Kernel from the hashed exponential field summed over `offsets`."""
    n_dir = out.shape[0]
    d = site.shape[0]
    y = np.empty(d, dtype=np.int64)
    total = 0.0
    for e in range(n_dir):
        out[e] = 0.0
    for b in range(offsets.shape[0]):
        for k in range(d):
            y[k] = site[k] + offsets[b, k]
        for e in range(n_dir):
            out[e] += -np.log(to_unit(site_hash(seed, y, e)))
    for e in range(n_dir):
        total += out[e]
    floor = np.nextafter(kappa, 1.0)
    for e in range(n_dir):
        p = kappa + rho * (out[e] / total) + tilt[e]
        out[e] = p if p > kappa else floor


@njit(cache=True)
def field_kernels_many(seed, sites, offsets, kappa, rho, tilt, n_dir):
    out = np.empty((sites.shape[0], n_dir))
    for i in range(sites.shape[0]):
        field_kernel(seed, sites[i], offsets, kappa, rho, tilt, out[i])
    return out


@njit(cache=True, inline="always")
def table_index(site, lo, shape):
    idx = 0
    for k in range(site.shape[0]):
        c = site[k] - lo[k]
        if c < 0 or c >= shape[k]:
            return -1
        idx = idx * shape[k] + c
    return idx


# ---------------------------------------------------------------------------
# gibbs sampler


@njit(cache=True)
def gibbs_sweeps(seed, lo, shape, levels, n_dir, weights, offsets, coupling, sweeps):
    """Heat-bath single-site updates of a per-direction level field.

    `offsets`/`weights` list the interaction neighbourhood (1 <= d(x,y) <= r)
    and the pair weights e^{-gamma d}. Returns an int array (n_sites, n_dir)
    of levels in [0, levels).
    """
    d = lo.shape[0]
    n_sites = 1
    for k in range(d):
        n_sites *= shape[k]
    q = np.empty((n_sites, n_dir), dtype=np.int64)
    site = np.empty(d, dtype=np.int64)
    nb = np.empty(d, dtype=np.int64)
    half = (levels - 1) / 2.0
    spin = np.empty(levels)
    for a in range(levels):
        spin[a] = (a - half) / half if levels > 1 else 0.0
    # initial state: iid uniform levels
    for i in range(n_sites):
        rem = i
        for k in range(d - 1, -1, -1):
            site[k] = lo[k] + rem % shape[k]
            rem //= shape[k]
        for e in range(n_dir):
            u = to_unit(site_hash(seed, site, GIBBS_INIT_STREAM + e * 7919))
            q[i, e] = min(int(u * levels), levels - 1)
    probs = np.empty(levels)
    for sweep in range(sweeps):
        sweep_seed = derive_seed(seed, sweep, GIBBS_SWEEP_STREAM)
        for i in range(n_sites):
            rem = i
            for k in range(d - 1, -1, -1):
                site[k] = lo[k] + rem % shape[k]
                rem //= shape[k]
            for e in range(n_dir):
                h = 0.0
                for b in range(offsets.shape[0]):
                    for k in range(d):
                        nb[k] = site[k] + offsets[b, k]
                    j = table_index(nb, lo, shape)
                    if j >= 0:
                        h += weights[b] * spin[q[j, e]]
                top = -1e300
                for a in range(levels):
                    probs[a] = coupling * h * spin[a]
                    if probs[a] > top:
                        top = probs[a]
                tot = 0.0
                for a in range(levels):
                    probs[a] = np.exp(probs[a] - top)
                    tot += probs[a]
                u = to_unit(site_hash(sweep_seed, site, e)) * tot
                acc = 0.0
                pick = levels - 1
                for a in range(levels):
                    acc += probs[a]
                    if u < acc:
                        pick = a
                        break
                q[i, e] = pick
    return q


@njit(cache=True)
def gibbs_kernels(seed, lo, shape, q, levels, kappa, rho, tilt):
    d = lo.shape[0]
    n_sites, n_dir = q.shape
    out = np.empty((n_sites, n_dir))
    site = np.empty(d, dtype=np.int64)
    floor = np.nextafter(kappa, 1.0)
    for i in range(n_sites):
        rem = i
        for k in range(d - 1, -1, -1):
            site[k] = lo[k] + rem % shape[k]
            rem //= shape[k]
        total = 0.0
        for e in range(n_dir):
            v = to_unit(site_hash(seed, site, GIBBS_NOISE_STREAM + e * 7919))
            u = (q[i, e] + v) / levels
            if u >= 1.0:
                u = 1.0 - _INV53
            out[i, e] = -np.log(u)
            total += out[i, e]
        for e in range(n_dir):
            p = kappa + rho * (out[i, e] / total) + tilt[e]
            out[i, e] = p if p > kappa else floor
    return out


# ---------------------------------------------------------------------------
# walk


@njit(cache=True)
def choose_direction(coin, u, kernel, kappa, dk):
    n_dir = kernel.shape[0]
    if coin:
        return min(int(u * n_dir), n_dir - 1)
    acc = 0.0
    for e in range(n_dir):
        acc += (kernel[e] - 0.5 * kappa) / (1.0 - dk)
        if u < acc:
            return e
    return n_dir - 1


@njit(cache=True)
def walk(family, env_seed, offsets, kappa, rho, tilt, lo, shape, table,
         coin_seed, forced_coin, rng_seed, start, t0, n_steps):
    """Simulate the coin-decomposed walk.

    Returns (positions, coins, dirs, status); status is -1 on success or the
    step index at which a table (GIBBS) lookup left the realized box.
    """
    d = start.shape[0]
    n_dir = 2 * d
    dk = d * kappa
    pos = np.empty((n_steps + 1, d), dtype=np.int64)
    coins = np.zeros(n_steps, dtype=np.uint8)
    dirs = np.zeros(n_steps, dtype=np.int8)
    x = start.copy()
    pos[0] = x
    kern = np.empty(n_dir)
    for t in range(n_steps):
        time = t0 + t
        if forced_coin >= 0:
            c = forced_coin
        else:
            c = 1 if to_unit(site_time_hash(coin_seed, x, time, COIN_STREAM)) < dk else 0
        u = to_unit(time_hash(rng_seed, time))
        if family == FAMILY_TABLE:
            j = table_index(x, lo, shape)
            if j < 0:
                return pos[: t + 1], coins[:t], dirs[:t], t
            for e in range(n_dir):
                kern[e] = table[j, e]
        elif c == 0:
            field_kernel(env_seed, x, offsets, kappa, rho, tilt, kern)
        e = choose_direction(c, u, kern, kappa, dk)
        coins[t] = c
        dirs[t] = e
        axis = e // 2
        if e % 2 == 0:
            x[axis] += 1
        else:
            x[axis] -= 1
        pos[t + 1] = x
    return pos, coins, dirs, -1


# ---------------------------------------------------------------------------
# regeneration


@njit(cache=True)
def _r_trigger_scan(proj, s, c5, scratch, base):
    """Exact R∘θ_s by forward scan; returns relative trigger time or -1."""
    n = proj.shape[0] - 1
    p0 = proj[s]
    touched = 0
    result = -1
    for t in range(s, n + 1):
        j = proj[t] - p0
        if t > s and j <= 0:
            result = t - s
            break
        idx = proj[t] - base
        scratch[idx] += 1
        touched = t
        if scratch[idx] > c5 * (j + 1) * (j + 1):
            result = t - s
            break
    for t in range(s, touched + 1):
        scratch[proj[t] - base] = 0
    return result


@njit(cache=True)
def stopping_r(proj, c5):
    """R of the whole path from time 0; -1 when it does not trigger."""
    base = proj.min()
    scratch = np.zeros(proj.max() - base + 2, dtype=np.int64)
    return _r_trigger_scan(proj, 0, c5, scratch, base)


@njit(cache=True)
def detect_regenerations(proj, coins, dirs, plus_dir, L, c5):
    """All τ_k (absolute times) under the convention that R = ∞ means "does
    not trigger before the end of the path".

    Also returns every visited S candidate and its absolute R (or -1).
    """
    n = proj.shape[0] - 1
    base = proj.min()
    span = proj.max() - base + 2
    scratch = np.zeros(span, dtype=np.int64)
    # suffix visit counts over [ptr, n]
    suffix = np.zeros(span, dtype=np.int64)
    for t in range(n + 1):
        suffix[proj[t] - base] += 1
    max_count = suffix.max()
    ptr = 0
    # suffix minimum of proj over (t, n]
    smin = np.empty(n + 2, dtype=np.int64)
    big = proj.max() + 1
    smin[n + 1] = big
    smin[n] = big
    for t in range(n - 1, -1, -1):
        nxt = proj[t + 1]
        smin[t] = nxt if nxt < smin[t + 1] else smin[t + 1]
    # run[t]: number of consecutive straight coin-1 steps ending at step t-1
    run = np.zeros(n + 1, dtype=np.int64)
    for t in range(1, n + 1):
        if coins[t - 1] == 1 and dirs[t - 1] == plus_dir:
            run[t] = run[t - 1] + 1
    taus = np.empty(n + 1, dtype=np.int64)
    n_tau = 0
    s_times = np.empty(n + 1, dtype=np.int64)
    r_times = np.empty(n + 1, dtype=np.int64)
    n_s = 0
    origin = 0
    while True:
        frm = origin
        running_max = -(1 << 62)
        scanned = origin  # running_max covers proj[origin:scanned]
        found = -1
        while True:
            cand = -1
            m = frm if frm > origin + L else origin + L
            while m <= n:
                rec = m - L
                while scanned < rec:
                    if proj[scanned] > running_max:
                        running_max = proj[scanned]
                    scanned += 1
                if run[m] >= L and proj[rec] > running_max:
                    cand = m
                    break
                m += 1
            if cand < 0:
                break
            s_times[n_s] = cand
            # fast "no trigger" test
            while ptr < cand:
                suffix[proj[ptr] - base] -= 1
                ptr += 1
            clean = smin[cand] > proj[cand] and c5 >= 1.0
            if clean:
                j = 1
                while c5 * (j + 1) * (j + 1) < max_count:
                    lev = proj[cand] + j - base
                    if lev >= span:
                        break
                    if suffix[lev] > c5 * (j + 1) * (j + 1):
                        clean = False
                        break
                    j += 1
            if clean:
                r_times[n_s] = -1
                n_s += 1
                found = cand
                break
            rel = _r_trigger_scan(proj, cand, c5, scratch, base)
            if rel < 0:
                r_times[n_s] = -1
                n_s += 1
                found = cand
                break
            r_times[n_s] = cand + rel
            n_s += 1
            if rel == 0:
                break
            frm = cand + rel
        if found < 0:
            break
        taus[n_tau] = found
        n_tau += 1
        origin = found
    return taus[:n_tau].copy(), s_times[:n_s].copy(), r_times[:n_s].copy()
