"""Experiment-level estimators.

* Velocity: direct X_n.l/n against the regeneration ratio, with bootstrap
  intervals, escape-event classification and the E[tau_n]/n table.
* Heat kernel: histograms of X_{tau_n}, sum_x Q(n,x)^2 and log-log slopes.
* Separation in d >= 5: delta(d), membership in A(y, z), the interaction
  sum with its majorant, and the Monte Carlo membership probability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import special, stats

from . import _jit
from .env import EnvironmentSpec, l1_ball, make_environment
from .pathstats import is_censored, stopping_R
from .regen import CONFIRMED, RegenConfig, RegenRecord, detect_tau, slab_arrays
from .walk import CoinField, Trajectory, simulate


class InsufficientSamples(RuntimeError):
    """Too few samples or regenerations for the requested statistic."""


def derive_seed(base: int, index: int, stream: int = _jit.REPLICA_STREAM) -> int:
    """Seed of replica ``index``: a hash of (base, index) on a dedicated stream."""
    return int(_jit.derive_seed(np.uint64(int(base) & 0xFFFFFFFFFFFFFFFF), int(index), int(stream)))


def bootstrap_ci(values, stat, rng: np.random.Generator, n_boot: int = 1000,
                 level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap over the first axis of ``values``."""
    values = list(values) if not isinstance(values, np.ndarray) else values
    n = len(values)
    if n == 0:
        return float("nan"), float("nan")
    reps = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, n)
        reps[b] = stat([values[i] for i in idx] if isinstance(values, list) else values[idx])
    lo, hi = np.quantile(reps, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def ols_slope(x, y) -> tuple[float, float]:
    """Slope and intercept of y on x by ordinary least squares."""
    res = stats.linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return float(res.slope), float(res.intercept)


# ---------------------------------------------------------------------------
# velocity


@dataclass
class Replica:
    traj: Trajectory
    record: RegenRecord


@dataclass
class VelocityReport:
    direction: int
    checkpoints: list
    direct_by_checkpoint: list  # mean over replicas at each checkpoint
    direct: float
    direct_ci: tuple
    regen: float | None
    regen_ci: tuple | None
    n_slabs: int
    tau_table: dict  # n -> E[tau_n]/n
    tau_flatness: float | None  # max/min over the flatness window
    counts: dict  # A_l / A_-l / unclassified
    flags: list = field(default_factory=list)

    @property
    def ci_overlap(self) -> bool | None:
        if self.regen_ci is None:
            return None
        return self.direct_ci[0] <= self.regen_ci[1] and self.regen_ci[0] <= self.direct_ci[1]

    @property
    def relative_gap(self) -> float | None:
        if self.regen is None or self.direct == 0:
            return None
        return abs(self.regen - self.direct) / abs(self.direct)

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "checkpoints": self.checkpoints,
            "direct_by_checkpoint": self.direct_by_checkpoint,
            "direct": self.direct,
            "direct_ci": list(self.direct_ci),
            "regen": self.regen,
            "regen_ci": None if self.regen_ci is None else list(self.regen_ci),
            "ci_overlap": self.ci_overlap,
            "relative_gap": self.relative_gap,
            "n_slabs": self.n_slabs,
            "tau_over_n": {str(k): v for k, v in self.tau_table.items()},
            "tau_flatness": self.tau_flatness,
            "classification": self.counts,
            "flags": self.flags,
        }


def tau_blocks(taus: np.ndarray, block: int) -> np.ndarray:
    """Non-overlapping restarts: rows tau_{s+n} - tau_s for n = 0..block with
    s = 1, 1+block, ... (1-based indices into the tau sequence)."""
    taus = np.asarray(taus, dtype=np.int64)
    rows = []
    s = 0  # 0-based index of tau_1
    while s + block < taus.shape[0]:
        rows.append(taus[s: s + block + 1] - taus[s])
        s += block
    return np.array(rows, dtype=np.int64).reshape(-1, block + 1)


def velocity_report(replicas: Sequence[Replica], direction: int = 1, n_checkpoints: int = 10,
                    tau_block: int = 50, flat_window=(5, 50), dead_band_exp: float = 0.6,
                    n_boot: int = 1000, seed: int = 0, skip_first_slab: bool = True) -> VelocityReport:
    if not replicas:
        raise InsufficientSamples("no replicas")
    rng = np.random.default_rng(seed)
    n = min(r.traj.n_steps for r in replicas)
    checkpoints = sorted({max(1, (n * k) // n_checkpoints) for k in range(1, n_checkpoints + 1)})
    x = np.array([[direction * (r.traj.positions[c, 0] - r.traj.positions[0, 0]) / c
                   for c in checkpoints] for r in replicas])
    final = x[:, -1]
    direct = float(final.mean())
    direct_ci = bootstrap_ci(final, np.mean, rng, n_boot)
    band = n ** dead_band_exp
    disp = final * n
    counts = {
        "A_plus": int(np.sum(disp > band)),
        "A_minus": int(np.sum(disp < -band)),
        "unclassified": int(np.sum(np.abs(disp) <= band)),
        "dead_band": band,
    }
    flags = []
    per_rep = []
    blocks = []
    for r in replicas:
        taus = r.record.confirmed_taus
        F, dt = slab_arrays(r.traj, taus)
        if skip_first_slab:
            F, dt = F[1:], dt[1:]
        per_rep.append((direction * F[:, 0].sum() if len(dt) else 0.0, float(dt.sum())))
        if len(taus) > tau_block:
            blocks.append(tau_blocks(taus, tau_block))
    n_slabs = int(sum(1 for r in replicas for _ in range(max(len(r.record.confirmed_taus) - int(skip_first_slab), 0))))
    regen = regen_ci = None
    if n_slabs == 0:
        flags.append("no confirmed regenerations: regen estimator omitted")
    else:
        arr = np.array(per_rep)
        regen = float(arr[:, 0].sum() / arr[:, 1].sum())

        def ratio(rows):
            rows = np.asarray(rows)
            den = rows[:, 1].sum()
            return rows[:, 0].sum() / den if den > 0 else np.nan

        regen_ci = bootstrap_ci(arr, ratio, rng, n_boot)
    tau_table, flat = {}, None
    if blocks:
        B = np.vstack(blocks)
        for k in range(1, tau_block + 1):
            tau_table[k] = float(B[:, k].mean() / k)
        lo, hi = flat_window
        win = [tau_table[k] for k in range(lo, min(hi, tau_block) + 1)]
        if win:
            flat = float(max(win) / min(win))
    else:
        flags.append(f"fewer than {tau_block + 1} confirmed regenerations per replica: tau table omitted")
    return VelocityReport(direction, checkpoints, x.mean(axis=0).tolist(), direct, direct_ci,
                          regen, regen_ci, n_slabs, tau_table, flat, counts, flags)


def run_replica(spec: EnvironmentSpec, base_seed: int, index: int, n_steps: int,
                cfg: RegenConfig) -> Replica:
    """One seeded replica: environment, coins and direction stream all derived
    from (base_seed, index)."""
    rs = derive_seed(base_seed, index)
    env = make_environment(spec.replace(seed=derive_seed(rs, 0, _jit.DERIVE_STREAM)))
    coins = CoinField(derive_seed(rs, 1, _jit.DERIVE_STREAM), spec.kappa, spec.dim)
    traj = simulate(env, coins, np.zeros(spec.dim, dtype=np.int64), n_steps,
                    derive_seed(rs, 2, _jit.DERIVE_STREAM))
    return Replica(traj, detect_tau(traj, cfg))


# ---------------------------------------------------------------------------
# heat kernel


def pack_sites(points: np.ndarray) -> np.ndarray:
    """Injective int64 keys for lattice points with moderate coordinates.

    The first axis (the drift axis in every experiment) gets the widest field.
    """
    pts = np.asarray(points, dtype=np.int64)
    d = pts.shape[1]
    lat = min(31, (63 - 19) // max(d - 1, 1))
    widths = [63 - lat * (d - 1)] + [lat] * (d - 1)
    key = np.zeros(pts.shape[0], dtype=np.int64)
    for k, bits in enumerate(widths):
        half = 1 << (bits - 1)
        col = pts[:, k]
        if col.size and (col.min() < -half or col.max() >= half):
            raise ValueError(f"coordinate {k} exceeds the packing range +-{half}")
        key = (key << bits) | (col + half)
    return key


@dataclass
class HeatKernelReport:
    n_grid: list
    n_samples: dict
    max_prob: dict
    max_count: dict
    sumQ2_plugin: dict
    sumQ2: dict  # unbiased pair-collision estimate
    reliable: dict
    slope_max_prob: float | None
    slope_sumQ2: float | None
    fit_min_n: int
    histograms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        s = lambda d: {str(k): v for k, v in d.items()}
        return {
            "n_grid": self.n_grid,
            "n_samples": s(self.n_samples),
            "max_prob": s(self.max_prob),
            "max_count": s(self.max_count),
            "sumQ2_plugin": s(self.sumQ2_plugin),
            "sumQ2": s(self.sumQ2),
            "reliable": s(self.reliable),
            "slope_max_prob": self.slope_max_prob,
            "slope_sumQ2": self.slope_sumQ2,
            "fit_min_n": self.fit_min_n,
        }

    def rows(self) -> list[tuple]:
        return [(n, self.n_samples[n], self.max_count[n], self.max_prob[n], self.sumQ2_plugin[n],
                 self.sumQ2[n], int(self.reliable[n])) for n in self.n_grid]


class HeatKernelAccumulator:
    """Collects X_{tau_n} and the sites visited in [tau_{n-1}, tau_n) over
    regeneration sequences of a fixed length, one n at a time."""

    def __init__(self, n_grid: Sequence[int], block: int | None = None, keep_histograms: bool = False):
        self.n_grid = sorted(int(n) for n in n_grid)
        self.block = block or max(self.n_grid)
        if max(self.n_grid) > self.block:
            raise ValueError("n_grid exceeds the regeneration block length")
        self.end_keys = {n: [] for n in self.n_grid}
        self.visit_keys = {n: [] for n in self.n_grid}
        self.samples = 0
        self.keep_histograms = keep_histograms

    def add_sequence(self, positions: np.ndarray, taus: np.ndarray) -> None:
        """``positions`` is a path and ``taus`` holds tau_0..tau_block (absolute
        indices into it, tau_0 being the sequence start)."""
        origin = positions[taus[0]]
        for n in self.n_grid:
            self.end_keys[n].append(pack_sites(positions[taus[n]][None, :] - origin))
            seg = positions[taus[n - 1]: taus[n]] - origin
            self.visit_keys[n].append(np.unique(pack_sites(seg)))
        self.samples += 1

    def add_replica(self, traj: Trajectory, taus: np.ndarray) -> int:
        """Split confirmed taus into non-overlapping sequences of ``block``
        regenerations starting at tau_1, tau_{1+block}, ...; returns the count."""
        added = 0
        s = 0
        while s + self.block < len(taus):
            self.add_sequence(traj.positions, taus[s: s + self.block + 1])
            s += self.block
            added += 1
        return added

    def report(self, min_samples: int = 10_000, fit_min_n: int = 10) -> HeatKernelReport:
        N = self.samples
        max_prob, max_count, q2p, q2, rel, hists = {}, {}, {}, {}, {}, {}
        for n in self.n_grid:
            ends = np.concatenate(self.end_keys[n]) if self.end_keys[n] else np.zeros(0, np.int64)
            _, c = np.unique(ends, return_counts=True)
            assert c.sum() == N
            max_count[n] = int(c.max()) if c.size else 0
            max_prob[n] = max_count[n] / N if N else float("nan")
            if self.keep_histograms:
                hists[n] = c
            visits = np.concatenate(self.visit_keys[n]) if self.visit_keys[n] else np.zeros(0, np.int64)
            _, v = np.unique(visits, return_counts=True)
            v = v.astype(float)
            q2p[n] = float(np.sum((v / N) ** 2)) if N else float("nan")
            q2[n] = float(np.sum(v * (v - 1)) / (N * (N - 1.0))) if N > 1 else float("nan")
            rel[n] = N >= min_samples
        fit_ns = [n for n in self.n_grid if n >= fit_min_n and rel[n]]
        slope_max = slope_q2 = None
        if len(fit_ns) >= 2:
            slope_max = ols_slope(np.log(fit_ns), np.log([max_prob[n] for n in fit_ns]))[0]
            good = [n for n in fit_ns if q2[n] > 0]
            if len(good) >= 2:
                slope_q2 = ols_slope(np.log(good), np.log([q2[n] for n in good]))[0]
        return HeatKernelReport(self.n_grid, {n: N for n in self.n_grid}, max_prob, max_count, q2p,
                                q2, rel, slope_max, slope_q2, fit_min_n, hists)


def heat_kernel_report(sequences, n_grid, min_samples: int = 10_000,
                       fit_min_n: int = 10) -> HeatKernelReport:
    """``sequences`` yields (positions, taus) pairs with taus = tau_0..tau_block."""
    acc = HeatKernelAccumulator(n_grid)
    for positions, taus in sequences:
        acc.add_sequence(positions, taus)
    if acc.samples == 0:
        raise InsufficientSamples("no regeneration sequences")
    return acc.report(min_samples, fit_min_n)


# ---------------------------------------------------------------------------
# separation


def delta(d: int) -> Fraction:
    """delta(d) = (d - 4) / (8 (d - 1))."""
    return Fraction(d - 4, 8 * (d - 1))


@dataclass(frozen=True)
class SeparationConfig:
    dim: int
    z: tuple
    n: int = 5
    L: int = 1

    def __post_init__(self):
        if self.dim < 5:
            raise ValueError(f"separation needs d >= 5; delta({self.dim}) = {delta(self.dim)} <= 0")
        z = tuple(int(v) for v in self.z)
        if len(z) != self.dim:
            raise ValueError(f"z has {len(z)} components, expected {self.dim}")
        if not z[0] < -self.L:
            raise ValueError(f"need z.e_1 < -L = {-self.L}, got {z[0]}")
        if self.n < 1:
            raise ValueError("regeneration index n must be >= 1")
        object.__setattr__(self, "z", z)

    @property
    def delta(self) -> Fraction:
        return delta(self.dim)

    @property
    def z_norm(self) -> float:
        return float(np.linalg.norm(self.z))

    @property
    def m_z(self) -> int:
        return int(math.floor(math.sqrt(self.z_norm)))


def offset_for_norm(dim: int, target: float, L: int) -> tuple:
    """z = (-(L+1), a, 0, ...) with a chosen so |z| is closest to ``target``."""
    z1 = -(L + 1)
    a = int(round(math.sqrt(max(target ** 2 - z1 ** 2, 0.0))))
    return (z1, a) + (0,) * (dim - 2)


@dataclass(frozen=True)
class Membership:
    member: bool
    violation: tuple | None = None  # (i, j), smallest i then smallest j

    def __bool__(self):
        return self.member


def _prep_pair(x_path, y_path, z):
    x = np.asarray(getattr(x_path, "positions", x_path), dtype=np.int64)
    y = np.asarray(getattr(y_path, "positions", y_path), dtype=np.int64)
    z = np.asarray(z, dtype=np.int64)
    if not np.array_equal(x[0], y[0] + z):
        raise ValueError("x_0 must equal y_0 + z")
    return x, y, float(np.linalg.norm(z))


def _l1_ball_size(dim: int, radius: int) -> int:
    return sum(2 ** k * math.comb(dim, k) * math.comb(radius, k) for k in range(min(dim, radius) + 1))


def _membership_dense(x: np.ndarray, y: np.ndarray, zn: float, dl: float) -> Membership:
    """All pairwise distances in row chunks; used when the offset ball is
    larger than the path itself."""
    chunk = max(1, 2_000_000 // max(y.shape[0], 1))
    jm = np.arange(y.shape[0])
    for s in range(0, x.shape[0], chunk):
        d = np.abs(x[s: s + chunk, None, :] - y[None, :, :]).sum(axis=2)
        m = np.maximum(np.arange(s, s + d.shape[0])[:, None], jm[None, :])
        bad = (m > zn / 3.0) & (d <= np.power(m.astype(float), dl))
        rows = np.nonzero(bad.any(axis=1))[0]
        if rows.size:
            i = int(rows[0])
            return Membership(False, (s + i, int(np.argmax(bad[i]))))
    return Membership(True)


def separation_membership(x_path, y_path, z, delta_value) -> Membership:
    """Check d(x_i, y_j) > (i v j)^delta whenever i v j > |z|/3 (l1 distance)."""
    x, y, zn = _prep_pair(x_path, y_path, z)
    dl = float(delta_value)
    N, M = x.shape[0] - 1, y.shape[0] - 1
    top = max(N, M)
    # only pairs within l1 radius floor(max threshold) can violate
    radius = int(math.floor(top ** dl)) if top > 0 else 0
    if _l1_ball_size(x.shape[1], radius) > y.shape[0]:
        return _membership_dense(x, y, zn, dl)
    origin = np.minimum(x.min(axis=0), y.min(axis=0)) - radius
    ykeys = pack_sites(y - origin)
    order = np.argsort(ykeys, kind="stable")
    ysorted = ykeys[order]
    best = None
    for off in l1_ball(x.shape[1], radius):
        dist = int(np.abs(off).sum())
        k = pack_sites(x + off - origin)
        left = np.searchsorted(ysorted, k, side="left")
        right = np.searchsorted(ysorted, k, side="right")
        hit = np.nonzero(right > left)[0]
        for i in hit:
            js = order[left[i]: right[i]]
            m = np.maximum(i, js)
            bad = (m > zn / 3.0) & (dist <= np.power(m.astype(float), dl))
            if bad.any():
                j = int(js[bad].min())
                cand = (int(i), j)
                if best is None or cand < best:
                    best = cand
                break
    return Membership(best is None, best)


def separation_membership_bruteforce(x_path, y_path, z, delta_value) -> Membership:
    x, y, zn = _prep_pair(x_path, y_path, z)
    dl = float(delta_value)
    for i in range(x.shape[0]):
        d = np.abs(y - x[i]).sum(axis=1)
        m = np.maximum(i, np.arange(y.shape[0]))
        bad = (m > zn / 3.0) & (d <= np.power(m.astype(float), dl))
        if bad.any():
            return Membership(False, (i, int(np.argmax(bad))))
    return Membership(True)


def pair_interaction_sum(x_path, y_path, gamma: float) -> float:
    """sum_{i,j} exp(-gamma d(x_i, y_j)) with l1 distance."""
    x = np.asarray(getattr(x_path, "positions", x_path), dtype=np.int64)
    y = np.asarray(getattr(y_path, "positions", y_path), dtype=np.int64)
    total = 0.0
    chunk = max(1, 2_000_000 // max(y.shape[0], 1))
    for s in range(0, x.shape[0], chunk):
        d = np.abs(x[s: s + chunk, None, :] - y[None, :, :]).sum(axis=2)
        total += float(np.exp(-gamma * d).sum())
    return total


def stretched_exp_series(c: float, dl: float, n_direct: int = 10_000) -> tuple[float, float]:
    """Bracket [lo, hi] for sum_{i>=0} exp(-c i^dl).

    The first ``n_direct`` terms are summed exactly; the monotone tail lies
    between the integrals from n_direct and from n_direct - 1, evaluated with
    the incomplete gamma function.
    """
    i = np.arange(n_direct, dtype=float)
    head = float(np.sum(np.exp(-c * i ** dl)))
    s = 1.0 / dl

    def tail_from(a):
        # int_a^inf exp(-c x^dl) dx = s c^{-s} Gamma(s, c a^dl)
        log_val = math.log(s) - s * math.log(c) + special.gammaln(s) + math.log(
            special.gammaincc(s, c * a ** dl))
        return math.exp(log_val)

    return head + tail_from(n_direct), head + tail_from(n_direct - 1)


def e10_majorant(z_norm: float, gamma: float, delta_value) -> float:
    """(|z|/3)^2 exp(-gamma |z|/3) + (sum_i exp(-gamma i^delta / 2))^2, using
    the upper end of the series bracket."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    _, hi = stretched_exp_series(gamma / 2.0, float(delta_value))
    return (z_norm / 3.0) ** 2 * math.exp(-gamma * z_norm / 3.0) + hi ** 2


@dataclass(frozen=True)
class InteractionBound:
    value: float
    majorant: float

    @property
    def holds(self) -> bool:
        return self.value <= self.majorant


def interaction_bound_e10(x_path, y_path, gamma: float, delta_value=None) -> InteractionBound:
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    x = np.asarray(getattr(x_path, "positions", x_path), dtype=np.int64)
    y = np.asarray(getattr(y_path, "positions", y_path), dtype=np.int64)
    z = x[0] - y[0]
    dl = delta(x.shape[1]) if delta_value is None else delta_value
    return InteractionBound(pair_interaction_sum(x, y, gamma),
                            e10_majorant(float(np.linalg.norm(z)), gamma, dl))


def first_below_zero(path) -> int | None:
    """T° = inf{i >= 0 : X_i . e_1 < 0}; None when not reached."""
    x = np.asarray(getattr(path, "positions", path))
    hit = np.nonzero(x[:, 0] < 0)[0]
    return int(hit[0]) if hit.size else None


@dataclass
class SeparationReport:
    z: tuple
    z_norm: float
    n: int
    samples: int
    members: int
    p_hat: float
    ci: tuple
    t_circ_hits: int
    t_circ_mean: float | None
    rejected_forward: int
    rejected_backward: int
    missing_tau: int

    def to_dict(self) -> dict:
        return {
            "z": list(self.z),
            "z_norm": self.z_norm,
            "n": self.n,
            "samples": self.samples,
            "members": self.members,
            "p_hat": self.p_hat,
            "ci95": list(self.ci),
            "t_circ_hits": self.t_circ_hits,
            "t_circ_mean": self.t_circ_mean,
            "rejected_forward": self.rejected_forward,
            "rejected_backward": self.rejected_backward,
            "missing_tau": self.missing_tau,
        }


def wilson_ci(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class _Pair:
    y: np.ndarray  # reversed forward path Y^n
    x_rel: np.ndarray  # backward path relative to its start


def _conditioned_walk(spec: EnvironmentSpec, seed: int, n_steps: int, c5: float,
                      direction: int, max_tries: int):
    """Walk from the origin conditioned on R (in ``direction``) not
    triggering within the path, by rejection. Returns (traj, rejections)."""
    for attempt in range(max_tries):
        s = derive_seed(seed, attempt, _jit.DERIVE_STREAM)
        env = make_environment(spec.replace(seed=derive_seed(s, 0, _jit.DERIVE_STREAM)))
        coins = CoinField(derive_seed(s, 1, _jit.DERIVE_STREAM), spec.kappa, spec.dim)
        traj = simulate(env, coins, np.zeros(spec.dim, dtype=np.int64), n_steps,
                        derive_seed(s, 2, _jit.DERIVE_STREAM))
        if is_censored(stopping_R(traj, c5, direction)):
            return traj, attempt
    raise InsufficientSamples(f"no path with R = inf after {max_tries} attempts")


def sample_separation_pair(fwd: EnvironmentSpec, bwd: EnvironmentSpec, n: int, L: int, c5: float,
                           fwd_steps: int, bwd_steps: int, lookahead: int, seed: int,
                           max_tries: int = 1000):
    """Forward path to its n-th confirmed regeneration (conditioned on R = inf)
    and an independent backward path conditioned on R_{-e1} = inf."""
    traj, rej_f = _conditioned_walk(fwd, derive_seed(seed, 0, _jit.DERIVE_STREAM), fwd_steps,
                                    c5, 1, max_tries)
    rec = detect_tau(traj, RegenConfig(L=L, direction=1, c5=c5, lookahead=lookahead))
    taus = rec.confirmed_taus
    if len(taus) < n:
        return None, rej_f, 0
    tau_n = int(taus[n - 1])
    y = traj.positions[tau_n::-1].copy()
    back, rej_b = _conditioned_walk(bwd, derive_seed(seed, 1, _jit.DERIVE_STREAM), bwd_steps,
                                    c5, -1, max_tries)
    return _Pair(y, back.positions - back.positions[0]), rej_f, rej_b


def separation_experiment(cfg: SeparationConfig, fwd: EnvironmentSpec, bwd: EnvironmentSpec,
                          samples: int, seed: int, c5: float = 2.0, fwd_steps: int = 4000,
                          bwd_steps: int = 4000, lookahead: int = 500,
                          pairs: list | None = None) -> SeparationReport:
    """Monte Carlo estimate of P(X in A(Y^n, z)).

    ``pairs`` may be passed in so several offsets z share the same forward
    and backward draws (common random numbers).
    """
    if fwd.dim != cfg.dim or bwd.dim != cfg.dim:
        raise ValueError("environment dimensions must match the separation config")
    if pairs is None:
        pairs = draw_separation_pairs(cfg, fwd, bwd, samples, seed, c5, fwd_steps, bwd_steps, lookahead)
    return evaluate_separation(cfg, pairs)


def draw_separation_pairs(cfg: SeparationConfig, fwd: EnvironmentSpec, bwd: EnvironmentSpec,
                          samples: int, seed: int, c5: float = 2.0, fwd_steps: int = 4000,
                          bwd_steps: int = 4000, lookahead: int = 500) -> dict:
    out, rej_f, rej_b, missing = [], 0, 0, 0
    for s in range(samples):
        pair, rf, rb = sample_separation_pair(fwd, bwd, cfg.n, cfg.L, c5, fwd_steps, bwd_steps,
                                              lookahead, derive_seed(seed, s))
        rej_f += rf
        rej_b += rb
        if pair is None:
            missing += 1
        else:
            out.append(pair)
    return {"pairs": out, "rejected_forward": rej_f, "rejected_backward": rej_b, "missing_tau": missing}


def evaluate_separation(cfg: SeparationConfig, drawn: dict) -> SeparationReport:
    pairs = drawn["pairs"]
    if not pairs:
        raise InsufficientSamples("no forward path reached its n-th confirmed regeneration")
    z = np.asarray(cfg.z, dtype=np.int64)
    members = 0
    t_hits = []
    for p in pairs:
        x = p.x_rel + p.y[0] + z
        if separation_membership(x, p.y, z, cfg.delta):
            members += 1
        t = first_below_zero(x)
        if t is not None:
            t_hits.append(t)
    k = len(pairs)
    return SeparationReport(cfg.z, cfg.z_norm, cfg.n, k, members, members / k, wilson_ci(members, k),
                            len(t_hits), float(np.mean(t_hits)) if t_hits else None,
                            drawn["rejected_forward"], drawn["rejected_backward"], drawn["missing_tau"])
