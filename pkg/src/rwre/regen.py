"""L-regeneration times of a coin-decomposed walk and the slabs between them.

A candidate S is the first time n >= R_k such that X_{n-L} sets a strict
record in the chosen direction (relative to the current origin, with the max
over an empty set equal to -inf) and the L steps before n were all coin 1 and
moved in that direction. The candidate is accepted when the shifted stopping
time R does not trigger before the end of the simulated path; otherwise the
search resumes at R. After acceptance the origin moves to the new tau.

An accepted tau is ``confirmed`` when at least ``lookahead`` steps of future
were simulated after it, and ``censored`` otherwise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _jit
from .env import EnvironmentRealization
from .pathstats import Censored, is_censored
from .walk import Trajectory

CONFIRMED = "confirmed"
CENSORED = "censored"


@dataclass(frozen=True)
class RegenConfig:
    L: int = 1
    direction: int = 1
    c5: float = 2.0
    horizon: int | None = None
    lookahead: int = 0

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError("L must be an integer >= 1")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if not self.c5 >= 1.0:
            raise ValueError("c5 must be >= 1 (level 0 is always visited once)")
        if self.lookahead < 0:
            raise ValueError("lookahead must be >= 0")
        if self.horizon is not None and self.lookahead > self.horizon:
            raise ValueError("lookahead must not exceed horizon")

    @property
    def plus_dir(self) -> int:
        return 0 if self.direction == 1 else 1


def _proj(traj: Trajectory, cfg: RegenConfig) -> tuple[np.ndarray, int]:
    horizon = traj.n_steps if cfg.horizon is None else cfg.horizon
    if traj.n_steps < horizon:
        raise ValueError(f"trajectory has {traj.n_steps} steps, horizon is {horizon}")
    proj = np.ascontiguousarray(cfg.direction * traj.positions[: horizon + 1, 0])
    return proj, horizon


def detect_S(traj: Trajectory, frm: int, cfg: RegenConfig, origin: int = 0):
    """Smallest n >= frm satisfying the record-plus-straight-run condition,
    with records measured over times in [origin, n - L)."""
    proj, horizon = _proj(traj, cfg)
    L = cfg.L
    coins = traj.coins
    dirs = traj.dirs
    for n in range(max(frm, origin + L), horizon + 1):
        rec = n - L
        prior = proj[origin:rec]
        if prior.size and not proj[rec] > prior.max():
            continue
        if all(coins[t] == 1 and dirs[t] == cfg.plus_dir for t in range(rec, n)):
            return n
    return Censored(horizon)


@dataclass
class RegenRecord:
    taus: np.ndarray
    flags: list
    S_times: np.ndarray
    R_times: list  # absolute R for each S, Censored when it never triggered
    K: list  # per tau, the 1-based index of the accepted S within its search
    horizon: int
    cfg: RegenConfig

    @property
    def confirmed_taus(self) -> np.ndarray:
        n = sum(1 for f in self.flags if f == CONFIRMED)
        return self.taus[:n]

    def confirmed(self) -> "RegenRecord":
        n = len(self.confirmed_taus)
        return RegenRecord(self.taus[:n], self.flags[:n], self.S_times, self.R_times,
                           self.K[:n], self.horizon, self.cfg)

    def to_dict(self) -> dict:
        return {
            "taus": self.taus.tolist(),
            "flags": list(self.flags),
            "S_times": self.S_times.tolist(),
            "R_times": [None if is_censored(r) else int(r) for r in self.R_times],
            "K": list(self.K),
            "horizon": self.horizon,
            "L": self.cfg.L,
            "direction": self.cfg.direction,
            "c5": self.cfg.c5,
            "lookahead": self.cfg.lookahead,
        }


def detect_tau(traj: Trajectory, cfg: RegenConfig) -> RegenRecord:
    proj, horizon = _proj(traj, cfg)
    taus, s, r = _jit.detect_regenerations(proj, traj.coins[:horizon], traj.dirs[:horizon],
                                           cfg.plus_dir, int(cfg.L), float(cfg.c5))
    flags = [CONFIRMED if horizon - int(t) >= cfg.lookahead else CENSORED for t in taus]
    R = [Censored(horizon) if v < 0 else int(v) for v in r]
    K, count = [], 0
    for v in r:
        count += 1
        if v < 0:
            K.append(count)
            count = 0
    return RegenRecord(taus, flags, s, R, K[: len(taus)], horizon, cfg)


def lookahead_study(record: RegenRecord, lookaheads) -> dict:
    """Confirmed fraction of the detected taus as a function of lookahead."""
    n = max(len(record.taus), 1)
    return {int(la): float(np.sum(record.horizon - record.taus >= la)) / n for la in lookaheads}


@dataclass
class Slab:
    n: int
    P: np.ndarray  # relative truncated path, shape (dt - L + 1, d)
    W: np.ndarray | None  # kernels along P
    F: np.ndarray
    dt: int

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "P": self.P.tolist(),
            "W": None if self.W is None else self.W.tolist(),
            "F": self.F.tolist(),
            "dt": self.dt,
        }


def extract_slabs(traj: Trajectory, env: EnvironmentRealization | None,
                  record: RegenRecord) -> list[Slab]:
    """Slabs J_n between tau_{n-1} and tau_n (tau_0 = 0); kernels read when
    ``env`` is given."""
    if any(f != CONFIRMED for f in record.flags):
        raise ValueError("record contains censored taus; use record.confirmed() first")
    L = record.cfg.L
    pos = traj.positions
    out = []
    prev = 0
    for n, t in enumerate(record.taus, start=1):
        t = int(t)
        seg = pos[prev: t - L + 1]
        W = None if env is None else env.kernels(seg)
        out.append(Slab(n, seg - pos[prev], W, pos[t] - pos[prev], t - prev))
        prev = t
    return out


def slab_arrays(traj: Trajectory, taus: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Displacements F_n and durations for consecutive taus (tau_0 = 0)."""
    t = np.concatenate([[0], np.asarray(taus, dtype=np.int64)])
    pos = traj.positions[t]
    return np.diff(pos, axis=0), np.diff(t)


def regen_ratio_velocity(slabs) -> np.ndarray:
    """(sum F_n) / (sum dt_n)."""
    if isinstance(slabs, tuple):
        F, dt = slabs
    else:
        if not slabs:
            raise ValueError("no confirmed slabs")
        F = np.array([s.F for s in slabs])
        dt = np.array([s.dt for s in slabs])
    if len(dt) == 0:
        raise ValueError("no confirmed slabs")
    return np.asarray(F, dtype=float).sum(axis=0) / float(np.sum(dt))


def write_slabs_jsonl(path, slabs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in slabs:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
