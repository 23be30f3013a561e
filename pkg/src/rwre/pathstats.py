"""Deterministic statistics of a finite lattice path.

Levels are measured along ``direction * e_1`` relative to the starting
point: level i is {x : direction * (x - X_0) . e_1 = i}. Every quantity that
is an infimum over an unbounded future returns ``Censored(horizon)`` when the
defining event does not happen within the path.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _jit


@dataclass(frozen=True)
class Censored:
    """The event did not happen by ``horizon`` (the last index of the path)."""

    horizon: int

    def __repr__(self):
        return f"Censored({self.horizon})"


def is_censored(v) -> bool:
    return isinstance(v, Censored)


class CensoredWindow(ValueError):
    """A statistic needs a level the path has not reached; extend the horizon."""


def _positions(path) -> np.ndarray:
    pos = getattr(path, "positions", path)
    pos = np.asarray(pos, dtype=np.int64)
    return pos[:, None] if pos.ndim == 1 else pos


def _check_dir(direction: int) -> int:
    if direction not in (1, -1):
        raise ValueError("direction must be +1 (e_1) or -1 (-e_1)")
    return direction


def levels(path, direction: int = 1) -> np.ndarray:
    """Level index of every position, relative to X_0."""
    pos = _positions(path)
    return _check_dir(direction) * (pos[:, 0] - pos[0, 0])


class HittingTimes:
    """T_i = first n with X_n in level i; ``Censored`` for unreached levels."""

    def __init__(self, lev: np.ndarray):
        self.horizon = lev.shape[0] - 1
        self.lo = int(lev.min())
        self.hi = int(lev.max())
        first = np.full(self.hi - self.lo + 1, -1, dtype=np.int64)
        # reversed assignment keeps the earliest time for each level
        first[lev[::-1] - self.lo] = np.arange(lev.shape[0] - 1, -1, -1)
        self._first = first

    def __getitem__(self, i: int):
        if self.lo <= i <= self.hi:
            return int(self._first[i - self.lo])
        return Censored(self.horizon)

    def as_dict(self) -> dict:
        return {i: int(self._first[i - self.lo]) for i in range(self.lo, self.hi + 1)}


def hitting_times(path, direction: int = 1) -> HittingTimes:
    return HittingTimes(levels(path, direction))


def visit_times(path, i: int, direction: int = 1) -> np.ndarray:
    return np.nonzero(levels(path, direction) == i)[0]


def _pair(i: int, j: int) -> None:
    if not 0 <= i < j:
        raise ValueError(f"need 0 <= i < j, got i={i}, j={j}")


def kth_visit(path, i: int, j: int, k: int, direction: int = 1):
    """T_{i,j}^k: time of the k-th visit to level i before T_j (strictly later
    visits count as new ones). Returns None when there are fewer than k."""
    _pair(i, j)
    lev = levels(path, direction)
    T = HittingTimes(lev)
    tj = T[j]
    end = lev.shape[0] if is_censored(tj) else tj
    times = np.nonzero(lev[:end] == i)[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > times.shape[0]:
        return None if not is_censored(tj) else Censored(T.horizon)
    return int(times[k - 1])


def level_visits(path, i: int, j: int, direction: int = 1):
    """N_{i,j} = #{n < T_j : X_n in level i}; censored if T_j is."""
    _pair(i, j)
    lev = levels(path, direction)
    tj = HittingTimes(lev)[j]
    if is_censored(tj):
        return tj
    return int(np.count_nonzero(lev[:tj] == i))


class _LevelTable:
    """Shared precomputation for h, H and E over many (m, l)."""

    def __init__(self, path, direction: int = 1):
        self.lev = levels(path, direction)
        self.T = HittingTimes(self.lev)
        self.horizon = self.T.horizon

    def need(self, j: int) -> int:
        tj = self.T[j]
        if is_censored(tj):
            raise CensoredWindow(f"level {j} is not reached by time {self.horizon}")
        return tj

    def N(self, i: int, j: int) -> int:
        tj = self.need(j)
        return int(np.count_nonzero(self.lev[:tj] == i))

    def h(self, i: int, l: int) -> int:
        tj = self.need(i + l)
        times = np.nonzero(self.lev[:tj] == i)[0]
        return int(times[-1] - times[0])

    def H(self, m: int, l: int) -> float:
        tj = self.need(m + l)
        seg = self.lev[:tj]
        return float(sum(np.count_nonzero(seg == m + i) / (i + 1) ** 2 for i in range(l)))


def h_stat(path, i: int, l: int, direction: int = 1) -> int:
    """h_{i,l}: time between the first and last visit to level i before T_{i+l}."""
    if i < 0 or l < 1:
        raise ValueError("need i >= 0 and l >= 1")
    return _LevelTable(path, direction).h(i, l)


def H_stat(path, m: int, l: int, direction: int = 1) -> float:
    """H_{m,l} = sum_{i<l} N_{m+i,m+l} / (i+1)^2."""
    if m < 0 or l < 1:
        raise ValueError("need m >= 0 and l >= 1")
    return _LevelTable(path, direction).H(m, l)


def E_stat(path, M: int, l: int, a: float, direction: int = 1) -> float:
    """Fraction of 0 <= m <= M with h_{m,l} <= a and H_{m,l} <= a."""
    return float(E_table(path, [M], [l], [a], direction)[0, 0, 0])


def _h_H_arrays(lev: np.ndarray, M: int, l: int):
    """h_{m,l} and H_{m,l} for m = 0..M in one pass per window."""
    T = HittingTimes(lev)
    hs = np.empty(M + 1, dtype=np.int64)
    Hs = np.empty(M + 1)
    for m in range(M + 1):
        tj = T[m + l]
        if is_censored(tj):
            raise CensoredWindow(f"level {m + l} is not reached by time {T.horizon}")
        seg = lev[:tj]
        rel = seg - m
        inside = (rel >= 0) & (rel < l)
        counts = np.bincount(rel[inside], minlength=l)
        Hs[m] = float(np.sum(counts / (np.arange(l) + 1.0) ** 2))
        at = np.nonzero(rel == 0)[0]
        hs[m] = at[-1] - at[0]
    return hs, Hs


def E_table(path, M_grid: Sequence[int], l_grid: Sequence[int], a_grid: Sequence[float],
            direction: int = 1) -> np.ndarray:
    """E_{M,l}(a) on a grid, shape (len(M_grid), len(l_grid), len(a_grid))."""
    lev = levels(path, direction)
    a = np.asarray(a_grid, dtype=float)
    out = np.empty((len(M_grid), len(l_grid), len(a)))
    Mmax = max(M_grid)
    for li, l in enumerate(l_grid):
        hs, Hs = _h_H_arrays(lev, Mmax, l)
        good = (hs[:, None] <= a[None, :]) & (Hs[:, None] <= a[None, :])
        cum = np.cumsum(good, axis=0)
        for mi, M in enumerate(M_grid):
            out[mi, li] = cum[M] / (M + 1.0)
    return out


def stopping_D(path, direction: int = 1):
    """D = inf{n >= 1 : level(X_n) <= 0}."""
    lev = levels(path, direction)
    hit = np.nonzero(lev[1:] <= 0)[0]
    return int(hit[0] + 1) if hit.size else Censored(lev.shape[0] - 1)


def stopping_R(path, c5: float, direction: int = 1):
    """First n at which the running visit count of some level j >= 0 exceeds
    c5 (j+1)^2, minimised with D."""
    if not c5 > 0:
        raise ValueError("c5 must be > 0")
    lev = np.ascontiguousarray(levels(path, direction))
    r = int(_jit.stopping_r(lev, float(c5)))
    return Censored(lev.shape[0] - 1) if r < 0 else r


def tail_interaction_sum(path, L: float, gamma: float, c5: float, direction: int = 1) -> float:
    """sum_j (visits to level j at times i < R) * exp(-gamma (j + L)).

    When R is censored every visit in the path counts.
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    lev = levels(path, direction)
    R = stopping_R(path, c5, direction)
    seg = lev if is_censored(R) else lev[:R]
    seg = seg[seg >= 0]
    counts = np.bincount(seg)
    j = np.arange(counts.shape[0])
    return float(np.sum(counts * np.exp(-gamma * (j + L))))


def tail_majorant(L: float, gamma: float, c5: float, n_levels: int) -> float:
    """c5 * sum_{j < n_levels} (j+1)^2 exp(-gamma (j + L))."""
    j = np.arange(n_levels)
    return float(c5 * np.sum((j + 1.0) ** 2 * np.exp(-gamma * (j + L))))


@dataclass
class Lemma5Witness:
    a_grid: list
    l_grid: list
    M_grid: list
    table: np.ndarray  # (M, l, a)

    @property
    def witness(self) -> float:
        """max over a of min over l of E at the largest M."""
        last = self.table[int(np.argmax(self.M_grid))]
        return float(np.max(np.min(last, axis=0)))

    @property
    def best_a(self) -> float:
        last = self.table[int(np.argmax(self.M_grid))]
        return float(self.a_grid[int(np.argmax(np.min(last, axis=0)))])

    def to_dict(self) -> dict:
        return {
            "a_grid": list(map(float, self.a_grid)),
            "l_grid": list(map(int, self.l_grid)),
            "M_grid": list(map(int, self.M_grid)),
            "table": self.table.tolist(),
            "witness": self.witness,
            "best_a": self.best_a,
        }


def lemma5_witness(path, a_grid, l_grid, M_grid, direction: int = 1) -> Lemma5Witness:
    tab = E_table(path, M_grid, l_grid, a_grid, direction)
    return Lemma5Witness(list(a_grid), list(l_grid), list(M_grid), tab)


@dataclass
class PathStatsReport:
    T: dict
    N: dict
    h: dict
    H: dict
    D: object
    R: object
    horizon: int
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[tuple]:
        """Long format rows (stat, index1, index2, value)."""
        out = [("T", i, "", v) for i, v in sorted(self.T.items())]
        out += [("N", i, j, v) for (i, j), v in sorted(self.N.items())]
        out += [("h", i, l, v) for (i, l), v in sorted(self.h.items())]
        out += [("H", m, l, v) for (m, l), v in sorted(self.H.items())]
        out += [("D", "", "", _fmt(self.D)), ("R", "", "", _fmt(self.R))]
        return out

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "T": {str(k): v for k, v in sorted(self.T.items())},
            "N": _nest(self.N),
            "h": _nest(self.h),
            "H": _nest(self.H),
            "D": _fmt(self.D),
            "R": _fmt(self.R),
            **self.extra,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["stat", "index1", "index2", "value"])
            for r in self.rows():
                w.writerow(r)


def _fmt(v):
    return f"censored@{v.horizon}" if is_censored(v) else v


def _nest(d: dict) -> dict:
    out: dict = {}
    for (a, b), v in sorted(d.items()):
        out.setdefault(str(a), {})[str(b)] = v
    return out


def path_stats_report(path, c5: float, max_level: int | None = None, max_l: int = 4,
                      direction: int = 1) -> PathStatsReport:
    """All statistics over levels 0..max_level that the path resolves."""
    tab = _LevelTable(path, direction)
    top = tab.T.hi if max_level is None else min(max_level, tab.T.hi)
    T = {i: tab.T[i] for i in range(0, top + 1)}
    N, h, H = {}, {}, {}
    for i in range(0, top + 1):
        for j in range(i + 1, top + 1):
            N[(i, j)] = tab.N(i, j)
        for l in range(1, max_l + 1):
            if i + l <= top:
                h[(i, l)] = tab.h(i, l)
                H[(i, l)] = tab.H(i, l)
    return PathStatsReport(T, N, h, H, stopping_D(path, direction), stopping_R(path, c5, direction),
                           tab.horizon)


def dumps_report(report: PathStatsReport) -> str:
    return json.dumps(report.to_json(), sort_keys=True, indent=2)
