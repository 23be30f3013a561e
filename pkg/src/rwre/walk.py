"""Quenched walk with its explicit coin decomposition.

Each step at time n from site x reads a coin eps_{n,x} ~ Bernoulli(d*kappa).
With coin 1 the step is uniform over the 2d unit vectors; with coin 0 it
follows the residual law (omega(x, e) - kappa/2) / (1 - d*kappa). Averaging
over the coin gives back omega(x, .) exactly.

Coins are a hashed field keyed by (seed, time, site). The uniform used to pick
the direction comes from a separate stream keyed by time, so conditioning on
coins leaves the direction randomness untouched.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import _jit
from .coupling import DiscreteMeasure
from .env import BoxExhausted, Direction, EnvironmentRealization, SiteKernel

MASK64 = 0xFFFFFFFFFFFFFFFF


class EllipticityError(ValueError):
    """A kernel entry is too small for the coin decomposition."""


def _u64(x) -> np.uint64:
    return np.uint64(int(x) & MASK64)


@dataclass(frozen=True)
class CoinField:
    """Bernoulli(d*kappa) coins indexed by (time, site).

    ``forced`` pins every coin to 0 or 1, which is useful in tests.
    """

    seed: int
    kappa: float
    dim: int
    forced: int | None = None

    @property
    def p(self) -> float:
        return self.dim * self.kappa

    def coin(self, time: int, site) -> int:
        if self.forced is not None:
            return int(self.forced)
        h = _jit.site_time_hash(_u64(self.seed), np.asarray(site, dtype=np.int64).reshape(-1),
                                int(time), _jit.COIN_STREAM)
        return int(_jit.to_unit(np.uint64(h)) < self.p)

    @property
    def forced_code(self) -> int:
        return -1 if self.forced is None else int(self.forced)


@dataclass(frozen=True)
class StepLaw:
    """One-step law split into its uniform and residual parts."""

    coin_p: float
    residual: np.ndarray
    mixture: np.ndarray

    def measure(self) -> DiscreteMeasure:
        dim = self.mixture.shape[0] // 2
        return DiscreteMeasure([Direction(e, dim) for e in range(2 * dim)], self.mixture, check=False)

    def residual_measure(self) -> DiscreteMeasure:
        dim = self.residual.shape[0] // 2
        return DiscreteMeasure([Direction(e, dim) for e in range(2 * dim)], self.residual, check=False)


def one_step_law(kernel, kappa: float) -> StepLaw:
    """d*kappa * Uniform(2d) + (1 - d*kappa) * ResidualLaw, equal to ``kernel``."""
    k = np.asarray(kernel.probs if isinstance(kernel, SiteKernel) else kernel, dtype=float)
    n_dir = k.shape[0]
    dk = 0.5 * n_dir * kappa
    if np.any(k <= 0.5 * kappa):
        raise EllipticityError(f"kernel entry <= kappa/2: {k}")
    residual = (k - 0.5 * kappa) / (1.0 - dk)
    mixture = dk / n_dir + (1.0 - dk) * residual
    return StepLaw(dk, residual, mixture)


@dataclass(frozen=True)
class StepRecord:
    time: int
    site: tuple
    coin: int
    direction: Direction


@dataclass
class Trajectory:
    """Lattice path with per-step coins and directions.

    ``positions`` has shape (n+1, d); ``coins`` and ``dirs`` have length n and
    describe the step taken from ``positions[t]`` at absolute time ``t0 + t``.
    """

    positions: np.ndarray
    coins: np.ndarray
    dirs: np.ndarray
    t0: int = 0

    @property
    def start(self) -> np.ndarray:
        return self.positions[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_steps(self) -> int:
        return self.coins.shape[0]

    def __len__(self):
        return self.n_steps

    def steps(self) -> Iterator[StepRecord]:
        d = self.dim
        for t in range(self.n_steps):
            yield StepRecord(self.t0 + t, tuple(int(v) for v in self.positions[t]),
                             int(self.coins[t]), Direction(int(self.dirs[t]), d))

    def check_path(self) -> bool:
        """Every step moves by exactly one unit vector."""
        if self.n_steps == 0:
            return True
        jumps = np.abs(np.diff(self.positions, axis=0)).sum(axis=1)
        return bool(np.all(jumps == 1))

    def truncated(self, n: int) -> "Trajectory":
        n = min(n, self.n_steps)
        return Trajectory(self.positions[: n + 1], self.coins[:n], self.dirs[:n], self.t0)

    def to_csv(self, path) -> None:
        """Columns t, x_1..x_d, coin, dir; the final position has blank coin/dir."""
        d = self.dim
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{i + 1}" for i in range(d)] + ["coin", "dir"])
            for t in range(self.n_steps + 1):
                row = [self.t0 + t] + [int(v) for v in self.positions[t]]
                if t < self.n_steps:
                    row += [int(self.coins[t]), int(self.dirs[t])]
                else:
                    row += ["", ""]
                w.writerow(row)

    @classmethod
    def from_steps(cls, start, dir_indices, coins=None, t0: int = 0) -> "Trajectory":
        """Build a trajectory from direction indices (coins default to 0)."""
        start = np.asarray(start, dtype=np.int64).reshape(-1)
        d = start.shape[0]
        dirs = np.asarray(dir_indices, dtype=np.int8).reshape(-1)
        steps = np.zeros((dirs.shape[0], d), dtype=np.int64)
        if dirs.size:
            steps[np.arange(dirs.shape[0]), dirs // 2] = np.where(dirs % 2 == 0, 1, -1)
        pos = np.vstack([start[None, :], start + np.cumsum(steps, axis=0)])
        c = np.zeros(dirs.shape[0], dtype=np.uint8) if coins is None else np.asarray(coins, dtype=np.uint8)
        return cls(pos, c, dirs, t0)

    @classmethod
    def from_positions(cls, positions, coins=None, t0: int = 0) -> "Trajectory":
        pos = np.asarray(positions, dtype=np.int64)
        if pos.ndim == 1:
            pos = pos[:, None]
        diff = np.diff(pos, axis=0)
        if diff.size and not np.all(np.abs(diff).sum(axis=1) == 1):
            raise ValueError("positions do not form a nearest-neighbour path")
        axis = np.argmax(np.abs(diff), axis=1) if diff.size else np.zeros(0, dtype=np.int64)
        sign = diff[np.arange(diff.shape[0]), axis] if diff.size else np.zeros(0, dtype=np.int64)
        dirs = (2 * axis + (sign < 0)).astype(np.int8)
        n = pos.shape[0] - 1
        c = np.zeros(n, dtype=np.uint8) if coins is None else np.asarray(coins, dtype=np.uint8)
        return cls(pos, c, dirs, t0)


def direction_uniform(rng_seed: int, time: int) -> float:
    return float(_jit.to_unit(np.uint64(_jit.time_hash(_u64(rng_seed), int(time)))))


def step(env: EnvironmentRealization, coins: CoinField, time: int, site, rng_seed: int) -> StepRecord:
    """One step of the coin-decomposed walk from ``site`` at ``time``."""
    x = np.asarray(site, dtype=np.int64).reshape(-1)
    c = coins.coin(time, x)
    u = direction_uniform(rng_seed, time)
    kern = np.asarray(env.kernel_at(x).probs, dtype=float)
    e = int(_jit.choose_direction(c, u, kern, env.kappa, coins.p))
    return StepRecord(int(time), tuple(int(v) for v in x), c, Direction(e, env.dim))


def simulate(env: EnvironmentRealization, coins: CoinField, start, n_steps: int,
             rng_seed: int, t0: int = 0) -> Trajectory:
    """Exactly ``n_steps`` steps from ``start``; GIBBS box exits raise BoxExhausted."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if coins.dim != env.dim or coins.kappa != env.kappa:
        raise ValueError("coin field and environment disagree on (dim, kappa)")
    x0 = np.asarray(start, dtype=np.int64).reshape(-1)
    if x0.shape[0] != env.dim:
        raise ValueError(f"start {tuple(x0)} does not have dimension {env.dim}")
    pos, c, dirs, status = _jit.walk(*env.jit_args(), _u64(coins.seed), coins.forced_code,
                                     _u64(rng_seed), x0, int(t0), int(n_steps))
    if status >= 0:
        raise BoxExhausted(pos[status], env.box, step=int(status))
    return Trajectory(pos, c, dirs, int(t0))
