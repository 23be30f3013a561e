"""Stationary, uniformly elliptic random environments on Z^d.

Three dependence structures are supported:

* ``iid``: the kernel at x depends only on hashed randomness keyed by x.
* ``block``: the kernel at x is a symmetric function of an iid field on the
  l1-ball of radius m around x, so kernels further than 2m apart are
  independent.
* ``gibbs``: a finite box is sampled jointly by heat-bath sweeps of a
  nearest-range spin field; the kernel is read off the sampled field.

IID and BLOCK kernels are pure functions of ``(seed, site)``. A GIBBS
realization is a function of ``(seed, spec, box)`` and refuses queries
outside its box.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _jit

FAMILIES = ("iid", "block", "gibbs")
NORM_TOL = 1e-12


class InvalidSpec(ValueError):
    """Raised for environment parameters outside their documented range."""


class BoxExhausted(LookupError):
    """A GIBBS realization was queried outside its realized box."""

    def __init__(self, site, box=None, step=None):
        self.site = tuple(int(v) for v in site)
        self.box = box
        self.step = step
        msg = f"site {self.site} lies outside the realized box"
        if step is not None:
            msg += f" (reached at step {step})"
        super().__init__(msg)


@dataclass(frozen=True)
class Direction:
    """Unit step: index 2i is +e_{i+1}, index 2i+1 is -e_{i+1}."""

    index: int
    dim: int

    def __post_init__(self):
        if not 0 <= self.index < 2 * self.dim:
            raise ValueError(f"direction index {self.index} out of range for d={self.dim}")

    @property
    def axis(self) -> int:
        return self.index // 2

    @property
    def sign(self) -> int:
        return 1 if self.index % 2 == 0 else -1

    def negate(self) -> "Direction":
        return Direction(self.index ^ 1, self.dim)

    def vector(self) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.int64)
        v[self.axis] = self.sign
        return v

    @classmethod
    def all(cls, dim: int) -> list["Direction"]:
        return [cls(i, dim) for i in range(2 * dim)]


def unit_steps(dim: int) -> np.ndarray:
    """(2d, d) array of the step vectors in index order."""
    steps = np.zeros((2 * dim, dim), dtype=np.int64)
    for i in range(dim):
        steps[2 * i, i] = 1
        steps[2 * i + 1, i] = -1
    return steps


@dataclass(frozen=True)
class SiteKernel:
    """Transition probabilities over the 2d unit steps at one site."""

    probs: np.ndarray

    def check(self, kappa: float) -> None:
        p = self.probs
        if not np.all(p > kappa):
            raise ValueError(f"kernel entry <= kappa={kappa}: {p}")
        if abs(p.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"kernel sums to {p.sum()!r}")

    def __getitem__(self, e):
        return self.probs[e]

    def __len__(self):
        return self.probs.shape[0]


@dataclass(frozen=True)
class EnvironmentSpec:
    dim: int
    kappa: float
    family: str = "iid"
    drift: tuple = ()
    range: int = 0  # BLOCK radius m
    gamma: float = 1.0
    gibbs_range: int = 1
    sweeps: int = 50
    box_padding: int = 4
    coupling: float = 1.9
    levels: int = 8
    seed: int = 0

    def __post_init__(self):
        d = self.dim
        if int(d) != d or d < 2:
            raise InvalidSpec(f"dim must be an integer >= 2, got {d}")
        if not 0.0 < self.kappa < 1.0 / (2 * d):
            raise InvalidSpec(f"kappa must be < 1/(2d) = {1.0 / (2 * d):g} and > 0, got {self.kappa}")
        if self.family not in FAMILIES:
            raise InvalidSpec(f"family must be one of {FAMILIES}, got {self.family!r}")
        drift = tuple(float(b) for b in self.drift) if self.drift else (0.0,) * d
        if len(drift) != d:
            raise InvalidSpec(f"drift has {len(drift)} components, expected {d}")
        object.__setattr__(self, "drift", drift)
        if self.rho <= 0.0:
            raise InvalidSpec(
                f"drift {drift} leaves no room above kappa: need sum|b| < 1 - 2d*kappa = {1 - 2 * d * self.kappa:g}"
            )
        if self.range < 0:
            raise InvalidSpec("block range must be >= 0")
        if self.family == "gibbs":
            if not self.gamma > 0:
                raise InvalidSpec("gibbs gamma must be > 0")
            if self.sweeps < 1:
                raise InvalidSpec("gibbs sweeps must be >= 1")
            if self.gibbs_range < 1:
                raise InvalidSpec("gibbs range must be >= 1")
            if self.box_padding < 0:
                raise InvalidSpec("box_padding must be >= 0")
            if self.levels < 2:
                raise InvalidSpec("gibbs levels must be >= 2")
            if self.coupling < 0:
                raise InvalidSpec("gibbs coupling must be >= 0")
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    @property
    def rho(self) -> float:
        """Mass spread by the random simplex point."""
        return 1.0 - 2 * self.dim * self.kappa - float(np.abs(self.drift).sum())

    @property
    def tilt(self) -> np.ndarray:
        b = np.asarray(self.drift, dtype=float)
        t = np.empty(2 * self.dim)
        t[0::2] = np.maximum(b, 0.0)
        t[1::2] = np.maximum(-b, 0.0)
        return t

    @property
    def offsets(self) -> np.ndarray:
        """Field offsets summed into one kernel (the l1 ball for BLOCK)."""
        m = self.range if self.family == "block" else 0
        return l1_ball(self.dim, m)

    def replace(self, **kw) -> "EnvironmentSpec":
        vals = {f: getattr(self, f) for f in self.__dataclass_fields__}
        vals.update(kw)
        return EnvironmentSpec(**vals)


def l1_ball(dim: int, radius: int, min_radius: int = 0) -> np.ndarray:
    """All integer offsets y with min_radius <= |y|_1 <= radius, origin first."""
    pts = [
        p
        for p in itertools.product(range(-radius, radius + 1), repeat=dim)
        if min_radius <= sum(abs(c) for c in p) <= radius
    ]
    pts.sort(key=lambda p: (sum(abs(c) for c in p), p))
    return np.array(pts, dtype=np.int64).reshape(-1, dim)


def _site(site, dim) -> np.ndarray:
    x = np.asarray(site, dtype=np.int64).reshape(-1)
    if x.shape[0] != dim:
        raise ValueError(f"site {tuple(x)} does not have dimension {dim}")
    return x


def site_hash(seed: int, site, stream: int) -> int:
    """64-bit counter-based hash of (seed, site, stream)."""
    return int(_jit.site_hash(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF),
                              np.asarray(site, dtype=np.int64).reshape(-1), int(stream)))


def sample_iid_kernel(spec: EnvironmentSpec, site) -> SiteKernel:
    if spec.family != "iid":
        raise InvalidSpec(f"sample_iid_kernel needs the iid family, got {spec.family}")
    return _field_kernel(spec, site)


def sample_block_kernel(spec: EnvironmentSpec, site) -> SiteKernel:
    if spec.family != "block":
        raise InvalidSpec(f"sample_block_kernel needs the block family, got {spec.family}")
    return _field_kernel(spec, site)


def _field_kernel(spec, site) -> SiteKernel:
    out = np.empty(2 * spec.dim)
    _jit.field_kernel(np.uint64(spec.seed), _site(site, spec.dim), spec.offsets,
                      spec.kappa, spec.rho, spec.tilt, out)
    out.flags.writeable = False
    return SiteKernel(out)


def field_kernels(spec: EnvironmentSpec, sites) -> np.ndarray:
    """Vectorized kernels for IID/BLOCK specs, shape (n, 2d)."""
    sites = np.ascontiguousarray(sites, dtype=np.int64).reshape(-1, spec.dim)
    return _jit.field_kernels_many(np.uint64(spec.seed), sites, spec.offsets,
                                   spec.kappa, spec.rho, spec.tilt, 2 * spec.dim)


@dataclass(frozen=True)
class Box:
    """Axis-aligned lattice box with inclusive corners."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("box corners differ in dimension")

    @property
    def shape(self) -> tuple:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def empty(self) -> bool:
        return any(s <= 0 for s in self.shape)

    def padded(self, pad: int) -> "Box":
        return Box(tuple(l - pad for l in self.lo), tuple(h + pad for h in self.hi))

    def contains(self, site) -> bool:
        return all(l <= int(c) <= h for c, l, h in zip(site, self.lo, self.hi))

    def sites(self) -> np.ndarray:
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in grid], axis=1).astype(np.int64)


@dataclass
class EnvironmentRealization:
    """Lazy map from sites to kernels, with a per-instance cache."""

    spec: EnvironmentSpec
    box: Box | None = None
    _table: np.ndarray | None = None
    cache: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def kappa(self) -> float:
        return self.spec.kappa

    def kernel_at(self, site) -> SiteKernel:
        key = tuple(int(c) for c in np.asarray(site).reshape(-1))
        k = self.cache.get(key)
        if k is not None:
            return k
        if self.spec.family == "gibbs":
            idx = _jit.table_index(np.asarray(key, dtype=np.int64),
                                   np.asarray(self.box.lo, dtype=np.int64),
                                   np.asarray(self.box.shape, dtype=np.int64))
            if idx < 0:
                raise BoxExhausted(key, self.box)
            probs = self._table[idx].copy()
            probs.flags.writeable = False
            k = SiteKernel(probs)
        else:
            k = _field_kernel(self.spec, key)
        return self.cache.setdefault(key, k)

    def kernels(self, sites) -> np.ndarray:
        """Kernels at many sites without touching the cache."""
        sites = np.ascontiguousarray(sites, dtype=np.int64).reshape(-1, self.dim)
        if self.spec.family != "gibbs":
            return field_kernels(self.spec, sites)
        lo = np.asarray(self.box.lo, dtype=np.int64)
        shape = np.asarray(self.box.shape, dtype=np.int64)
        rel = sites - lo
        inside = np.all((rel >= 0) & (rel < shape), axis=1)
        if not inside.all():
            raise BoxExhausted(sites[np.argmin(inside)], self.box)
        idx = np.ravel_multi_index(tuple(rel.T), tuple(shape))
        return self._table[idx]

    def jit_args(self) -> tuple:
        """Arguments describing this environment to the compiled walker."""
        s = self.spec
        if s.family == "gibbs":
            return (_jit.FAMILY_TABLE, np.uint64(s.seed), s.offsets, s.kappa, s.rho, s.tilt,
                    np.asarray(self.box.lo, dtype=np.int64),
                    np.asarray(self.box.shape, dtype=np.int64), self._table)
        zero = np.zeros(s.dim, dtype=np.int64)
        return (_jit.FAMILY_FIELD, np.uint64(s.seed), s.offsets, s.kappa, s.rho, s.tilt,
                zero, zero, np.zeros((1, 2 * s.dim)))

    def export_csv(self, path, box: Box | None = None) -> None:
        """Write kernels on a box: columns x_1..x_d, p_0..p_{2d-1}."""
        box = box or self.box
        if box is None:
            raise ValueError("an explicit box is needed for lazily realized families")
        sites = box.sites()
        probs = self.kernels(sites)
        write_kernel_csv(path, sites, probs)


def write_kernel_csv(path, sites: np.ndarray, probs: np.ndarray) -> None:
    d = sites.shape[1]
    header = [f"x_{i + 1}" for i in range(d)] + [f"p_{e}" for e in range(2 * d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for x, p in zip(sites, probs):
            w.writerow([int(c) for c in x] + [repr(float(v)) for v in p])


def gibbs_interaction(spec: EnvironmentSpec) -> tuple[np.ndarray, np.ndarray]:
    """Neighbourhood offsets 1 <= |y|_1 <= r and weights e^{-gamma |y|_1}."""
    offs = l1_ball(spec.dim, spec.gibbs_range, min_radius=1)
    w = np.exp(-spec.gamma * np.abs(offs).sum(axis=1))
    return offs, w


def realize_gibbs_box(spec: EnvironmentSpec, box: Box | Sequence) -> EnvironmentRealization:
    """Jointly sample a GIBBS environment on ``box`` (padded while sampling)."""
    if spec.family != "gibbs":
        raise InvalidSpec(f"realize_gibbs_box needs the gibbs family, got {spec.family}")
    if not isinstance(box, Box):
        box = Box(*box)
    if len(box.lo) != spec.dim:
        raise ValueError(f"box has dimension {len(box.lo)}, expected {spec.dim}")
    if box.empty:
        raise ValueError(f"empty box {box}")
    big = box.padded(spec.box_padding)
    lo = np.asarray(big.lo, dtype=np.int64)
    shape = np.asarray(big.shape, dtype=np.int64)
    offs, w = gibbs_interaction(spec)
    seed = np.uint64(spec.seed)
    q = _jit.gibbs_sweeps(seed, lo, shape, spec.levels, 2 * spec.dim, w, offs,
                          float(spec.coupling), int(spec.sweeps))
    full = _jit.gibbs_kernels(seed, lo, shape, q, spec.levels, spec.kappa, spec.rho, spec.tilt)
    # restrict to the requested box
    pad = spec.box_padding
    full = full.reshape(tuple(shape) + (2 * spec.dim,))
    inner = full[tuple(slice(pad, pad + s) for s in box.shape)]
    table = np.ascontiguousarray(inner.reshape(-1, 2 * spec.dim))
    table.flags.writeable = False
    return EnvironmentRealization(spec, box=box, _table=table)


def make_environment(spec: EnvironmentSpec, box: Box | None = None) -> EnvironmentRealization:
    """Realization for any family; GIBBS needs ``box``."""
    if spec.family == "gibbs":
        if box is None:
            raise ValueError("gibbs environments need a box")
        return realize_gibbs_box(spec, box)
    return EnvironmentRealization(spec)


def kernel_at(env: EnvironmentRealization, site) -> SiteKernel:
    return env.kernel_at(site)


def pair_correlation(values_a: Iterable[float], values_b: Iterable[float]) -> tuple[float, float]:
    """Pearson correlation and its large-sample standard error 1/sqrt(n)."""
    a = np.asarray(values_a, dtype=float)
    b = np.asarray(values_b, dtype=float)
    r = float(np.corrcoef(a, b)[0, 1])
    return r, 1.0 / np.sqrt(a.shape[0])
