"""Finite-support coupling machinery.

Contents:

* ``DiscreteMeasure`` plus the splitting ``nu = a*mu + (1-a)*Z``.
* A law-of-large-numbers sandwich simulator for sequences whose conditional
  laws stay within a density bracket ``[a, b]`` of a reference measure.
* The residual kernel ``zeta`` and the triangular memory-coin chain that
  rebuilds a chain with decaying memory from independent coins.
* Extraction of the memory-free index set ``M_n`` and the ``K_m`` statistics.

Atoms may be any hashable values; mixing ``(1-D)*X + D*Z`` always means
branch selection, never arithmetic.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterator, Sequence

import numpy as np
from scipy import stats

NORM_TOL = 1e-12
CLIP_TOL = 1e-15


class PreconditionError(ValueError):
    """An input violates a documented precondition; ``atom`` names the culprit."""

    def __init__(self, msg, atom=None):
        self.atom = atom
        super().__init__(msg if atom is None else f"{msg} (atom {atom!r})")


class DiscreteMeasure:
    """Probability measure on a finite list of distinct atoms."""

    __slots__ = ("atoms", "weights", "_index")

    def __init__(self, atoms: Sequence[Hashable], weights, check: bool = True):
        self.atoms = tuple(atoms)
        self.weights = np.asarray(weights, dtype=float).copy()
        self.weights.flags.writeable = False
        self._index = {a: i for i, a in enumerate(self.atoms)}
        if check:
            if len(self._index) != len(self.atoms):
                raise ValueError("atoms must be distinct")
            if self.weights.shape != (len(self.atoms),):
                raise ValueError("one weight per atom is required")
            if np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative")
            if abs(self.weights.sum() - 1.0) > NORM_TOL:
                raise ValueError(f"weights sum to {self.weights.sum()!r}, not 1")

    @classmethod
    def from_dict(cls, mapping: dict) -> "DiscreteMeasure":
        return cls(list(mapping), list(mapping.values()))

    @classmethod
    def point(cls, atom) -> "DiscreteMeasure":
        return cls([atom], [1.0])

    @classmethod
    def uniform(cls, atoms) -> "DiscreteMeasure":
        atoms = list(atoms)
        return cls(atoms, np.full(len(atoms), 1.0 / len(atoms)))

    def __repr__(self):
        body = ", ".join(f"{a!r}: {w:.6g}" for a, w in zip(self.atoms, self.weights))
        return f"DiscreteMeasure({{{body}}})"

    def __len__(self):
        return len(self.atoms)

    def prob(self, atom) -> float:
        i = self._index.get(atom)
        return 0.0 if i is None else float(self.weights[i])

    def on(self, atoms: Sequence) -> np.ndarray:
        """Weights listed along ``atoms`` (zero off the support)."""
        return np.array([self.prob(a) for a in atoms])

    def as_dict(self) -> dict:
        return dict(zip(self.atoms, self.weights.tolist()))

    def mean(self) -> float:
        return float(np.dot(np.asarray(self.atoms, dtype=float), self.weights))

    def second_moment(self) -> float:
        x = np.asarray(self.atoms, dtype=float)
        return float(np.dot(x * x, self.weights))

    def tv(self, other: "DiscreteMeasure") -> float:
        atoms = union_atoms(self, other)
        return 0.5 * float(np.abs(self.on(atoms) - other.on(atoms)).sum())

    def sample(self, rng: np.random.Generator, size: int | None = None):
        idx = rng.choice(len(self.atoms), size=size, p=self.weights)
        if size is None:
            return self.atoms[int(idx)]
        return [self.atoms[i] for i in idx]

    def sample_index(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cdf = np.cumsum(self.weights)
        return np.minimum(np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right"),
                          len(self.atoms) - 1)

    def to_json(self) -> str:
        return json.dumps({"atoms": list(self.atoms), "weights": self.weights.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMeasure":
        raw = json.loads(text)
        atoms = [tuple(a) if isinstance(a, list) else a for a in raw["atoms"]]
        return cls(atoms, raw["weights"])


def union_atoms(*measures: DiscreteMeasure) -> list:
    seen, out = set(), []
    for m in measures:
        for a in m.atoms:
            if a not in seen:
                seen.add(a)
                out.append(a)
    return out


def empirical(samples: Sequence[Hashable]) -> DiscreteMeasure:
    counts: dict = {}
    for s in samples:
        counts[s] = counts.get(s, 0) + 1
    n = float(len(samples))
    return DiscreteMeasure(list(counts), [c / n for c in counts.values()])


def _residual(top: np.ndarray, bottom: np.ndarray, scale: float, atoms, what: str) -> np.ndarray:
    raw = top - bottom
    bad = np.nonzero(raw < -CLIP_TOL)[0]
    if bad.size:
        raise PreconditionError(f"{what}: negative residual mass {raw[bad[0]]:.3g}", atoms[bad[0]])
    return np.clip(raw, 0.0, None) / scale


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class Split:
    delta_p: float  # P(Delta = 1) = 1 - a
    pi: DiscreteMeasure
    Z: DiscreteMeasure

    @property
    def a(self) -> float:
        return 1.0 - self.delta_p

    def mixture(self) -> DiscreteMeasure:
        atoms = union_atoms(self.pi, self.Z)
        w = self.a * self.pi.on(atoms) + self.delta_p * self.Z.on(atoms)
        return DiscreteMeasure(atoms, w, check=False)

    def sample(self, rng: np.random.Generator, size: int) -> list:
        """Draw X = pi if Delta = 0 else Z, with Delta ~ Bernoulli(1 - a)."""
        delta = rng.random(size) < self.delta_p
        pi_draw = self.pi.sample_index(rng, size)
        z_draw = self.Z.sample_index(rng, size)
        return [self.Z.atoms[z] if dl else self.pi.atoms[p]
                for dl, p, z in zip(delta, pi_draw, z_draw)]


def split(nu: DiscreteMeasure, mu: DiscreteMeasure, a: float) -> Split:
    """Write nu as a*mu + (1-a)*Z with Z = (nu - a*mu)/(1-a)."""
    if not 0.0 < a < 1.0:
        raise PreconditionError(f"a must lie in (0, 1), got {a}")
    atoms = union_atoms(nu, mu)
    z = _residual(nu.on(atoms), a * mu.on(atoms), 1.0 - a, atoms, "dnu/dmu < a")
    return Split(1.0 - a, mu, DiscreteMeasure(atoms, z, check=False))


def max_split_weight(nu: DiscreteMeasure, mu: DiscreteMeasure) -> float:
    """Largest a with nu >= a*mu atomwise, i.e. the infimum of dnu/dmu."""
    atoms = union_atoms(nu, mu)
    top, bottom = nu.on(atoms), mu.on(atoms)
    pos = bottom > 0
    return float(np.min(top[pos] / bottom[pos]))


def zeta_residual(h_next: DiscreteMeasure, h_prev: DiscreteMeasure, eps: float) -> DiscreteMeasure:
    """zeta = (h_next - (1-eps) h_prev)/eps, so h_next = eps*zeta + (1-eps)*h_prev."""
    if not 0.0 < eps < 1.0:
        raise PreconditionError(f"eps must lie in (0, 1), got {eps}")
    atoms = union_atoms(h_next, h_prev)
    z = _residual(h_next.on(atoms), (1.0 - eps) * h_prev.on(atoms), eps, atoms,
                  "h_next < (1-eps) h_prev")
    return DiscreteMeasure(atoms, z, check=False)


# ---------------------------------------------------------------------------
# LLN sandwich


@dataclass
class Adversary:
    """History-dependent chooser among a fixed set of conditional laws.

    ``laws`` is an (m, len(mu)) array of weights on the atoms of ``mu``;
    ``choose(t, running_mean, last)`` returns a row index.
    """

    name: str
    laws: np.ndarray
    choose: Callable[[int, float, float], int]


def neutral_adversary(mu: DiscreteMeasure) -> Adversary:
    return Adversary("neutral", mu.weights[None, :].copy(), lambda t, m, x: 0)


def _tilted(mu: DiscreteMeasure, target: int, b: float) -> np.ndarray:
    """Density b at atom ``target``; the remaining atoms share what is left."""
    w = mu.weights
    rest = 1.0 - w[target]
    law = np.empty_like(w)
    if rest <= 0.0:
        return w.copy()
    dens = min(b, 1.0 / w[target])
    law[:] = w * (1.0 - dens * w[target]) / rest
    law[target] = dens * w[target]
    return law


def tilt_up_adversary(mu: DiscreteMeasure, b: float) -> Adversary:
    top = int(np.argmax(np.asarray(mu.atoms, dtype=float)))
    return Adversary("tilt-up", _tilted(mu, top, b)[None, :], lambda t, m, x: 0)


def tilt_down_adversary(mu: DiscreteMeasure, b: float) -> Adversary:
    bottom = int(np.argmin(np.asarray(mu.atoms, dtype=float)))
    return Adversary("tilt-down", _tilted(mu, bottom, b)[None, :], lambda t, m, x: 0)


def history_adversary(mu: DiscreteMeasure, b: float) -> Adversary:
    """Pushes the running mean back toward m_mu from whichever side it is on."""
    x = np.asarray(mu.atoms, dtype=float)
    laws = np.stack([_tilted(mu, int(np.argmax(x)), b), _tilted(mu, int(np.argmin(x)), b)])
    m_mu = mu.mean()
    return Adversary("history", laws, lambda t, m, last: 0 if m < m_mu else 1)


def check_bracket(mu: DiscreteMeasure, laws: np.ndarray, a: float, b: float) -> None:
    w = mu.weights
    for r, law in enumerate(np.atleast_2d(laws)):
        if abs(law.sum() - 1.0) > NORM_TOL or np.any(law < 0):
            raise PreconditionError(f"adversary law {r} is not a probability vector")
        lo = law < a * w - CLIP_TOL
        hi = law > b * w + CLIP_TOL
        if lo.any() or hi.any():
            i = int(np.argmax(lo | hi))
            raise PreconditionError(f"adversary law {r} leaves the density bracket [{a}, {b}]",
                                    mu.atoms[i])


@dataclass
class SandwichResult:
    running_mean: np.ndarray
    lower: float
    upper: float
    band: float

    @property
    def final(self) -> float:
        return float(self.running_mean[-1])

    @property
    def within(self) -> bool:
        return self.lower - self.band <= self.final <= self.upper + self.band


def lln_sandwich_simulate(mu: DiscreteMeasure, a: float, b: float, n: int,
                          adversary: Adversary, rng: np.random.Generator) -> SandwichResult:
    """Simulate X_1..X_n with X_t drawn from the adversary's chosen law."""
    if not a <= 1.0 <= b:
        raise PreconditionError(f"need a <= 1 <= b, got a={a}, b={b}")
    x = np.asarray(mu.atoms, dtype=float)
    if np.any(x < 0):
        raise PreconditionError("mu must live on nonnegative reals")
    laws = np.atleast_2d(np.asarray(adversary.laws, dtype=float))
    check_bracket(mu, laws, a, b)
    cdfs = np.cumsum(laws, axis=1)
    u = rng.random(n)
    means = np.empty(n)
    total, last = 0.0, float("nan")
    k = len(x)
    for t in range(n):
        r = adversary.choose(t, total / t if t else mu.mean(), last)
        j = int(np.searchsorted(cdfs[r], u[t] * cdfs[r, -1], side="right"))
        last = x[min(j, k - 1)]
        total += last
        means[t] = total / (t + 1)
    m_mu = mu.mean()
    # every admissible law has second moment <= b * E_mu[X^2]
    band = 4.0 * math.sqrt(b * mu.second_moment() / n)
    return SandwichResult(means, a * m_mu, b * m_mu, band)


# ---------------------------------------------------------------------------
# kernel families and the memory-coin chain


def eps_schedule(c: float, L: float, k_max: int) -> np.ndarray:
    """eps_k = exp(-c k L) for k = 1..k_max, stored at index k (index 0 unused)."""
    eps = np.zeros(k_max + 1)
    eps[1:] = np.exp(-c * L * np.arange(1, k_max + 1))
    return eps


@dataclass
class KernelFamily:
    """Tabulated h_k(. | j_{n-1}, ..., j_{n-k+1}) on a finite state space.

    ``table[hist]`` holds the weights over ``states`` given a history tuple
    listed most recent first; its length is k-1 for h_k. ``eps[k]`` is the
    ratio floor parameter: h_{k+1}(.|hist) >= (1 - eps[k]) h_k(.|hist[:-1]).
    """

    states: tuple
    eps: np.ndarray
    table: dict = field(default_factory=dict)

    @property
    def k_max(self) -> int:
        return max(len(h) for h in self.table) + 1

    def h(self, k: int, hist: tuple) -> DiscreteMeasure:
        if len(hist) != k - 1:
            raise ValueError(f"h_{k} needs a history of length {k - 1}, got {len(hist)}")
        try:
            w = self.table[tuple(hist)]
        except KeyError:
            raise ValueError(f"depth {k} exceeds the tabulated depth {self.k_max}") from None
        return DiscreteMeasure(self.states, w, check=False)

    def zeta(self, k: int, hist: tuple) -> DiscreteMeasure:
        """Residual kernel with history (j_{n-1}, ..., j_{n-k}) of length k."""
        return zeta_residual(self.h(k + 1, hist), self.h(k, hist[:-1]), float(self.eps[k]))

    def check_ratio_floor(self) -> None:
        for hist, w in self.table.items():
            k = len(hist)
            if k == 0:
                continue
            prev = np.asarray(self.table[hist[:-1]])
            viol = np.asarray(w) < (1.0 - self.eps[k]) * prev - CLIP_TOL
            if viol.any():
                raise PreconditionError(f"ratio floor fails at history {hist}",
                                        self.states[int(np.argmax(viol))])

    def chain_law(self, n: int) -> dict:
        """Exact law of (J_1, ..., J_n) for the plain chain J_i ~ h_i(.|J_{i-1},...,J_1)."""
        self._need(n)
        law = {(): 1.0}
        for i in range(1, n + 1):
            nxt = {}
            for path, p in law.items():
                w = self.table[tuple(reversed(path))]
                for s, q in zip(self.states, w):
                    if q > 0:
                        nxt[path + (s,)] = p * q
            law = nxt
        return law

    def _need(self, n: int) -> None:
        if n > self.k_max:
            raise ValueError(f"depth {n} exceeds the tabulated depth {self.k_max}")

    @classmethod
    def random(cls, states: Sequence, eps: np.ndarray, k_max: int,
               rng: np.random.Generator) -> "KernelFamily":
        """h_{k+1}(.|hist) = (1 - eps_k) h_k(.|hist[:-1]) + eps_k * (fresh Dirichlet)."""
        states = tuple(states)
        s = len(states)
        table = {(): rng.dirichlet(np.ones(s))}
        for k in range(1, k_max):
            for hist in itertools.product(states, repeat=k):
                prev = table[hist[:-1]]
                table[hist] = (1.0 - eps[k]) * prev + eps[k] * rng.dirichlet(np.ones(s))
        fam = cls(states, np.asarray(eps, dtype=float), table)
        fam.check_ratio_floor()
        return fam

    def to_json(self) -> str:
        return json.dumps({
            "states": list(self.states),
            "eps": self.eps.tolist(),
            "table": [{"history": list(h), "weights": list(map(float, w))}
                      for h, w in self.table.items()],
        })

    @classmethod
    def from_json(cls, text: str) -> "KernelFamily":
        raw = json.loads(text)
        table = {tuple(r["history"]): np.asarray(r["weights"], dtype=float) for r in raw["table"]}
        fam = cls(tuple(raw["states"]), np.asarray(raw["eps"], dtype=float), table)
        fam.check_ratio_floor()
        return fam


@dataclass
class MemoryChainSample:
    """One draw of the triangular construction, 1-based like the definitions.

    ``Delta[i][k]`` and ``Z[i][k]`` exist for 1 <= k < i <= n; ``J_first[i]``
    is the base draw J_{i,1} (with J_{1,1} = J_1).
    """

    J: list
    Delta: dict
    Z: dict
    J_first: dict

    @property
    def n(self) -> int:
        return len(self.J)


def memory_chain_build(family: KernelFamily, n: int, rng: np.random.Generator,
                       force_delta: int | None = None) -> MemoryChainSample:
    """Build (J_1, ..., J_n) from base draws, memory coins and residual draws."""
    family._need(n)
    J: list = []
    Delta: dict = {}
    Z: dict = {}
    J_first: dict = {}
    h1 = family.h(1, ())
    for i in range(1, n + 1):
        cur = h1.sample(rng)
        J_first[i] = cur
        Delta[i], Z[i] = {}, {}
        for k in range(1, i):
            hist = tuple(J[i - 1 - j - 1] for j in range(k))  # J_{i-1}, ..., J_{i-k}
            if force_delta is None:
                dl = int(rng.random() < family.eps[k])
            else:
                dl = int(force_delta)
            z = family.zeta(k, hist).sample(rng)
            Delta[i][k], Z[i][k] = dl, z
            if dl:
                cur = z
        J.append(cur)
    return MemoryChainSample(J, Delta, Z, J_first)


def memory_chain_population(family: KernelFamily, n: int, size: int,
                            rng: np.random.Generator, force_delta: int | None = None):
    """Vectorized draws; returns (J, Delta) with J of shape (size, n+1) holding
    state indices at columns 1..n and Delta of shape (size, n+1, n+1)."""
    family._need(n)
    S = len(family.states)
    idx = {s: i for i, s in enumerate(family.states)}
    # weight arrays keyed by encoded history (most recent first, base S)
    h_arr = {}
    for hist, w in family.table.items():
        code = 0
        for s in hist:
            code = code * S + idx[s]
        h_arr.setdefault(len(hist), {})[code] = np.asarray(w, dtype=float)
    tables = {}
    for depth, d in h_arr.items():
        t = np.zeros((S ** depth, S))
        for code, w in d.items():
            t[code] = w
        tables[depth] = t
    J = np.zeros((size, n + 1), dtype=np.int64)
    Delta = np.zeros((size, n + 1, n + 1), dtype=np.int8)

    def draw(weights):
        cdf = np.cumsum(weights, axis=1)
        u = rng.random(weights.shape[0]) * cdf[:, -1]
        return np.minimum((cdf <= u[:, None]).sum(axis=1), S - 1)

    for i in range(1, n + 1):
        cur = draw(np.broadcast_to(tables[0][0], (size, S)))
        code_prev = np.zeros(size, dtype=np.int64)
        for k in range(1, i):
            code = code_prev * S + J[:, i - k]  # history J_{i-1}, ..., J_{i-k}
            eps = family.eps[k]
            h_next = tables[k][code]
            h_prev = tables[k - 1][code_prev]
            zeta = np.clip(h_next - (1.0 - eps) * h_prev, 0.0, None) / eps
            z = draw(zeta)
            if force_delta is None:
                dl = rng.random(size) < eps
            else:
                dl = np.full(size, bool(force_delta))
            Delta[:, i, k] = dl
            cur = np.where(dl, z, cur)
            code_prev = code
        J[:, i] = cur
    return J, Delta


def enumerate_memory_chain(family: KernelFamily, n: int) -> Iterator[tuple]:
    """Every outcome (prob, J tuple, Delta dict) of the triangular construction."""
    family._need(n)
    states = family.states
    h1 = family.h(1, ())

    def rec(i, J, Delta, p):
        if i > n:
            yield p, tuple(J), {k: dict(v) for k, v in Delta.items()}
            return
        # one row: base draw, then for k = 1..i-1 a coin and a residual draw
        branches = [(p * h1.prob(s), s, {}) for s in states if h1.prob(s) > 0]
        for k in range(1, i):
            hist = tuple(J[i - 1 - j - 1] for j in range(k))
            zeta = family.zeta(k, hist)
            eps = float(family.eps[k])
            nxt = []
            for q, cur, row in branches:
                for dl, pd in ((0, 1.0 - eps), (1, eps)):
                    for z, pz in zip(zeta.atoms, zeta.weights):
                        if pz <= 0 or pd <= 0:
                            continue
                        r = dict(row)
                        r[k] = dl
                        nxt.append((q * pd * pz, z if dl else cur, r))
            branches = nxt
        for q, cur, row in branches:
            Delta[i] = row
            yield from rec(i + 1, J + [cur], Delta, q)
        Delta.pop(i, None)

    yield from rec(1, [], {}, 1.0)


def coupled_law(family: KernelFamily, n: int) -> dict:
    law: dict = {}
    for p, J, _ in enumerate_memory_chain(family, n):
        law[J] = law.get(J, 0.0) + p
    return law


def law_tv(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


# ---------------------------------------------------------------------------
# memory-free index set and K_m


def _delta_get(Delta, i, k) -> int:
    if isinstance(Delta, np.ndarray):
        return int(Delta[i, k])
    return int(Delta.get(i, {}).get(k, 0))


def I_event(Delta, n: int, i: int) -> bool:
    """Delta_{i,1..i-1} = 0 and Delta_{m,m-i..m-1} = 0 for all i < m <= n."""
    if any(_delta_get(Delta, i, k) for k in range(1, i)):
        return False
    for m in range(i + 1, n + 1):
        if any(_delta_get(Delta, m, k) for k in range(m - i, m)):
            return False
    return True


def M_set(Delta, n: int) -> frozenset:
    """M_n = {1 < i < n : I_n(i) holds}."""
    return frozenset(i for i in range(2, n) if I_event(Delta, n, i))


def M_sets_population(Delta: np.ndarray, n: int) -> np.ndarray:
    """Boolean (size, n+1) membership array of M_n for a vectorized population."""
    size = Delta.shape[0]
    member = np.zeros((size, n + 1), dtype=bool)
    # any_tail[m, j] = any Delta_{m,k} for k >= j (k < m)
    d = Delta.astype(bool)
    tail = np.flip(np.cumsum(np.flip(d, axis=2), axis=2), axis=2) > 0
    for i in range(2, n):
        ok = ~d[:, i, 1:i].any(axis=1)
        for m in range(i + 1, n + 1):
            ok &= ~tail[:, m, m - i]
        member[:, i] = ok
    return member


def K_value(Delta, m: int) -> int:
    """K_m = sup{1 <= j < m : Delta_{m,j} = 1}, with sup of the empty set = 0."""
    ks = [j for j in range(1, m) if _delta_get(Delta, m, j)]
    return max(ks) if ks else 0


def K_law(eps: np.ndarray, m: int) -> np.ndarray:
    """P(K_m = j) for j = 0..m-1 from independent Bernoulli(eps_j) coins."""
    p = np.zeros(m)
    survive = 1.0
    for j in range(m - 1, 0, -1):
        p[j] = eps[j] * survive
        survive *= 1.0 - eps[j]
    p[0] = survive
    return p


def expected_exp_K(eps: np.ndarray, m: int) -> float:
    law = K_law(eps, m)
    return float(np.dot(np.exp(np.arange(m)), law))


def K_population(Delta: np.ndarray, m: int) -> np.ndarray:
    """K_m for every draw of a population Delta array (size, n+1, n+1)."""
    coins = Delta[:, m, 1:m].astype(bool)
    last = np.where(coins.any(axis=1), m - 1 - np.argmax(coins[:, ::-1], axis=1), 0)
    return last.astype(np.int64)


def empirical_exp_K(Delta: np.ndarray, m: int) -> tuple[float, float]:
    """Sample mean of e^{K_m} and its standard error."""
    v = np.exp(K_population(Delta, m).astype(float))
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.shape[0])) if v.shape[0] > 1 else float("nan")


def population_law(family: KernelFamily, J: np.ndarray) -> dict:
    """Empirical law of (J_1, ..., J_n) from a population array of state indices."""
    rows, counts = np.unique(J[:, 1:], axis=0, return_counts=True)
    total = float(J.shape[0])
    return {tuple(family.states[i] for i in r): c / total for r, c in zip(rows, counts)}


def split_error(sp: Split, nu: DiscreteMeasure) -> float:
    """Largest atomwise gap between the split mixture and its target."""
    return float(np.max(np.abs(sp.mixture().on(nu.atoms) - nu.weights)))


@dataclass
class IidCheck:
    H: frozenset
    n_class: int
    marginals: dict  # i -> empirical law over state indices
    marginal_p: dict  # i -> chi-square p-value against h_1
    pair_p: dict  # (i, j) -> chi-square independence p-value
    level: float = 0.001

    @property
    def passed(self) -> bool:
        ps = list(self.marginal_p.values()) + list(self.pair_p.values())
        return all(p > self.level for p in ps)


def extract_M_and_iid_check(J: np.ndarray, Delta: np.ndarray, n: int, H,
                            base: np.ndarray, level: float = 0.001) -> IidCheck:
    """Condition a population on {M_n = H} and test that (J_i)_{i in H} look iid
    with marginal ``base`` (h_1) and are pairwise independent."""
    H = frozenset(H)
    member = M_sets_population(Delta, n)
    want = np.zeros(n + 1, dtype=bool)
    want[list(H)] = True
    rows = np.all(member[:, 2:n] == want[2:n], axis=1)
    cls = J[rows]
    if cls.shape[0] == 0:
        raise PreconditionError(f"conditioning class M_n = {sorted(H)} is empty")
    S = base.shape[0]
    marg, marg_p, pair_p = {}, {}, {}
    for i in sorted(H):
        counts = np.bincount(cls[:, i], minlength=S)
        marg[i] = counts / counts.sum()
        keep = base > 0
        marg_p[i] = float(stats.chisquare(counts[keep], base[keep] * counts.sum()).pvalue)
    for i, j in itertools.combinations(sorted(H), 2):
        tab = np.zeros((S, S))
        np.add.at(tab, (cls[:, i], cls[:, j]), 1)
        tab = tab[tab.sum(axis=1) > 0][:, tab.sum(axis=0) > 0]
        if min(tab.shape) < 2:
            pair_p[(i, j)] = 1.0
        else:
            pair_p[(i, j)] = float(stats.chi2_contingency(tab, correction=False).pvalue)
    return IidCheck(H, int(cls.shape[0]), marg, marg_p, pair_p, level)
