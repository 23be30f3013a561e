from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import all_taus, default_patch, enumerate_pairs, s_time
from rwre.env import EnvironmentSpec, make_environment
from rwre.pathstats import is_censored
from rwre.regen import (
    CENSORED,
    CONFIRMED,
    RegenConfig,
    detect_S,
    detect_tau,
    extract_slabs,
    lookahead_study,
    regen_ratio_velocity,
    slab_arrays,
    write_slabs_jsonl,
)
from rwre.walk import CoinField, Trajectory, simulate


def traj(dirs, coins=None):
    return Trajectory.from_steps((0, 0), dirs, coins)


def straight(n):
    return traj([0] * n, [1] * n)


def simulated(drift=0.2, n=20000, seed=1, dim=2, kappa=0.05):
    d = (drift,) + (0.0,) * (dim - 1)
    env = make_environment(EnvironmentSpec(dim=dim, kappa=kappa, drift=d, seed=seed))
    return env, simulate(env, CoinField(seed + 7, kappa, dim), np.zeros(dim, dtype=np.int64), n, seed + 3)


def oracle(t, cfg):
    proj = [cfg.direction * int(v) for v in t.positions[:, 0]]
    return all_taus(proj, t.coins.tolist(), t.dirs.tolist(), cfg.plus_dir, cfg.L, cfg.c5)


# ---------------------------------------------------------------- config


def test_config_guards():
    with pytest.raises(ValueError):
        RegenConfig(L=0)
    with pytest.raises(ValueError):
        RegenConfig(c5=0.5)
    with pytest.raises(ValueError):
        RegenConfig(horizon=5, lookahead=6)


# ---------------------------------------------------------------- S


def test_S_fixture_L2():
    t = traj([0, 0, 2], [1, 1, 0])
    assert detect_S(t, 0, RegenConfig(L=2)) == 2


def test_S_straight_L3():
    assert detect_S(straight(10), 0, RegenConfig(L=3)) == 3


def test_S_after_backtrack():
    # positions along e1: 0, 1, 0, 1, 2, 3; the record is wiped until time 4
    t = traj([0, 1, 0, 0, 0], [1] * 5)
    cfg = RegenConfig(L=1)
    assert detect_S(t, 0, cfg) == 1
    assert detect_S(t, 2, cfg) == 5


def test_S_censored():
    assert is_censored(detect_S(traj([2, 2, 2], [1, 1, 1]), 0, RegenConfig(L=1)))


# ---------------------------------------------------------------- tau


@pytest.mark.parametrize("L", [1, 2, 3])
def test_straight_coin_one_taus(L):
    rec = detect_tau(straight(30), RegenConfig(L=L))
    assert rec.taus.tolist() == [L * k for k in range(1, 30 // L + 1)]
    assert rec.taus.tolist() == oracle(straight(30), RegenConfig(L=L))


def test_detector_matches_oracle_on_simulated_paths():
    for seed in range(5):
        for L in (1, 2):
            _, t = simulated(drift=0.3, n=3000, seed=seed)
            cfg = RegenConfig(L=L, c5=2.0)
            assert detect_tau(t, cfg).taus.tolist() == oracle(t, cfg)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 1)), max_size=25),
       st.integers(1, 3), st.sampled_from([1.0, 1.5, 2.0, 4.0]), st.sampled_from([1, -1]))
def test_property_detector_matches_oracle(steps, L, c5, direction):
    t = traj([s for s, _ in steps], [c for _, c in steps])
    cfg = RegenConfig(L=L, c5=c5, direction=direction)
    assert detect_tau(t, cfg).taus.tolist() == oracle(t, cfg)


def test_exhaustive_horizon4_matches_oracle():
    kappa = Fraction(1, 10)
    patch = default_patch(kappa)
    cfg = RegenConfig(L=1, c5=2.0, lookahead=1)
    total = Fraction(0)
    law_det, law_ora = {}, {}
    for p, pos, coins, dirs in enumerate_pairs(4, kappa, patch):
        total += p
        t = traj(dirs, coins)
        rec = detect_tau(t, cfg)
        ora = oracle(t, cfg)
        assert rec.taus.tolist() == ora
        if len(rec.taus) and rec.flags[0] == CONFIRMED:
            law_det[int(rec.taus[0])] = law_det.get(int(rec.taus[0]), 0) + p
        if ora and 4 - ora[0] >= cfg.lookahead:
            law_ora[ora[0]] = law_ora.get(ora[0], 0) + p
    assert total == 1
    assert law_det == law_ora


def test_record_structure_on_simulated_path():
    _, t = simulated(n=100000, kappa=0.1, drift=0.5)
    cfg = RegenConfig(L=2)
    rec = detect_tau(t, cfg)
    x = t.positions[:, 0]
    assert len(rec.taus) > 10
    assert np.all(np.diff(rec.taus) > 0)
    prev = 0
    for tau in rec.taus:
        r = tau - cfg.L
        if r > prev:
            assert x[r] > x[prev:r].max()
        assert np.all(t.coins[r:tau] == 1) and np.all(t.dirs[r:tau] == 0)
        prev = tau


def test_lookahead_monotone():
    _, t = simulated(n=5000)
    confirmed = []
    for la in (0, 10, 100, 1000, 4000):
        rec = detect_tau(t, RegenConfig(L=1, lookahead=la))
        confirmed.append(set(rec.confirmed_taus.tolist()))
    for a, b in zip(confirmed, confirmed[1:]):
        assert b <= a


def test_lookahead_study_fractions():
    _, t = simulated(n=5000)
    rec = detect_tau(t, RegenConfig(L=1))
    study = lookahead_study(rec, [0, 100, 1000])
    assert study[0] == 1.0
    assert study[0] >= study[100] >= study[1000]


def test_reflection_symmetry():
    _, t = simulated(n=5000)
    ref = Trajectory(t.positions * np.array([-1, 1]), t.coins, t.dirs ^ (t.dirs < 2), t.t0)
    assert ref.check_path()
    a = detect_tau(t, RegenConfig(L=2, direction=1))
    b = detect_tau(ref, RegenConfig(L=2, direction=-1))
    assert a.taus.tolist() == b.taus.tolist()


def test_flags_at_horizon():
    rec = detect_tau(straight(10), RegenConfig(L=1, lookahead=3))
    assert rec.flags[-1] == CENSORED
    assert rec.confirmed_taus.tolist() == [1, 2, 3, 4, 5, 6, 7]


def test_more_drift_more_regenerations():
    counts = []
    for drift in (0.05, 0.2, 0.4):
        n = 0
        for seed in range(3):
            _, t = simulated(drift=drift, n=20000, seed=seed)
            n += len(detect_tau(t, RegenConfig(L=1, lookahead=1000)).confirmed_taus)
        counts.append(n)
    assert counts[0] < counts[1] < counts[2]


# ---------------------------------------------------------------- slabs


def test_straight_slab_geometry():
    t = straight(12)
    cfg = RegenConfig(L=3)
    slabs = extract_slabs(t, None, detect_tau(t, cfg))
    for s in slabs:
        assert s.dt == 3 and s.P.shape[0] == s.dt - cfg.L + 1
        assert s.F.tolist() == [s.dt, 0]
    assert regen_ratio_velocity(slabs)[0] == 1.0


def test_slab_invariants_and_idempotence(tmp_path):
    env, t = simulated(n=200000, seed=4, kappa=0.1, drift=0.5)
    cfg = RegenConfig(L=1, lookahead=1000)
    rec = detect_tau(t, cfg).confirmed()
    slabs = extract_slabs(t, env, rec)
    assert len(slabs) > 1000
    F, dt = slab_arrays(t, rec.taus)
    assert np.all(F[:, 0] >= cfg.L) and np.all(dt >= cfg.L)
    for s in slabs[:50]:
        assert np.all(s.P[0] == 0)
        assert s.W.shape == (s.P.shape[0], 4)
    again = extract_slabs(t, env, rec)
    assert all(np.array_equal(a.P, b.P) and np.array_equal(a.W, b.W) for a, b in zip(slabs, again))
    assert np.allclose(regen_ratio_velocity(slabs), regen_ratio_velocity((F, dt)))
    write_slabs_jsonl(tmp_path / "s.jsonl", slabs[:3])
    assert len((tmp_path / "s.jsonl").read_text().splitlines()) == 3


def test_censored_slab_rejected():
    t = straight(10)
    with pytest.raises(ValueError):
        extract_slabs(t, None, detect_tau(t, RegenConfig(L=1, lookahead=5)))


def test_identical_slabs_ratio():
    F = np.array([[3, 1]] * 5)
    dt = np.array([7] * 5)
    assert np.allclose(regen_ratio_velocity((F, dt)), [3 / 7, 1 / 7])


def test_no_slabs():
    with pytest.raises(ValueError):
        regen_ratio_velocity([])
