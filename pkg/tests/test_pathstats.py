import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwre.pathstats import (
    Censored,
    CensoredWindow,
    E_stat,
    E_table,
    H_stat,
    h_stat,
    hitting_times,
    is_censored,
    kth_visit,
    lemma5_witness,
    level_visits,
    path_stats_report,
    stopping_D,
    stopping_R,
    tail_interaction_sum,
    tail_majorant,
)
from rwre.walk import Trajectory


def path(*dirs, dim=2):
    return Trajectory.from_steps((0,) * dim, list(dirs))


STRAIGHT = path(*([0] * 100))


# ------------------------------------------------ brute-force oracles (plain loops)


def o_T(xs, i):
    for n, x in enumerate(xs):
        if x[0] - xs[0][0] == i:
            return n
    return None


def o_N(xs, i, j):
    tj = o_T(xs, j)
    if tj is None:
        return None
    return sum(1 for n in range(tj) if xs[n][0] - xs[0][0] == i)


def o_h(xs, i, l):
    tj = o_T(xs, i + l)
    visits = [n for n in range(tj) if xs[n][0] - xs[0][0] == i]
    return visits[-1] - visits[0]


def o_H(xs, m, l):
    return sum(o_N(xs, m + i, m + l) / (i + 1) ** 2 for i in range(l))


def o_D(xs):
    for n in range(1, len(xs)):
        if xs[n][0] <= xs[0][0]:
            return n
    return None


def o_R(xs, c5):
    counts = {}
    for n, x in enumerate(xs):
        j = x[0] - xs[0][0]
        if n >= 1 and j <= 0:
            return n
        counts[j] = counts.get(j, 0) + 1
        if j >= 0 and counts[j] > c5 * (j + 1) ** 2:
            return n
    return None


def random_path(rng, n, dim=2):
    return Trajectory.from_steps((0,) * dim, rng.integers(0, 2 * dim, size=n))


def biased_path(rng, n, p_plus=0.6):
    dirs = np.where(rng.random(n) < p_plus, 0, rng.integers(1, 4, size=n))
    return Trajectory.from_steps((0, 0), dirs)


# ------------------------------------------------ hitting times and visits


def test_straight_hitting_times():
    T = hitting_times(STRAIGHT)
    assert all(T[i] == i for i in range(101))
    assert is_censored(T[101])


def test_hand_forced_hitting_times():
    T = hitting_times(path(2, 0))
    assert (T[0], T[1]) == (0, 2)


def test_level_visits_fixture():
    p = path(0, 1, 0, 0)  # o, e1, o, e1, 2e1
    assert level_visits(p, 0, 2) == 2
    assert level_visits(p, 1, 2) == 2
    assert kth_visit(p, 0, 2, 2) == 2
    assert kth_visit(p, 0, 2, 3) is None


def test_straight_visits_are_one():
    for i in range(10):
        for j in range(i + 1, 11):
            assert level_visits(STRAIGHT, i, j) == 1


def test_level_visits_invalid_pair():
    with pytest.raises(ValueError):
        level_visits(STRAIGHT, 3, 3)


def test_level_visits_censored():
    assert isinstance(level_visits(path(0, 0), 0, 5), Censored)


def test_random_hitting_times_match_scan():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = random_path(rng, 10)
        xs = p.positions.tolist()
        T = hitting_times(p)
        for i in range(-10, 11):
            want = o_T(xs, i)
            got = T[i]
            assert (want is None and is_censored(got)) or got == want


# ------------------------------------------------ h, H, E


def test_h_H_fixture():
    p = path(0, 1, 0, 0)
    assert h_stat(p, 0, 2) == 2
    assert H_stat(p, 0, 2) == pytest.approx(2.5)


def test_straight_h_H_E():
    for l in range(1, 6):
        assert h_stat(STRAIGHT, 3, l) == 0
        assert H_stat(STRAIGHT, 3, l) == pytest.approx(sum(1 / (i + 1) ** 2 for i in range(l)))
        assert H_stat(STRAIGHT, 3, l) <= math.pi ** 2 / 6
        assert E_stat(STRAIGHT, 50, l, 2.0) == 1.0


def test_censored_window_raises():
    with pytest.raises(CensoredWindow):
        h_stat(path(0, 0), 1, 5)


def test_E_table_matches_scalar():
    rng = np.random.default_rng(3)
    p = biased_path(rng, 2000, 0.7)
    tab = E_table(p, [5, 20], [1, 3], [1.0, 4.0])
    for mi, M in enumerate([5, 20]):
        for li, l in enumerate([1, 3]):
            for ai, a in enumerate([1.0, 4.0]):
                assert tab[mi, li, ai] == E_stat(p, M, l, a)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_property_E_monotone(seed):
    p = biased_path(np.random.default_rng(seed), 600, 0.75)
    a_grid = [0.0, 1.0, 2.0, 4.0, 8.0, 32.0]
    l_grid = [1, 2, 3, 5]
    try:
        tab = E_table(p, [10], l_grid, a_grid)[0]
    except CensoredWindow:
        return
    assert np.all((tab >= 0) & (tab <= 1))
    assert np.all(np.diff(tab, axis=0) <= 0)
    assert np.all(np.diff(tab, axis=1) >= 0)


# ------------------------------------------------ D and R


def test_D_fixtures():
    assert stopping_D(path(2, 0)) == 1
    assert is_censored(stopping_D(STRAIGHT))


def test_R_straight_censored():
    assert is_censored(stopping_R(STRAIGHT, 1.0))


def test_R_sideways_path_stopped_by_D():
    # staying in level 0 makes D = 1 before any count can exceed 2
    assert stopping_R(path(2, 2), 2.0) == 1


def test_R_count_trigger():
    # level 1 visited at t = 1..5; the 5th visit exceeds 1 * 2^2
    p = path(0, 2, 2, 2, 2, 0)
    assert is_censored(stopping_D(p))
    assert stopping_R(p, 1.0) == 5


def test_R_rejects_nonpositive_c5():
    with pytest.raises(ValueError):
        stopping_R(STRAIGHT, 0.0)


def test_R_censored_count_bound():
    rng = np.random.default_rng(8)
    seen = 0
    for _ in range(300):
        p = biased_path(rng, 200, 0.8)
        c5 = 2.0
        if not is_censored(stopping_R(p, c5)):
            continue
        seen += 1
        lev = p.positions[:, 0]
        for j in range(lev.max() + 1):
            assert np.count_nonzero(lev == j) <= c5 * (j + 1) ** 2 + 1
    assert seen > 10


# ------------------------------------------------ tail sum


def test_tail_sum_straight_geometric():
    got = tail_interaction_sum(STRAIGHT, 10, 1.0, 2.0)
    want = sum(math.exp(-(j + 10)) for j in range(101))
    assert got == pytest.approx(want, rel=1e-13)
    assert got == pytest.approx(math.exp(-10) / (1 - math.exp(-1)), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 20), st.floats(0.1, 3.0))
def test_property_tail_sum_factorizes(seed, L, gamma):
    p = biased_path(np.random.default_rng(seed), 300)
    a = tail_interaction_sum(p, L, gamma, 2.0)
    b = tail_interaction_sum(p, L + 1, gamma, 2.0)
    assert b == pytest.approx(math.exp(-gamma) * a, rel=1e-12, abs=1e-300)


def test_tail_sum_below_majorant_when_censored():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(200):
        p = biased_path(rng, 300, 0.8)
        if is_censored(stopping_R(p, 2.0)):
            top = int(p.positions[:, 0].max()) + 1
            assert tail_interaction_sum(p, 3, 1.0, 2.0) <= tail_majorant(3, 1.0, 2.0, top)
            checked += 1
    assert checked > 10


def test_tail_sum_gamma_guard():
    with pytest.raises(ValueError):
        tail_interaction_sum(STRAIGHT, 1, 0.0, 1.0)


# ------------------------------------------------ witness and report


def test_witness_straight():
    w = lemma5_witness(STRAIGHT, [1.0, 2.0], [1, 2, 3], [10, 20])
    assert w.witness == 1.0
    assert w.best_a == 2.0


def test_report_rows_and_json(tmp_path):
    rep = path_stats_report(path(0, 1, 0, 0), 2.0)
    assert rep.T == {0: 0, 1: 1, 2: 4}
    assert rep.N[(0, 2)] == 2
    rep.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "stat,index1,index2,value"
    assert rep.to_json()["R"] == 2  # back to level 0 at n = 2


def test_random_paths_full_oracle():
    rng = np.random.default_rng(11)
    for _ in range(300):
        p = biased_path(rng, 50, 0.5)
        xs = p.positions.tolist()
        rep = path_stats_report(p, 2.0)
        top = max(rep.T)
        for i in range(top + 1):
            assert rep.T[i] == o_T(xs, i)
            for j in range(i + 1, top + 1):
                assert rep.N[(i, j)] == o_N(xs, i, j)
        for (i, l), v in rep.h.items():
            assert v == o_h(xs, i, l)
        for (m, l), v in rep.H.items():
            assert v == pytest.approx(o_H(xs, m, l), rel=1e-15)
        d, r = o_D(xs), o_R(xs, 2.0)
        assert (d is None and is_censored(rep.D)) or rep.D == d
        assert (r is None and is_censored(rep.R)) or rep.R == r
