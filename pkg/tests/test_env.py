import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rwre import _jit
from rwre.env import (
    Box,
    BoxExhausted,
    Direction,
    EnvironmentSpec,
    InvalidSpec,
    field_kernels,
    gibbs_interaction,
    l1_ball,
    make_environment,
    pair_correlation,
    realize_gibbs_box,
    sample_block_kernel,
    sample_iid_kernel,
    site_hash,
)


def random_sites(rng, n, dim, span=10**6):
    return rng.integers(-span, span, size=(n, dim))


# ---------------------------------------------------------------- hashing


def test_site_hash_deterministic():
    assert site_hash(5, (1, 2), 0) == site_hash(5, (1, 2), 0)


def test_site_hash_streams_differ():
    rng = np.random.default_rng(0)
    same = 0
    for _ in range(1000):
        s = int(rng.integers(0, 2**63))
        x = rng.integers(-1000, 1000, size=3)
        same += site_hash(s, x, 0) == site_hash(s, x, 1)
    assert same <= 1


def test_site_hash_bits_unbiased_over_neighbours():
    sites = np.stack([np.arange(10**5), np.zeros(10**5, dtype=np.int64)], axis=1)
    h = _jit.site_hash_many(np.uint64(11), sites, 0)
    for bit in (0, 17, 40, 63):
        ones = int(((h >> np.uint64(bit)) & np.uint64(1)).sum())
        p = stats.chisquare([ones, sites.shape[0] - ones]).pvalue
        assert p > 0.001


@given(st.integers(0, 2**64 - 1), st.lists(st.integers(-2**40, 2**40), min_size=2, max_size=5))
def test_to_unit_in_open_interval(seed, site):
    u = _jit.to_unit(np.uint64(site_hash(seed, site, 3)))
    assert 0.0 < u < 1.0


# ---------------------------------------------------------------- spec


def test_spec_rejects_large_kappa():
    with pytest.raises(InvalidSpec, match="kappa must be < 1/\\(2d\\) = 0.25"):
        EnvironmentSpec(dim=2, kappa=0.3)


def test_spec_rejects_excess_drift():
    with pytest.raises(InvalidSpec):
        EnvironmentSpec(dim=2, kappa=0.1, drift=(0.6, 0.0))


def test_direction_indexing():
    e = Direction(3, 2)
    assert (e.axis, e.sign) == (1, -1)
    assert e.negate().index == 2
    assert e.vector().tolist() == [0, -1]


def test_l1_ball_counts():
    assert l1_ball(2, 0).tolist() == [[0, 0]]
    assert len(l1_ball(2, 1)) == 5
    assert len(l1_ball(3, 2)) == 25
    assert len(l1_ball(2, 2, min_radius=1)) == 12


# ---------------------------------------------------------------- iid


def test_iid_invariants_million_sites():
    spec = EnvironmentSpec(dim=2, kappa=0.1, seed=3)
    k = field_kernels(spec, random_sites(np.random.default_rng(1), 10**6, 2))
    assert np.all(k > 0.1)
    assert np.max(np.abs(k.sum(axis=1) - 1.0)) <= 1e-12


def test_iid_kernel_is_cached_and_deterministic():
    spec = EnvironmentSpec(dim=3, kappa=0.05, seed=9)
    env = make_environment(spec)
    a = env.kernel_at((1, -2, 3))
    assert env.kernel_at((1, -2, 3)) is a
    fresh = make_environment(spec).kernel_at((1, -2, 3))
    assert np.array_equal(a.probs, fresh.probs)
    assert np.array_equal(a.probs, sample_iid_kernel(spec, (1, -2, 3)).probs)


def test_iid_scan_order_irrelevant():
    spec = EnvironmentSpec(dim=2, kappa=0.05, seed=2)
    sites = random_sites(np.random.default_rng(4), 500, 2)
    fwd = field_kernels(spec, sites)
    bwd = field_kernels(spec, sites[::-1])[::-1]
    assert np.array_equal(fwd, bwd)


def test_iid_symmetric_marginals():
    spec = EnvironmentSpec(dim=2, kappa=0.05, seed=8)
    k = field_kernels(spec, random_sites(np.random.default_rng(5), 10**5, 2))
    means = k.mean(axis=0)
    se = k.std(axis=0).max() / np.sqrt(k.shape[0])
    assert np.ptp(means) < 3 * np.sqrt(2) * se


def test_iid_stationarity_ks():
    spec = EnvironmentSpec(dim=2, kappa=0.05, drift=(0.1, 0.0), seed=1)
    g = np.stack(np.meshgrid(np.arange(100), np.arange(100)), -1).reshape(-1, 2)
    a = field_kernels(spec, g)[:, 0]
    b = field_kernels(spec, g + np.array([5000, -777]))[:, 0]
    assert stats.ks_2samp(a, b).pvalue > 0.001


def test_drift_tilts_mean_kernel():
    spec = EnvironmentSpec(dim=2, kappa=0.05, drift=(0.2, 0.0), seed=1)
    k = field_kernels(spec, random_sites(np.random.default_rng(0), 10**4, 2))
    assert k[:, 0].mean() - k[:, 1].mean() == pytest.approx(0.2, abs=0.01)


def test_wrong_family_helpers():
    with pytest.raises(InvalidSpec):
        sample_iid_kernel(EnvironmentSpec(dim=2, kappa=0.1, family="block", range=1), (0, 0))
    with pytest.raises(InvalidSpec):
        sample_block_kernel(EnvironmentSpec(dim=2, kappa=0.1), (0, 0))


# ---------------------------------------------------------------- block


def test_block_zero_range_matches_iid_law():
    iid = EnvironmentSpec(dim=2, kappa=0.05, seed=1)
    blk = EnvironmentSpec(dim=2, kappa=0.05, family="block", range=0, seed=2)
    sites = random_sites(np.random.default_rng(2), 10**5, 2)
    a = field_kernels(iid, sites)[:, 0]
    b = field_kernels(blk, sites)[:, 0]
    se = np.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) < 3 * se


def _block_pair_corr(m, dist, n=10**5, seed=3):
    spec = EnvironmentSpec(dim=2, kappa=0.05, family="block", range=m, seed=seed)
    rng = np.random.default_rng(seed)
    # spread base sites far apart so pairs are mutually independent
    x = np.stack([np.arange(n) * (4 * m + dist + 3), rng.integers(-10**6, 10**6, n)], axis=1)
    y = x + np.array([dist, 0])
    return pair_correlation(field_kernels(spec, x)[:, 0], field_kernels(spec, y)[:, 0])


def test_block_independent_beyond_range():
    m = 2
    r, se = _block_pair_corr(m, 2 * m + 1)
    assert abs(r) < 3 * se


def test_block_correlated_within_range():
    r, se = _block_pair_corr(2, 1)
    assert abs(r) > 5 * se


def test_block_kernel_invariants():
    spec = EnvironmentSpec(dim=3, kappa=0.03, family="block", range=1, seed=4)
    k = field_kernels(spec, random_sites(np.random.default_rng(0), 10**4, 3))
    assert np.all(k > 0.03)
    assert np.max(np.abs(k.sum(axis=1) - 1)) <= 1e-12


# ---------------------------------------------------------------- gibbs


def gibbs_spec(**kw):
    base = dict(dim=2, kappa=0.05, family="gibbs", gamma=1.0, gibbs_range=1, sweeps=20, seed=6)
    base.update(kw)
    return EnvironmentSpec(**base)


def test_gibbs_deterministic():
    box = Box((-5, -5), (5, 5))
    a = realize_gibbs_box(gibbs_spec(), box)
    b = realize_gibbs_box(gibbs_spec(), box)
    assert np.array_equal(a._table, b._table)


def test_gibbs_box_exhausted():
    env = realize_gibbs_box(gibbs_spec(), Box((0, 0), (3, 3)))
    env.kernel_at((3, 3)).check(0.05)
    with pytest.raises(BoxExhausted):
        env.kernel_at((4, 0))


def test_gibbs_kernels_elliptic():
    env = realize_gibbs_box(gibbs_spec(drift=(0.1, -0.05)), Box((0, 0), (20, 20)))
    k = env.kernels(env.box.sites())
    assert np.all(k > 0.05)
    assert np.max(np.abs(k.sum(axis=1) - 1)) <= 1e-12


def test_gibbs_zero_coupling_matches_iid():
    env = realize_gibbs_box(gibbs_spec(coupling=0.0, sweeps=2), Box((0, 0), (99, 99)))
    g = env.kernels(env.box.sites())[:, 0]
    iid = field_kernels(EnvironmentSpec(dim=2, kappa=0.05, seed=1),
                        random_sites(np.random.default_rng(1), g.size, 2))[:, 0]
    assert stats.ks_2samp(g, iid).pvalue > 0.001


def test_gibbs_interaction_weights():
    offs, w = gibbs_interaction(gibbs_spec(gibbs_range=2, gamma=0.5))
    assert len(offs) == 12
    assert np.allclose(w, np.exp(-0.5 * np.abs(offs).sum(axis=1)))


@pytest.mark.slow
def test_gibbs_correlation_decays():
    spec = gibbs_spec(sweeps=100, seed=12)
    env = realize_gibbs_box(spec, Box((0, 0), (119, 119)))
    k = env.kernels(env.box.sites()).reshape(120, 120, 4)[..., 0]
    lags = np.arange(1, 6)
    corr = []
    for l in lags:
        a = np.concatenate([k[:, :-l].ravel(), k[:-l, :].ravel()])
        b = np.concatenate([k[:, l:].ravel(), k[l:, :].ravel()])
        corr.append(np.corrcoef(a, b)[0, 1])
    corr = np.asarray(corr)
    assert np.all(corr > 0)
    fit = stats.linregress(lags, np.log(corr))
    assert fit.slope < 0 and fit.pvalue < 0.01


# ---------------------------------------------------------------- io


def test_export_csv(tmp_path):
    env = make_environment(EnvironmentSpec(dim=2, kappa=0.1, seed=1))
    p = tmp_path / "k.csv"
    env.export_csv(p, Box((0, 0), (1, 2)))
    lines = p.read_text().splitlines()
    assert lines[0] == "x_1,x_2,p_0,p_1,p_2,p_3"
    assert len(lines) == 1 + 6


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32), st.floats(0.01, 0.99))
def test_property_ellipticity(dim, seed, frac):
    kappa = frac / (2 * dim)
    spec = EnvironmentSpec(dim=dim, kappa=kappa, seed=seed)
    k = field_kernels(spec, random_sites(np.random.default_rng(seed), 200, dim))
    assert np.all(k > kappa)
    assert np.max(np.abs(k.sum(axis=1) - 1)) <= 1e-12
