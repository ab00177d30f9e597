import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

import oracles
from rstopo import _kernels
from rstopo.diagram import ModelConfig, ProjectedDiagram
from rstopo.estimation import fit
from rstopo.gibbs import Theta
from rstopo.replication import (ChainOptions, ProposalMoments, Schedule, _draw, acceptance_ratio,
                                proposal_density, proposal_sample, replicate, run_chain, sweep)


def _cloud(n, seed):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.normal(size=n), np.abs(rng.normal(size=n))])


STD = ProposalMoments(np.zeros(2), np.eye(2))


def test_folded_density_at_origin():
    assert proposal_density((0.0, 0.0), STD) == pytest.approx(2 / (2 * math.pi), rel=1e-14)
    assert proposal_density((0.0, -0.1), STD) == 0.0


def test_folded_density_integrates_to_one():
    m = ProposalMoments(np.array([0.3, 0.5]), np.array([[1.2, 0.4], [0.4, 0.6]]))
    val, _ = integrate.dblquad(lambda y, x: proposal_density((x, y), m), -12, 12, 0, 12,
                               epsabs=1e-12, epsrel=1e-10)
    assert val == pytest.approx(1.0, rel=1e-6)


def test_folded_density_matches_two_gaussians():
    m = ProposalMoments(np.array([0.3, 0.5]), np.array([[1.2, 0.4], [0.4, 0.6]]))
    inv, det = np.linalg.inv(m.cov), np.linalg.det(m.cov)
    for z in [(0.0, 0.2), (1.0, 2.0), (-2.0, 0.01)]:
        tot = 0.0
        for zz in (np.array(z), np.array([z[0], -z[1]])):
            d = zz - m.mean
            tot += math.exp(-0.5 * d @ inv @ d) / (2 * math.pi * math.sqrt(det))
        assert proposal_density(z, m) == pytest.approx(tot, rel=1e-12)


def test_samples_are_folded():
    rng = np.random.default_rng(0)
    m = ProposalMoments(np.array([0.0, -1.0]), np.eye(2))
    draws = np.array([proposal_sample(m, rng) for _ in range(20_000)])
    assert np.all(draws[:, 1] >= 0)


def test_degenerate_covariance_regularised():
    m = ProposalMoments.from_points(np.array([[0.0, 1.0], [1.0, 1.0], [2.0, 1.0]]))
    assert np.linalg.det(m.cov) > 0
    assert m.cov[1, 1] == pytest.approx(1e-9 * 1.0)


def test_acceptance_ratio_trivial_cases():
    pts = _cloud(5, 1)
    cfg = ModelConfig(K=1, delta=0.5)
    m = ProposalMoments.from_points(pts)
    zero = Theta(0.0, 0.0, (0.0,))
    x, xs = pts[0], np.array([0.3, 0.2])
    want = min(1.0, proposal_density(x, m) / proposal_density(xs, m))
    assert acceptance_ratio(x, xs, pts, zero, cfg, m, m, index=0) == pytest.approx(want)
    assert acceptance_ratio(x, x, pts, Theta(1, 1, (1,)), cfg, m, m, index=0) == 1.0


def test_acceptance_ratio_three_points_by_hand():
    pts = np.array([[0.0, 0.2], [0.3, 0.2], [1.5, 1.0]])
    cfg = ModelConfig(K=1, delta=0.5)
    th = Theta(1.0, 2.0, (-1.0,))
    m_now = ProposalMoments(np.array([0.6, 0.5]), np.array([[0.5, 0.1], [0.1, 0.3]]))
    m_after = ProposalMoments(np.array([0.65, 0.55]), np.array([[0.55, 0.1], [0.1, 0.35]]))
    x, xs = pts[0], np.array([0.2, 0.5])
    xbar = 0.6
    # neighbour of x is (0.3, 0.2) at 0.3 <= delta; x* is at distance sqrt(0.1) from it
    e_x = 1.0 * (0.0 - xbar) ** 2 + 2.0 * 0.04 - 1.0 * 0.3
    e_xs = 1.0 * (0.2 - xbar) ** 2 + 2.0 * 0.25 - 1.0 * math.sqrt(0.01 + 0.09)
    want = min(1.0, math.exp(e_x - e_xs) * proposal_density(x, m_after)
               / proposal_density(xs, m_now))
    got = acceptance_ratio(x, xs, pts, th, cfg, m_now, m_after, index=0)
    assert got == pytest.approx(want, rel=1e-13)


@pytest.mark.parametrize("order,frozen", [("sequential", False), ("shuffled", True),
                                          ("sequential", True), ("shuffled", False)])
def test_kernel_matches_reference_sweeps(order, frozen):
    rng = np.random.default_rng(hash((order, frozen)) % 2 ** 32)
    for trial in range(3):
        n = int(rng.integers(4, 25))
        pts = _cloud(n, trial)
        th = np.array([1.3, 0.7, 0.8, -0.4, 0.2])
        normals, uniforms, orders = _draw(np.random.default_rng(trial), 4, n, order)
        got = pts.copy()
        acc = _kernels.run_sweeps(got, th, 3, 0.7, normals, uniforms, orders, frozen, 0.1)
        want, acc_ref = oracles.reference_sweeps(pts, th, 0.7, normals, uniforms, orders,
                                                 frozen, 0.1)
        assert acc == acc_ref
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_huge_energy_barrier_rejects():
    pts = np.column_stack([np.linspace(-1, 1, 20), np.full(20, 0.5)])
    cfg = ModelConfig(K=1, delta=0.1)
    m = ProposalMoments.from_points(pts)
    th = Theta(1e6, 1e6, (0.0,))
    x = np.array([0.0, 0.0])
    assert acceptance_ratio(x, np.array([0.5, 0.5]), pts, th, cfg, m, m, index=10) == 0.0
    assert acceptance_ratio(np.array([0.5, 0.5]), x, pts, th, cfg, m, m, index=10) == 1.0


def test_sweep_deterministic():
    pts = _cloud(30, 2)
    cfg = ModelConfig(K=2, delta=0.5)
    th = Theta(1.0, 1.0, (0.3, -0.2))
    a, _ = sweep(pts, th, cfg, np.random.default_rng(5))
    b, _ = sweep(pts, th, cfg, np.random.default_rng(5))
    assert a == b


def test_half_gaussian_mean_long_run():
    th_V = 2.0
    pts = _cloud(30, 3)
    recs, _ = run_chain(pts, Theta(1.0, th_V, (0.0,)), ModelConfig(K=1, delta=0.2), 3000, seed=1,
                        options=ChainOptions(xbar="frozen"))
    series = recs[100:, :, 1].mean(axis=1)
    batches = series[:2900].reshape(20, -1).mean(axis=1)
    se = batches.std(ddof=1) / math.sqrt(20)
    assert abs(batches.mean() - 1 / math.sqrt(math.pi * th_V)) <= 3 * se


@pytest.fixture(scope="module")
def small_fit():
    pts = ProjectedDiagram(_cloud(25, 4))
    return pts, fit(pts, ModelConfig.for_diagram(pts, 2))


def test_replicate_shapes_and_support(small_fit):
    pts, fm = small_fit
    ens = replicate(pts, fm, Schedule(20, 5, 3, 4, seed=9))
    assert len(ens) == 12 == Schedule(20, 5, 3, 4).n
    assert all(len(r) == 25 for r in ens.replicates)
    assert np.all(ens.projected[..., 1] >= 0)
    assert 0 <= ens.acceptance_rate <= 1


def test_replicate_deterministic_and_worker_independent(small_fit):
    pts, fm = small_fit
    a = replicate(pts, fm, Schedule(20, 5, 3, 4, seed=9))
    b = replicate(pts, fm, Schedule(20, 5, 3, 4, seed=9), workers=3)
    assert np.array_equal(a.projected, b.projected)


def test_chain_blocks_depend_only_on_their_seed(small_fit):
    pts, fm = small_fit
    a = replicate(pts, fm, Schedule(20, 5, 3, 4, seed=9))
    b = replicate(pts, fm, Schedule(20, 5, 3, 2, seed=11))
    # chain c of schedule seed s uses stream s + c, so b's chains are a's chains 2 and 3
    assert np.array_equal(a.projected[6:], b.projected)


def test_ensemble_write(tmp_path, small_fit):
    from rstopo.replication import read_ensemble_diagrams
    pts, fm = small_fit
    ens = replicate(pts, fm, Schedule(20, 5, 2, 2, seed=1))
    ens.write(tmp_path)
    reps, meta = read_ensemble_diagrams(tmp_path)
    assert reps == ens.replicates and meta["n"] == 4
    assert sorted(p.name for p in tmp_path.glob("*.csv"))[0] == "replicate_0000_0000.csv"


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(0, 1, 1, 1)
    with pytest.raises(ValueError):
        ChainOptions(xbar="moving")


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 30), st.integers(0, 2 ** 31))
def test_point_count_and_support_preserved(n, seed):
    pts = _cloud(n, seed % 1000)
    out, _ = sweep(pts, Theta(1.0, 1.0, (0.5,)), ModelConfig(K=1, delta=0.5),
                   np.random.default_rng(seed))
    assert out.N == n and np.all(out.points[:, 1] >= 0)
