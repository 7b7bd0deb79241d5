import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_factors, symmetric_data
from multiplex_lsm.expfam import BERNOULLI, GAUSSIAN, POISSON
from multiplex_lsm.metrics import procrustes_distance2
from multiplex_lsm.netdata import LatentFactors, theta_from_factors
from multiplex_lsm.refine import (RefineConfig, fisher_block, fisher_blocks, full_fisher, grad_joint,
                                  joint_loglik, one_step_update, pack, pgd_refine, pseudo_loglik,
                                  pseudo_score, unpack)
from multiplex_lsm.simgen import GramDesign, derive_stream, generate_factors, generate_networks, row_bound
from multiplex_lsm.single import SingleFitConfig, fit_individual, single_loglik
from multiplex_lsm.hunt import hunt_shared

FAMS = [GAUSSIAN, BERNOULLI, POISSON]


def noisy_instance(rng, fam, n=6, k=1, dims=(1, 1), scale=0.5):
    f = random_factors(rng, n, k, list(dims), scale)
    return f, symmetric_data(rng, fam, theta_from_factors(f))


def fd_grad(func, v, h=1e-6):
    g = np.zeros_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (func(v + e) - func(v - e)) / (2 * h)
    return g


def test_joint_loglik_zero_bernoulli():
    f = LatentFactors(np.zeros((2, 1)), (np.zeros((2, 1)),) * 2)
    assert joint_loglik(f, np.zeros((2, 2, 2)), BERNOULLI) == pytest.approx(-6 * np.log(2))


@pytest.mark.parametrize("fam", FAMS, ids=str)
def test_joint_is_sum_of_single(fam, rng):
    f, A = noisy_instance(rng, fam, n=7, k=2, dims=(1, 0, 2))
    total = sum(single_loglik(f.Y(t), A[t], fam) for t in range(3))
    assert joint_loglik(f, A, fam) == pytest.approx(total, abs=1e-10)


def test_joint_brute_force(rng):
    f, A = noisy_instance(rng, POISSON, n=5, k=1, dims=(1, 2, 1))
    want = 0.0
    for t in range(3):
        for i in range(5):
            for j in range(i, 5):
                th = f.Z[i] @ f.Z[j] + f.W[t][i] @ f.W[t][j]
                want += A[t, i, j] * th - np.exp(th)
    assert joint_loglik(f, A, POISSON) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("fam", FAMS, ids=str)
def test_grad_joint_finite_differences(fam, rng):
    f, A = noisy_instance(rng, fam)
    gZ, gW = grad_joint(f, A, fam)
    g = pack(LatentFactors(gZ, tuple(gW)))
    fd = fd_grad(lambda v: joint_loglik(unpack(v, 6, 1, [1, 1]), A, fam), pack(f))
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-5


@pytest.mark.parametrize("fam", FAMS, ids=str)
def test_scores_vanish_at_noiseless_truth(fam, rng):
    f = random_factors(rng, 9, 2, [1, 2])
    A = fam.mean(theta_from_factors(f))
    gZ, gW = grad_joint(f, A, fam)
    assert max(np.abs(gZ).max(), *(np.abs(g).max() for g in gW)) < 1e-10
    assert np.abs(pseudo_score(f, f, A, fam)).max() < 1e-10


def test_identical_layers_additive(rng):
    f = random_factors(rng, 6, 1, [1])
    A1 = symmetric_data(rng, GAUSSIAN, theta_from_factors(f))
    f3 = LatentFactors(f.Z, (f.W[0],) * 3)
    gZ3, _ = grad_joint(f3, np.repeat(A1, 3, axis=0), GAUSSIAN)
    gZ1, _ = grad_joint(f, A1, GAUSSIAN)
    np.testing.assert_allclose(gZ3, 3 * gZ1, rtol=1e-12)


def test_pack_unpack_layout():
    f = LatentFactors(np.arange(4.0).reshape(2, 2), (np.array([[10.0], [11.0]]), np.zeros((2, 0))))
    v = pack(f)
    np.testing.assert_array_equal(v, [0, 1, 2, 3, 10, 11])
    g = unpack(v, 2, 2, [1, 0])
    np.testing.assert_array_equal(g.Z, f.Z)
    with pytest.raises(ValueError):
        unpack(v[:-1], 2, 2, [1, 0])


@pytest.mark.parametrize("fam", FAMS, ids=str)
def test_pseudo_score_finite_differences(fam, rng):
    f, A = noisy_instance(rng, fam)
    anchors = random_factors(rng, 6, 1, [1, 1])
    fd = fd_grad(lambda v: pseudo_loglik(unpack(v, 6, 1, [1, 1]), anchors, A, fam), pack(f))
    g = pseudo_score(f, anchors, A, fam)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-5


def test_pseudo_score_block_separable(rng):
    f, A = noisy_instance(rng, BERNOULLI, n=6, k=1, dims=(1, 1))
    base = pseudo_score(f, f, A, BERNOULLI)
    W1 = np.array(f.W[1])
    W1[3] += 0.3
    moved = pseudo_score(LatentFactors(f.Z, (f.W[0], W1)), f, A, BERNOULLI)
    changed = np.flatnonzero(np.abs(moved - base) > 0)
    # layout: z_0..z_5 | w_{0,0..5} | w_{1,0..5}; node 3 owns z_3 and w_{1,3}
    assert set(changed) <= {3, 6 + 6 + 3}


@pytest.mark.parametrize("fam", FAMS, ids=str)
def test_fisher_psd_and_consistent(fam, rng):
    f = random_factors(rng, 7, 2, [1, 2])
    anchors = random_factors(rng, 7, 2, [1, 2])
    blocks = fisher_blocks(f, anchors, fam)
    for i in range(7):
        np.testing.assert_allclose(blocks[i], fisher_block(i, f, anchors, fam), atol=1e-12)
        assert np.linalg.eigvalsh(blocks[i]).min() >= -1e-10


def test_fisher_gaussian_independent_of_f(rng):
    anchors = random_factors(rng, 6, 1, [1, 1])
    a = fisher_block(2, random_factors(rng, 6, 1, [1, 1]), anchors, GAUSSIAN)
    b = fisher_block(2, random_factors(rng, 6, 1, [1, 1]), anchors, GAUSSIAN)
    np.testing.assert_allclose(a, b, atol=1e-14)
    U = np.zeros((12, 3))
    U[:6, 0] = U[6:, 0] = anchors.Z[:, 0]
    U[:6, 1] = anchors.W[0][:, 0]
    U[6:, 2] = anchors.W[1][:, 0]
    np.testing.assert_allclose(a, U.T @ U, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(FAMS))
def test_pinv_moore_penrose(seed, fam):
    rng = np.random.default_rng(seed)
    f = random_factors(rng, 6, 1, [1, 1, 0])
    I = fisher_block(0, f, f, fam)
    p = I.shape[0]
    P = np.linalg.pinv(I, rcond=1e-10 * p, hermitian=True)
    for lhs, rhs in ((I @ P @ I, I), (P @ I @ P, P), ((I @ P).T, I @ P), ((P @ I).T, P @ I)):
        np.testing.assert_allclose(lhs, rhs, atol=1e-8 * max(1.0, np.abs(rhs).max()))


def test_pgd_stays_at_truth(rng):
    f = random_factors(rng, 12, 2, [1, 1])
    A = theta_from_factors(f)
    out = pgd_refine(f, A, GAUSSIAN, RefineConfig(M1=1.05 * f.max_row_norm()))
    assert procrustes_distance2(out.Z, f.Z) < 1e-6
    assert all(procrustes_distance2(a, b) < 1e-6 for a, b in zip(out.W, f.W))


@pytest.fixture(scope="module")
def case_a_hunt():
    n, T = 400, 10
    f = generate_factors(n, GramDesign("A", T=T, k=2), derive_stream(0, 0))
    A = generate_networks(f, GAUSSIAN, derive_stream(0, 1)).layers
    M1 = row_bound(f)
    Ys = [fit_individual(A[t], SingleFitConfig(d=4, M1=M1), GAUSSIAN) for t in range(T)]
    Z, W, _ = hunt_shared(Ys, 2, [2] * T)
    return f, A, M1, LatentFactors(Z, tuple(W))


def test_pgd_ascent_from_hunt(case_a_hunt):
    f, A, M1, init = case_a_hunt
    out, trace = pgd_refine(init, A, GAUSSIAN, RefineConfig(M1=M1, R=10), return_trace=True)
    assert np.all(np.diff(trace) > 0)
    assert out.max_row_norm() <= M1 + 1e-12


@pytest.mark.parametrize("bb", [True, False])
def test_pgd_monotone_and_projected(bb, rng):
    f = random_factors(rng, 20, 1, [1, 1])
    A = symmetric_data(rng, POISSON, theta_from_factors(f))
    init = random_factors(rng, 20, 1, [1, 1], scale=0.3)
    M1 = 0.8 * f.max_row_norm()
    out, trace = pgd_refine(init, A, POISSON, RefineConfig(M1=M1, R=200, bb_steps=bb), return_trace=True)
    assert np.all(np.diff(trace) >= -1e-8)
    assert trace[-1] >= trace[0] - 1e-8
    assert out.max_row_norm() <= M1 + 1e-12


def test_one_step_noiseless_fixed_point(rng):
    f = random_factors(rng, 10, 1, [1, 2])
    for fam in FAMS:
        out = one_step_update(f, f, fam.mean(theta_from_factors(f)), fam)
        np.testing.assert_allclose(pack(out), pack(f), atol=1e-10)


def test_one_step_zero_block_warns():
    f = LatentFactors(np.zeros((4, 1)), (np.zeros((4, 1)),))
    with pytest.warns(RuntimeWarning, match="zero information"):
        out = one_step_update(f, f, np.zeros((1, 4, 4)), GAUSSIAN)
    np.testing.assert_array_equal(out.Z, f.Z)


def test_one_step_gaussian_is_node_regression(rng):
    # for the Gaussian family one Newton step solves each node's least-squares problem
    f, A = noisy_instance(rng, GAUSSIAN, n=8, k=1, dims=(1, 1))
    anchors = random_factors(rng, 8, 1, [1, 1])
    out = one_step_update(f, anchors, A, GAUSSIAN)
    i = 5
    U = np.zeros((16, 3))
    U[:8, 0] = U[8:, 0] = anchors.Z[:, 0]
    U[:8, 1] = anchors.W[0][:, 0]
    U[8:, 2] = anchors.W[1][:, 0]
    beta = np.linalg.lstsq(U, np.concatenate([A[0, i], A[1, i]]), rcond=None)[0]
    np.testing.assert_allclose([out.Z[i, 0], out.W[0][i, 0], out.W[1][i, 0]], beta, atol=1e-10)


def test_full_likelihood_path(rng):
    f, A = noisy_instance(rng, BERNOULLI, n=6, k=2, dims=(1, 1))
    I = full_fisher(f, BERNOULLI)
    assert np.linalg.eigvalsh(I).min() > -1e-10
    # Z -> Z exp(sS) leaves every theta unchanged, so that direction is in the null space
    S = np.array([[0.0, 1.0], [-1.0, 0.0]])
    direction = pack(LatentFactors(f.Z @ S, (np.zeros((6, 1)),) * 2))
    assert np.linalg.norm(I @ direction) < 1e-10 * np.linalg.norm(I)
    out = one_step_update(f, f, A, BERNOULLI, RefineConfig(use_pseudo=False))
    assert np.all(np.isfinite(pack(out)))


def test_full_fisher_matches_score_outer_product():
    # Monte-Carlo free check: for Gaussian, I = J^T J where J is the Jacobian of theta
    rng = np.random.default_rng(5)
    f = random_factors(rng, 4, 1, [1])
    I = full_fisher(f, GAUSSIAN)
    v0 = pack(f)
    iu = np.triu_indices(4)

    def theta_vec(v):
        return theta_from_factors(unpack(v, 4, 1, [1]))[0][iu]

    J = np.stack([fd_grad(lambda v, m=m: theta_vec(v)[m], v0) for m in range(iu[0].size)])
    np.testing.assert_allclose(I, J.T @ J, atol=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(eta=0)
    with pytest.raises(ValueError):
        RefineConfig(R=0)
    with pytest.raises(ValueError):
        RefineConfig(pinv_rel_tol=1.5)
    with pytest.raises(ValueError):
        RefineConfig(anchors="truth")
