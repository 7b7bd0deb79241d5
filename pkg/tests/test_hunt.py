import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_orthogonal
from multiplex_lsm.hunt import (ScreeningError, aggregate_F, default_tau1, hunt_shared, null_basis,
                                pair_shared_gram, screen_pairs, screening_ratio, sqrt_top_k)
from multiplex_lsm.metrics import procrustes_distance2
from multiplex_lsm.simgen import GramDesign, derive_stream, generate_factors, generate_networks, row_bound
from multiplex_lsm.single import SingleFitConfig, fit_individual

# frozen from a 4-seed calibration run (n=400, T=10, Gaussian, case A):
# ||F - ZZ^T||^2/n / log^2 n ranged 0.0123 .. 0.0141, stage error / log^2(nT) 0.098 .. 0.106
C_F = 0.02
C_HUNT = 0.15


def exact_Ys(f, rng=None):
    Ys = [f.Y(t) for t in range(f.T)]
    if rng is not None:
        Ys = [Y @ random_orthogonal(rng, Y.shape[1]) for Y in Ys]
    return Ys


@pytest.fixture(scope="module")
def case_a():
    return generate_factors(120, GramDesign("A", T=5, k=2), np.random.default_rng(0))


@pytest.fixture(scope="module")
def case_c():
    return generate_factors(120, GramDesign("C", T=7, k=2, T_o=4), np.random.default_rng(1))


def test_default_tau1():
    assert default_tau1(200) == pytest.approx(np.sqrt(2 * np.log(200)))


def test_screen_case_a_includes_all(case_a):
    S = screen_pairs(exact_Ys(case_a), 2, [2] * 5, default_tau1(120))
    assert len(S) == 10
    assert all(r >= 1 for r in S.ratios.values())


def test_screen_case_c_excludes_duplicated_block(case_c):
    S = screen_pairs(exact_Ys(case_c), 2, [2] * 7, default_tau1(120))
    for (t, s), r in S.ratios.items():
        if t >= 4 and s >= 4:
            assert r == np.inf and (t, s) not in S
        else:
            assert (t, s) in S
    assert "ratio" in S.table()


def test_identical_pair_raises(rng):
    Y = rng.standard_normal((30, 3))
    with pytest.raises(ScreeningError, match="no identifiable pair") as exc:
        hunt_shared([Y, Y.copy()], 1, [2, 2])
    assert exc.value.ratios[(0, 1)] == np.inf


def test_ratio_index_errors(rng):
    with pytest.raises(ValueError):
        screening_ratio(rng.standard_normal((3, 4)), 4)
    with pytest.raises(ValueError):
        screen_pairs([rng.standard_normal((5, 2))], 1, [1], 2.0)
    with pytest.raises(ValueError):
        screen_pairs([rng.standard_normal((5, 2))] * 2, 1, [1, 1], 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.0, 50.0), st.floats(0.0, 50.0))
def test_screening_monotone_in_tau1(seed, tau, extra):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((15, 1))
    Ys = [np.hstack([Z, rng.standard_normal((15, 1)) * rng.uniform(0.01, 1)]) for _ in range(4)]
    small = screen_pairs(Ys, 1, [1] * 4, tau)
    big = screen_pairs(Ys, 1, [1] * 4, tau + extra)
    assert set(small.pairs) <= set(big.pairs)


def test_null_basis_duplicated_block(rng):
    Y = rng.standard_normal((20, 3))
    V = null_basis(np.hstack([Y, Y]), 3)
    np.testing.assert_allclose(V.T @ V, np.eye(3), atol=1e-12)
    assert np.linalg.norm(np.hstack([Y, Y]) @ V, 2) < 1e-8


def test_null_basis_exact_pair(case_a):
    Yts = np.hstack([case_a.Y(0), case_a.Y(1) @ random_orthogonal(np.random.default_rng(2), 4)])
    V = null_basis(Yts, 2)
    assert np.linalg.norm(Yts @ V) <= 1e-8 * np.linalg.norm(Yts)


def test_null_basis_k0(rng):
    assert null_basis(rng.standard_normal((6, 3)), 0).shape == (3, 0)


def test_every_pair_is_exact(case_a, rng):
    Ys = exact_Ys(case_a, rng)
    ZZ = case_a.Z @ case_a.Z.T
    for t in range(5):
        for s in range(t + 1, 5):
            F = pair_shared_gram(Ys[t], Ys[s], 2)
            assert np.linalg.norm(F - ZZ) / np.linalg.norm(ZZ) < 1e-8


@pytest.mark.parametrize("pairs", [[(0, 1)], [(1, 3), (2, 4)], None])
def test_aggregate_exact_subsets(case_a, pairs):
    Ys = exact_Ys(case_a)
    S = screen_pairs(Ys, 2, [2] * 5, 10.0)
    if pairs is not None:
        S.pairs = pairs
    ZZ = case_a.Z @ case_a.Z.T
    assert np.linalg.norm(aggregate_F(Ys, S, 2) - ZZ) / np.linalg.norm(ZZ) < 1e-8


def test_aggregate_rotation_robust(case_a, rng):
    S = screen_pairs(exact_Ys(case_a), 2, [2] * 5, 10.0)
    F0 = aggregate_F(exact_Ys(case_a), S, 2)
    F1 = aggregate_F(exact_Ys(case_a, rng), S, 2)
    np.testing.assert_allclose(F1, F0, atol=1e-8)


def test_aggregate_empty_set_errors(case_a):
    S = screen_pairs(exact_Ys(case_a), 2, [2] * 5, 1.0)
    S.pairs = []
    with pytest.raises(ScreeningError):
        aggregate_F(exact_Ys(case_a), S, 2)


def test_sqrt_top_k_exact(case_a):
    X = sqrt_top_k(case_a.Z @ case_a.Z.T, 2)
    np.testing.assert_allclose(X @ X.T, case_a.Z @ case_a.Z.T, atol=1e-8)


def test_sqrt_top_k_clamps():
    np.testing.assert_array_equal(sqrt_top_k(-np.eye(4), 1), np.zeros((4, 1)))


def test_sqrt_top_k_diag():
    X = sqrt_top_k(np.diag([4.0, 1.0, 0.0]), 2)
    np.testing.assert_allclose(np.abs(X), [[2, 0], [0, 1], [0, 0]], atol=1e-12)
    # sign convention: first nonzero entry of each column positive
    np.testing.assert_allclose(X, [[2, 0], [0, 1], [0, 0]], atol=1e-12)


@pytest.mark.parametrize("case", ["A", "B", "C"])
def test_hunt_exact(case):
    f = generate_factors(150, GramDesign(case, T=6, k=2), np.random.default_rng(3))
    Z, W, S = hunt_shared(exact_Ys(f, np.random.default_rng(4)), 2, [2] * 6)
    assert len(S) >= 1
    assert procrustes_distance2(Z, f.Z) < 1e-6
    for a, b in zip(W, f.W):
        assert procrustes_distance2(a, b) < 1e-6


def test_hunt_gauge_invariance(case_c):
    base = hunt_shared(exact_Ys(case_c), 2, [2] * 7)
    for seed in range(5):
        Z, W, _ = hunt_shared(exact_Ys(case_c, np.random.default_rng(seed)), 2, [2] * 7)
        np.testing.assert_allclose(Z @ Z.T, base[0] @ base[0].T, atol=1e-8)
        for a, b in zip(W, base[1]):
            np.testing.assert_allclose(a @ a.T, b @ b.T, atol=1e-8)


def test_hunt_dimension_check(case_a):
    with pytest.raises(ValueError):
        hunt_shared(exact_Ys(case_a), 2, [1] * 5)


def test_hunt_noisy_calibrated_bounds():
    n, T = 400, 10
    f = generate_factors(n, GramDesign("A", T=T, k=2), derive_stream(0, 0))
    A = generate_networks(f, "gaussian", derive_stream(0, 1)).layers
    cfg = SingleFitConfig(d=4, M1=row_bound(f))
    Ys = [fit_individual(A[t], cfg, "gaussian") for t in range(T)]
    Z, W, S, F = hunt_shared(Ys, 2, [2] * T, return_F=True)
    assert np.sum((F - f.Z @ f.Z.T) ** 2) / n < C_F * np.log(n) ** 2
    err = procrustes_distance2(Z, f.Z) + max(procrustes_distance2(a, b) for a, b in zip(W, f.W))
    assert err < C_HUNT * np.log(n * T) ** 2
