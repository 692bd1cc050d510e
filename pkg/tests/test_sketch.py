import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newtonless.leverage import exact_leverage
from newtonless.problem import HessianSqrtView
from newtonless.rng import stream
from newtonless.sketch import (
    KINDS,
    SketchConfigError,
    SketchSpec,
    apply_sketch,
    build_sketch,
    count_madds,
    draw_sparsifier,
    scale_constant,
    sketched_hessian,
    theory_sparsity,
)


def sparsifier_values(t, p, s):
    """Independent entry formula: xi_i = sqrt(b_i / (s p_i))."""
    xi = np.zeros(len(p))
    for i in set(t):
        xi[i] = math.sqrt(list(t).count(i) / (s * p[i]))
    return xi


# ---------------------------------------------------------------- sparsifier

def test_deterministic_single_index():
    xi = draw_sparsifier([1.0, 0.0, 0.0], 1, stream(0)).dense()
    np.testing.assert_array_equal(xi, [1.0, 0.0, 0.0])


def test_two_point_enumeration():
    # the four equally likely index pairs give these vectors and frequencies
    p = [0.5, 0.5]
    oracle = {}
    for t in itertools.product(range(2), repeat=2):
        key = tuple(np.round(sparsifier_values(t, p, 2), 12))
        oracle[key] = oracle.get(key, 0) + 0.25
    assert oracle == {(round(math.sqrt(2), 12), 0.0): 0.25, (1.0, 1.0): 0.5,
                      (0.0, round(math.sqrt(2), 12)): 0.25}
    rng = stream(1)
    draws = 20000
    counts = dict.fromkeys(oracle, 0)
    for _ in range(draws):
        counts[tuple(np.round(draw_sparsifier(p, 2, rng).dense(), 12))] += 1
    for key, prob in oracle.items():
        se = math.sqrt(prob * (1 - prob) / draws)
        assert abs(counts[key] / draws - prob) <= 4 * se


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 16), st.integers(1, 40), st.integers(0, 2**31))
def test_sparsifier_structure(n, s, seed):
    rng = stream(seed)
    p = rng.dirichlet(np.ones(n))
    sp_ = draw_sparsifier(p, s, rng)
    assert sp_.indices.size == s
    assert sp_.counts.sum() == s
    assert np.count_nonzero(sp_.dense()) <= s
    np.testing.assert_allclose(sp_.dense(), sparsifier_values(sp_.indices, p, s), rtol=1e-14)


def test_zero_probability_never_sampled():
    rng = stream(2)
    for _ in range(200):
        assert draw_sparsifier([0.5, 0.0, 0.5], 3, rng).dense()[1] == 0.0


@pytest.mark.parametrize("p", [[0.5, 0.6], [-0.1, 1.1], [np.nan, 1.0], []])
def test_malformed_distribution_rejected(p):
    with pytest.raises(SketchConfigError):
        draw_sparsifier(p, 1)


def test_sparsity_must_be_positive():
    with pytest.raises(SketchConfigError):
        draw_sparsifier([1.0], 0)


@pytest.mark.parametrize("n, s, seed", [(16, 3, 0), (5, 1, 1), (12, 20, 2)])
def test_sparsifier_second_moment_identity(n, s, seed):
    rng = stream(seed)
    p = rng.dirichlet(np.full(n, 0.7))
    p = np.maximum(p, 0.01)
    p /= p.sum()
    draws = 100_000
    sq = np.zeros(n)
    sq2 = np.zeros(n)
    for _ in range(draws):
        sp_ = draw_sparsifier(p, s, rng)
        v = sp_.values**2
        sq[sp_.support] += v
        sq2[sp_.support] += v * v
    mean = sq / draws
    se = np.sqrt((sq2 / draws - mean**2) / draws)
    assert np.all(np.abs(mean - 1.0) <= 3 * se)


def test_vectorized_rows_second_moment_identity():
    # rows of a LESS operator are scaled sparsifiers with random signs
    n, s, m = 10, 4, 100_000
    p = stream(3).dirichlet(np.ones(n))
    S = build_sketch(SketchSpec("less", m, s=s, p=p, scaling="practical"), n, d=2, rng=stream(4))
    # S = xi-rows / sqrt(m), so column sums of S^2 and m S^4 are row means of xi^2, xi^4
    mean = np.asarray(S.sparse.power(2).sum(axis=0)).ravel()
    fourth = np.asarray(S.sparse.power(4).sum(axis=0)).ravel() * m
    se = np.sqrt((fourth - mean**2) / m)
    assert np.all(np.abs(mean - 1.0) <= 3 * se)


# ---------------------------------------------------------------- operators

def test_rrs_rows_and_values():
    n, m = 50, 10
    S = build_sketch(SketchSpec("rrs", m, scaling="practical"), n, rng=stream(5))
    D = S.to_dense()
    assert np.all(np.count_nonzero(D, axis=1) == 1)
    np.testing.assert_allclose(D[D != 0], math.sqrt(n / m))
    assert len(set(np.nonzero(D)[1])) == m


def test_less_uniform_magnitudes():
    n, m, s = 4096, 20, 8
    S = build_sketch(SketchSpec("less-uniform", m, s=s, scaling="practical"), n, rng=stream(6))
    vals = np.abs(S.sparse.data)
    b = vals**2 * m * s / n
    np.testing.assert_allclose(b, np.round(b), atol=1e-12)
    single = np.isclose(b, 1.0)
    assert single.mean() > 0.9
    np.testing.assert_allclose(vals[single], math.sqrt(n / (m * s)))
    assert np.all(np.diff(S.sparse.indptr) <= s)


def test_gaussian_unbiased_entry_variance():
    m, n, d = 40, 2000, 6
    S = build_sketch(SketchSpec("gaussian", m, scaling="unbiased"), n, d=d, rng=stream(7))
    assert S.scale == pytest.approx(1 / math.sqrt(m - d - 1))
    var = S.dense.var()
    assert var == pytest.approx(1 / (m - d - 1), rel=0.02)


def test_scale_constants():
    assert scale_constant("theory", 20, 4) == pytest.approx(0.25)
    assert scale_constant("unbiased", 20, 4) == pytest.approx(1 / math.sqrt(15))
    assert scale_constant("practical", 20, 4) == pytest.approx(1 / math.sqrt(20))
    with pytest.raises(SketchConfigError):
        scale_constant("theory", 4, 4)


def test_full_row_sampling_recovers_matrix():
    A = stream(8).standard_normal((32, 3))
    S = build_sketch(SketchSpec("rrs", 32, scaling="practical"), 32, rng=stream(9))
    np.testing.assert_array_equal(apply_sketch(S, A), A)
    H = sketched_hessian(HessianSqrtView(A, np.zeros((3, 3))),
                         SketchSpec("rrs", 32, scaling="practical"), rng=stream(9))
    np.testing.assert_allclose(H, A.T @ A, rtol=1e-13)


@pytest.mark.parametrize("kind", KINDS)
def test_apply_shape_and_dense_agreement(kind):
    n, d, m = 37, 3, 9
    A = stream(10).standard_normal((n, d))
    prof = exact_leverage(A)
    S = build_sketch(SketchSpec(kind, m, s=4), n, d=d, profile=prof, rng=stream(11))
    SA = apply_sketch(S, A)
    assert SA.shape == (m, d)
    np.testing.assert_allclose(SA, S.to_dense() @ A, atol=1e-12)
    with pytest.raises(ValueError):
        apply_sketch(S, np.ones((n + 1, d)))


def test_srht_full_size_is_orthogonal():
    S = build_sketch(SketchSpec("srht", 16, scaling="practical"), 16, rng=stream(12))
    D = S.to_dense()
    np.testing.assert_allclose(D.T @ D, np.eye(16), atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_expected_sketched_gram(kind):
    n, d, m, draws = 64, 4, 16, 5000
    A = stream(13).standard_normal((n, d))
    prof = exact_leverage(A)
    spec = SketchSpec(kind, m, s=2)
    acc = np.zeros((d, d))
    for k in range(draws):
        SA = apply_sketch(build_sketch(spec, n, d=d, profile=prof, rng=stream(14, k)), A)
        acc += SA.T @ SA
    target = m / (m - d) * (A.T @ A)
    assert np.linalg.norm(acc / draws - target) <= 0.02 * np.linalg.norm(target)


def test_zero_row_sketch_leaves_regularizer():
    A = stream(15).standard_normal((6, 3))
    A[0] = 0.0
    p = np.zeros(6)
    p[0] = 1.0
    H = sketched_hessian(HessianSqrtView(A, 0.3 * np.eye(3)), SketchSpec("less", 4, s=1, p=p),
                         rng=stream(16), d_eff=1.0)
    np.testing.assert_array_equal(H, 0.3 * np.eye(3))


def embedding_fraction(m, n=512, d=8, seeds=100):
    A = stream(17).standard_normal((n, d))
    evals, V = np.linalg.eigh(A.T @ A)
    W = (V / np.sqrt(evals)) @ V.T
    spec = SketchSpec("gaussian", m, scaling="practical")
    inside = 0
    for seed in range(seeds):
        H = sketched_hessian(HessianSqrtView(A, np.zeros((d, d))), spec, rng=stream(18, seed))
        ev = np.linalg.eigvalsh(W @ H @ W)
        inside += ev.min() >= 0.4 and ev.max() <= 1.9
    return inside / seeds


@pytest.mark.xfail(strict=True, reason="at m = 8d the Wishart edges (1 +- sqrt(1/8))^2 = "
                   "0.418, 1.83 sit on the band; an independent oracle gives ~86% at best")
def test_gaussian_subspace_embedding_at_8d():
    assert embedding_fraction(64) >= 0.99


def test_gaussian_subspace_embedding_at_16d():
    assert embedding_fraction(128) >= 0.99


def test_sketched_hessian_symmetric():
    A = stream(19).standard_normal((100, 5))
    H, S = sketched_hessian(HessianSqrtView(A, np.eye(5)), SketchSpec("less-uniform", 20, s=3),
                            rng=stream(20), return_operator=True)
    np.testing.assert_array_equal(H, H.T)
    assert S.m == 20


@pytest.mark.parametrize("kind", KINDS)
def test_reproducible_from_counters(kind):
    n, d = 40, 3
    prof = exact_leverage(stream(21).standard_normal((n, d)))
    spec = SketchSpec(kind, 8, s=3)
    a = build_sketch(spec, n, d=d, profile=prof, rng=stream(5, 2, 7)).to_dense()
    b = build_sketch(spec, n, d=d, profile=prof, rng=stream(5, 2, 7)).to_dense()
    c = build_sketch(spec, n, d=d, profile=prof, rng=stream(5, 2, 8)).to_dense()
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("kind", ["less", "less-uniform"])
@pytest.mark.parametrize("s", [1, 4, 16, 64])
def test_sparse_madd_bound(kind, s):
    n, d, m = 256, 8, 32
    A = stream(22).standard_normal((n, d))
    S = build_sketch(SketchSpec(kind, m, s=s), n, d=d, profile=exact_leverage(A), rng=stream(23))
    with count_madds() as counter:
        apply_sketch(S, A)
    assert counter.calls == 1
    assert counter.total <= m * s * d
    assert counter.total == S.nnz * d


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("c", [2.0, 0.5, -4.0])
def test_scale_equivariance_bit_exact(kind, c):
    n, d = 48, 3
    A = stream(24).standard_normal((n, d))
    S = build_sketch(SketchSpec(kind, 8, s=3), n, d=d, profile=exact_leverage(A), rng=stream(25))
    np.testing.assert_array_equal(apply_sketch(S, c * A), c * apply_sketch(S, A))


def test_scale_equivariance_general_scalar():
    A = stream(26).standard_normal((48, 3))
    S = build_sketch(SketchSpec("gaussian", 8), 48, d=3, rng=stream(27))
    np.testing.assert_allclose(apply_sketch(S, 0.37 * A), 0.37 * apply_sketch(S, A), rtol=1e-14)


def test_default_sparsities():
    A = stream(28).standard_normal((200, 6))
    prof = exact_leverage(A, 50.0)
    less = build_sketch(SketchSpec("less", 30), 200, d=6, profile=prof, rng=stream(29))
    assert less.s == round(prof.dEff)
    uni = build_sketch(SketchSpec("less-uniform", 30), 200, d=6, rng=stream(29))
    assert uni.s == 6
    assert theory_sparsity(prof, 200) == math.ceil(prof.coherence * prof.dEff)


def test_build_errors():
    prof = exact_leverage(np.eye(4))
    with pytest.raises(SketchConfigError):
        build_sketch(SketchSpec("gaussian", 4), 10, d=4)
    with pytest.raises(SketchConfigError):
        build_sketch(SketchSpec("less", 8), 10, d=2)
    with pytest.raises(SketchConfigError):
        build_sketch(SketchSpec("rrs-lev", 8), 10, d=2)
    with pytest.raises(SketchConfigError):
        build_sketch(SketchSpec("less", 8), 10, d=2, profile=prof)
    with pytest.raises(SketchConfigError):
        build_sketch(SketchSpec("less-uniform", 8, s=11), 10, d=2)
    with pytest.raises(SketchConfigError):
        SketchSpec("countsketch", 4)
    with pytest.raises(SketchConfigError):
        SketchSpec("gaussian", 0)
    with pytest.raises(SketchConfigError):
        SketchSpec("less", 4, s=0)
