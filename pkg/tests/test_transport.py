import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxot import autodiff as ad
from ctxot.autodiff import DimensionError, Tensor
from ctxot.transport import (
    CapacityError,
    CostMatrix,
    FeatureSet,
    contextual_cost,
    contextual_value,
    cost_matrix,
    emd_exact,
    rem_distance,
)
from oracles import central_difference, emd_by_loops, emd_by_lp, rel_error, tape_gradient, unit_rows


def fs(rows):
    return FeatureSet.from_raw(np.asarray(rows, dtype=np.float64))


def test_exp_cost_closed_forms():
    same = cost_matrix(fs([[1, 0]]), fs([[1, 0]]), "exp", 0.5).values
    assert same[0, 0] == 1.0
    orth = cost_matrix(fs([[1, 0]]), fs([[0, 1]]), "exp", 0.5).values
    assert orth[0, 0] == pytest.approx(np.exp(4.0), rel=1e-10)
    c60 = cost_matrix(fs([[1, 0]]), fs([[0.5, np.sqrt(3) / 2]]), "exp", 0.5).values
    assert c60[0, 0] == pytest.approx(np.exp(2.0), rel=1e-10)


def test_cost_matrix_errors():
    with pytest.raises(DimensionError):
        cost_matrix(fs([[1, 0], [0, 1]]), fs([[1, 0]]))
    with pytest.raises(DimensionError):
        cost_matrix(fs([[1, 0]]), fs([[1, 0, 0]]))
    with pytest.raises(ValueError):
        cost_matrix(fs([[1, 0]]), fs([[1, 0]]), "exp", 0.0)
    with pytest.raises(ValueError):
        cost_matrix(fs([[1, 0]]), fs([[1, 0]]), "cosine")
    with pytest.raises(ValueError):
        CostMatrix(np.array([[-1.0]]))


def test_emd_worked_examples():
    value, plan = emd_exact(np.array([[0, 1, 4], [1, 0, 1], [4, 1, 0]], dtype=float))
    assert value == 0.0 and plan.permutation == (0, 1, 2)
    value, plan = emd_exact(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert value == 1.0 and plan.permutation == (1, 0)
    assert plan.marginal_error() < 1e-12


def test_emd_ties_pick_smallest_permutation():
    _, plan = emd_exact(np.ones((3, 3)))
    assert plan.permutation == (0, 1, 2)


def test_emd_capacity():
    with pytest.raises(CapacityError):
        emd_exact(np.zeros((9, 9)))


def test_emd_matches_loop_oracle_on_random_4x4():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        c = rng.uniform(0, 10, size=(4, 4))
        assert emd_exact(c)[0] == pytest.approx(emd_by_loops(c), abs=1e-12)


@pytest.mark.parametrize("n", [2, 3, 5, 7])
def test_emd_matches_linear_program(n):
    rng = np.random.default_rng(n)
    for _ in range(10):
        c = rng.uniform(0, 5, size=(n, n))
        assert emd_exact(c)[0] == pytest.approx(emd_by_lp(c), abs=1e-8)


def test_rem_worked_examples():
    assert rem_distance(np.array([[2.0, 1.0], [1.0, 2.0]])) == 1.0
    assert rem_distance(np.array([[0.0, 3.0], [2.0, 0.0]])) == 0.0
    assert rem_distance(np.array([[5.0, 3.0], [5.0, 3.0]])) == 4.0
    with pytest.raises(DimensionError):
        rem_distance(np.zeros((2, 3)))


def test_rem_equals_emd_for_single_point():
    c = np.array([[3.7]])
    assert rem_distance(c) == emd_exact(c)[0]


def test_contextual_small_examples():
    e = fs([[1, 0], [0, 1]])
    assert contextual_cost(e, e, 0.5).item() == 1.0
    with pytest.raises(DimensionError):
        contextual_cost(e, fs([[1, 0, 0], [0, 1, 0]]))


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 6),
    st.integers(1, 8),
    st.integers(0, 2**32 - 1),
    st.sampled_from(["sqeuclid", "exp"]),
    st.sampled_from([0.1, 0.5, 2.0]),
)
def test_lower_bound_chain(n, d, seed, kind, h):
    rng = np.random.default_rng(seed)
    a, b = fs(unit_rows(rng, n, d)), fs(unit_rows(rng, n, d))
    c = cost_matrix(a, b, kind, h)
    ctx, rem, emd = contextual_value(c), rem_distance(c), emd_exact(c)[0]
    assert ctx <= rem <= emd
    if kind == "exp":
        assert contextual_cost(a, b, h).item() == pytest.approx(ctx, rel=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1), st.sampled_from([0.1, 0.5, 2.0]))
def test_contextual_floor_is_one(n, d, seed, h):
    y = fs(unit_rows(np.random.default_rng(seed), n, d))
    assert contextual_cost(y, y, h).item() == 1.0
    assert rem_distance(cost_matrix(y, y, "sqeuclid")) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_permutation_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0, 3, size=(n, n))
    p, q = rng.permutation(n), rng.permutation(n)
    shuffled = c[p][:, q]
    assert emd_exact(shuffled)[0] == pytest.approx(emd_exact(c)[0], abs=1e-12)
    assert rem_distance(shuffled) == pytest.approx(rem_distance(c), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(2, 6), st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_scale_invariance(n, d, seed, scale):
    rng = np.random.default_rng(seed)
    ra, rb = rng.standard_normal((n, d)), rng.standard_normal((n, d))
    for kind in ("sqeuclid", "exp"):
        c1 = cost_matrix(fs(ra), fs(rb), kind).values
        c2 = cost_matrix(fs(scale * ra), fs(scale * rb), kind).values
        # only the 1e-12 zero guard in the normalisation separates the two;
        # its effect grows as the raw norms shrink towards it
        np.testing.assert_allclose(c1, c2, rtol=1e-7, atol=1e-12)


def test_feature_set_invariants():
    with pytest.raises(ValueError):
        FeatureSet(Tensor(np.array([[3.0, 4.0]])))
    with pytest.raises(DimensionError):
        FeatureSet.from_raw(np.zeros((0, 3)))
    z = FeatureSet.from_raw(np.zeros((2, 3)))
    assert np.all(np.isfinite(z.array))


def test_plan_marginals():
    rng = np.random.default_rng(3)
    _, plan = emd_exact(rng.uniform(size=(6, 6)))
    f = plan.flows
    assert np.allclose(f.sum(0), 1 / 6, atol=1e-9) and np.allclose(f.sum(1), 1 / 6, atol=1e-9)
    assert set(np.unique(f)) <= {0.0, 1 / 6}


def test_contextual_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    y = unit_rows(rng, 3, 3)
    x0 = rng.standard_normal((3, 3))

    def loss(x):
        norms = ad.sqrt(ad.sum(ad.square(x), axis=1, keepdims=True))
        fx = ad.div(x, ad.broadcast_to(norms, (3, 3)))
        return contextual_cost(FeatureSet(Tensor(y)), FeatureSet(fx, tol=None), 0.5)

    err = rel_error(tape_gradient(loss, [x0], 0), central_difference(loss, [x0], 0))
    assert err < 1e-4


def test_contextual_gradient_reaches_only_argmins():
    y = np.eye(3)
    x = Tensor(np.eye(3)[[0, 1, 2]] * 0.9 + 0.1 / np.sqrt(3), requires_grad=True)
    cost = ad.mean(ad.min_over_axis(ad.exp(ad.div(ad.pairwise_sqdist(Tensor(y), x), 0.5)), 0))
    (g,) = ad.grad(cost, [x])
    assert np.all(np.isfinite(g.data))


def test_exhaustive_permutation_count_small():
    # enumeration covers every vertex of the assignment polytope
    c = np.arange(9.0).reshape(3, 3) ** 2
    values = sorted(np.mean([c[i, p[i]] for i in range(3)]) for p in itertools.permutations(range(3)))
    assert emd_exact(c)[0] == values[0]
