import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracle import _g
from scarpy.basis import (ComponentFit, DegenerateCoordinateError, basis_eval, build_bases,
                          check_shape, component_eval, linear_first_order, parse_shapes)

LABELS = range(2, 10)


def test_basis_examples():
    assert basis_eval(2, 0.5, 0.7) == 1.0
    # hand evaluation: (1 - (-1)) * 1 + (-1) * 1
    assert basis_eval(4, -1.0, 1.0) == 1.0
    for label in LABELS:
        assert basis_eval(label, 0.3, 0.0) == 0.0


@settings(max_examples=300, deadline=None)
@given(label=st.sampled_from(list(LABELS)), t=st.floats(-10, 10), x=st.floats(-10, 10))
def test_basis_matches_reference_and_vanishes_at_origin(label, t, x):
    assert basis_eval(label, t, 0.0) == 0.0
    assert basis_eval(label, t, x) == pytest.approx(float(_g(label, t, x)), abs=1e-12)


def test_build_bases_sorts_and_merges():
    X = np.array([[3.0, 0.0, 5.0], [1.0, 1.0, 6.0], [2.0, 0.0, 7.0], [1.0, 1.0, 8.0]])
    b = build_bases(X, (2, 4, 1))
    np.testing.assert_array_equal(b[0].knots, [1, 2, 3])
    np.testing.assert_array_equal(b[0].ranks, [2, 0, 1, 0])
    np.testing.assert_array_equal(b[1].knots, [0, 1])
    assert b[2].knots.size == 0


def test_build_bases_all_linear():
    X = np.random.default_rng(0).normal(size=(5, 3))
    assert all(b.knots.size == 0 for b in build_bases(X, (1, 1, 1)))


def test_build_bases_degenerate_coordinate():
    X = np.array([[1.0, 2.0], [1.0, 3.0]])
    with pytest.raises(DegenerateCoordinateError):
        build_bases(X, (2, 2))
    build_bases(X, (1, 2))  # constant linear column is allowed


def test_parse_shapes_aliases():
    assert parse_shapes("lin,in,de,cvx,cvxin,cvxde,ccv,ccvin,ccvde") == tuple(range(1, 10))
    assert parse_shapes("4, 7") == (4, 7)
    with pytest.raises(ValueError):
        parse_shapes("wiggly")
    with pytest.raises(ValueError):
        parse_shapes([0])


def test_linear_first_order():
    assert linear_first_order((4, 1, 2, 1)) == [1, 3, 0, 2]


def test_component_eval_examples():
    empty = ComponentFit(2, np.array([0.1, 0.5]), np.zeros(2))
    assert component_eval(empty, 3.0) == 0.0
    step = ComponentFit(2, np.array([0.5]), np.array([2.0]))
    assert component_eval(step, 1.0) == 2.0
    lin = ComponentFit(1, np.empty(0), np.array([1.5]))
    assert component_eval(lin, 2.0) == 3.0


def _random_cone_fit(label, rng, k=8):
    knots = np.sort(rng.uniform(-1, 1, k))
    w = rng.exponential(size=k) * (rng.random(k) < 0.6)
    if label in (4, 7):
        w[0] = rng.normal() * 3
    return ComponentFit(label, knots, w)


@pytest.mark.parametrize("label", LABELS)
def test_cone_members_pass_check_shape(label):
    rng = np.random.default_rng(label)
    for _ in range(20):
        fit = _random_cone_fit(label, rng)
        span = fit.knots[-1] - fit.knots[0]
        grid = np.linspace(fit.knots[0] - span / 2, fit.knots[-1] + span / 2, 1000)
        assert check_shape(fit, grid)
        assert component_eval(fit, 0.0) == 0.0


def test_check_shape_rejects_violations():
    grid = np.linspace(-1, 1, 101)
    bad_step = ComponentFit(2, np.array([-0.5, 0.5]), np.array([1.0, -2.0]))
    assert not check_shape(bad_step, grid)
    bad_convex = ComponentFit(4, np.array([-0.5, 0.0, 0.5]), np.array([0.0, -1.0, 0.0]))
    assert not check_shape(bad_convex, grid)
    convex = ComponentFit(4, np.array([-0.5, 0.0, 0.5]), np.array([-1.0, 1.0, 2.0]))
    v = component_eval(convex, grid)
    assert np.all(np.diff(v, 2) >= -1e-10)
    assert check_shape(convex, grid)
    assert check_shape(ComponentFit(1, np.empty(0), np.array([2.0])), grid)


@pytest.mark.parametrize("label", range(4, 10))
def test_hinge_components_are_piecewise_linear_between_knots(label):
    rng = np.random.default_rng(10 + label)
    fit = _random_cone_fit(label, rng)
    a, b = fit.knots[:-1], fit.knots[1:]
    mid = component_eval(fit, 0.5 * (a + b))
    avg = 0.5 * (component_eval(fit, a) + component_eval(fit, b))
    np.testing.assert_allclose(mid, avg, atol=1e-12)
