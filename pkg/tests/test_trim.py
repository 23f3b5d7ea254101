import numpy as np
import pytest

from otrobust.f16 import DEG, saturate, ControlInput
from otrobust.trim import TrimPoint, default_grid, find_trim, trim_grid, _residual


def test_nominal_trim_matches_reference(nominal_trim):
    tp = nominal_trim
    assert tp.converged
    assert tp.x_trim.theta / DEG == pytest.approx(2.8190, abs=0.3)
    assert tp.u_trim.delta_e / DEG == pytest.approx(-2.9737, abs=0.5)
    assert tp.u_trim.T == pytest.approx(1000.0, rel=0.05)
    assert tp.optimality < 1e-8


def test_trim_q_is_zero(nominal_trim):
    assert nominal_trim.x_trim.q == 0.0


def test_residual_definition(params, tables, nominal_trim):
    z = np.array([nominal_trim.x_trim.theta, nominal_trim.u_trim.T,
                  nominal_trim.u_trim.delta_e])
    r = _residual(z, nominal_trim.x_trim.V, nominal_trim.x_trim.alpha, params, tables)
    assert np.linalg.norm(r) == pytest.approx(nominal_trim.residual, rel=1e-12)


def test_residual_not_worse_than_initial_guess(params, tables):
    V, alpha = 600.0, 10.0 * DEG
    z0 = np.array([alpha, 5000.0, 0.0])
    r0 = float(np.linalg.norm(_residual(z0, V, alpha, params, tables)))
    tp = find_trim(V, alpha, params, tables)
    assert tp.residual <= r0 * (1 + 1e-12)


def test_bound_feasibility(grid_trims):
    for tp in grid_trims:
        assert saturate(tp.u_trim) == tp.u_trim


def test_determinism(params, tables):
    a = find_trim(300.0, 5.0 * DEG, params, tables)
    b = find_trim(300.0, 5.0 * DEG, params, tables)
    assert a == b


def test_invalid_condition_rejected(params, tables):
    with pytest.raises(ValueError):
        find_trim(-10.0, 0.0, params, tables)
    with pytest.raises(ValueError):
        find_trim(float("nan"), 0.0, params, tables)


def test_default_grid_is_100_nodes():
    grid = default_grid()
    assert len(grid) == 100
    vs = sorted({v for v, _ in grid})
    als = sorted({a for _, a in grid})
    assert vs[0] == 100.0 and vs[-1] == 1000.0
    assert als[0] == pytest.approx(-10 * DEG) and als[-1] == pytest.approx(45 * DEG)


def test_grid_order_preserved_and_full(grid_trims):
    grid = default_grid()
    assert len(grid_trims) == 100
    for (V, alpha), tp in zip(grid, grid_trims):
        assert tp.x_trim.V == V
        assert tp.x_trim.alpha == alpha


def test_all_grid_nodes_converged(grid_trims):
    # every node reaches a constrained stationary point; with the attitude
    # bound in force, much of this envelope has no exact equilibrium and
    # the leftover residuals span several orders of magnitude
    assert all(tp.converged for tp in grid_trims)
    res = np.array([tp.residual for tp in grid_trims])
    assert np.all(np.isfinite(res))
    assert res.min() < 1e-2
    assert res.max() > 0.1
    assert res.max() < 10.0


def test_singleton_batch_matches_find_trim(params, tables):
    node = (407.8942, 6.1650 * DEG)
    batch = trim_grid([node], params, tables)
    single = find_trim(*node, params, tables)
    assert batch == [single]


def test_empty_grid_rejected(params, tables):
    with pytest.raises(ValueError):
        trim_grid([], params, tables)


def test_corner_node_converges_or_flags(params, tables):
    tp = find_trim(100.0, 45.0 * DEG, params, tables)
    assert isinstance(tp.converged, bool)
    assert np.isfinite(tp.residual)


def test_trim_point_json_roundtrip(nominal_trim):
    again = TrimPoint.from_dict(nominal_trim.to_dict())
    assert again.x_trim.theta == pytest.approx(nominal_trim.x_trim.theta, rel=1e-15)
    assert again.u_trim.T == nominal_trim.u_trim.T
    assert again.converged == nominal_trim.converged
