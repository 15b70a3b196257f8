import numpy as np
import pytest

from presemi.errors import ConstructionError, ConvergenceError, InversionError
from presemi.fixtures import NAMES, builtin
from presemi.geodesic import (HypersurfaceSeed, identity_grid, label_axes, shoot_congruence,
                              uniform_tau)
from presemi.rectify import (GridInterpolator, PicardConfig, VectorFieldGrid, contraction_ratios,
                             first_integral_residuals, invert_transform, picard_solve,
                             pushforward_residual, rectify_flow)
from presemi.verify import route_agreement

from conftest import default_grids, tilted_sphere_seed

BOX = ([-1.0, -1.0], [1.0, 1.0])
TAU = uniform_tau(-0.5, 0.5, 41)
LABELS = label_axes([-0.8], [0.8], 21)


@pytest.fixture(scope="module")
def quadratic_flow():
    field = VectorFieldGrid.from_expressions(2, ["1", "x1"], *BOX, base_point=[0.0, 0.0])
    return field, rectify_flow(field, None, TAU, LABELS)


def test_flow_constant_field_is_identity():
    field = VectorFieldGrid.from_expressions(2, ["1", "0"], *BOX)
    g = rectify_flow(field, None, TAU, LABELS)
    np.testing.assert_allclose(g.f, g.new_coords(), atol=1e-14)


def test_flow_closed_form(quadratic_flow):
    _, g = quadratic_flow
    X = g.new_coords()
    expected = np.stack([X[..., 0], X[..., 1] + X[..., 0] ** 2 / 2], axis=-1)
    assert np.max(np.abs(g.f - expected)) < 1e-9
    assert g.route == "flow"


def test_flow_straightening(quadratic_flow):
    field, g = quadratic_flow
    assert pushforward_residual(g, field) < 1e-5


def test_flow_first_integrals(quadratic_flow):
    field, g = quadratic_flow
    res = first_integral_residuals(g, field)
    assert res.failures == 0 and len(res.points) > 50
    assert res.max_r0 < 1e-5 and res.max_r1 < 1e-5


def test_flow_errors():
    with pytest.raises(ConstructionError, match="base point"):
        VectorFieldGrid.from_expressions(2, ["x1", "x2"], *BOX, base_point=[0.0, 0.0])
    field = VectorFieldGrid.from_expressions(2, ["x2", "0"], *BOX)
    with pytest.raises(ConstructionError, match="vanishes"):
        rectify_flow(field, None, TAU, LABELS)
    # field tangent to the initial hypersurface x1 = 0
    field = VectorFieldGrid.from_expressions(2, ["0", "1"], *BOX)
    with pytest.raises(ConstructionError, match="singular"):
        rectify_flow(field, None, TAU, LABELS)


def test_first_integrals_identity():
    g = identity_grid(2, TAU, LABELS)
    field = VectorFieldGrid.from_expressions(2, ["1", "0"], *BOX)
    res = first_integral_residuals(g, field)
    # zero up to rounding in the difference quotient
    assert res.max_r0 < 1e-12 and res.max_r1 < 1e-12


def test_first_integrals_geodesic_congruence(sheared):
    conn = sheared.connection
    tau, labels = default_grids(conn)
    g = shoot_congruence(conn, HypersurfaceSeed.default(conn, phi_value=0.0), tau, labels)
    velocity = VectorFieldGrid.from_expressions(2, ["1", "-x1"], *BOX)
    res = first_integral_residuals(g, velocity)
    assert res.max_r0 < 1e-5 and res.max_r1 < 1e-5


# ---------------------------------------------------------------- picard

def test_picard_flat_exact_at_second_iterate():
    conn = builtin("flat2").connection
    g = picard_solve(conn, PicardConfig.default(2, TAU, LABELS))
    np.testing.assert_allclose(g.f, g.new_coords(), atol=1e-15)
    assert g.history[2] == 0.0 and len(g.history) == 3


def test_picard_sheared_matches_shoot(sheared):
    conn = sheared.connection
    tau, labels = default_grids(conn)
    seed = HypersurfaceSeed.default(conn, phi_value=0.0)
    g = picard_solve(conn, PicardConfig.from_seed(seed, tau, labels))
    assert route_agreement(g, shoot_congruence(conn, seed, tau, labels)) < 1e-6
    X = g.new_coords()
    f, _, _ = sheared.transform(X.reshape(-1, 2))
    assert np.max(np.abs(g.f.reshape(-1, 2) - f)) < 1e-12


def test_picard_tilted_sphere(sphere):
    conn = sphere.connection
    tau, labels = default_grids(conn, tau=(-0.4, 0.4, 161))
    seed = tilted_sphere_seed(conn)
    g = picard_solve(conn, PicardConfig.from_seed(seed, tau, labels))
    assert route_agreement(g, shoot_congruence(conn, seed, tau, labels)) < 1e-5
    ratios = contraction_ratios(g.history)
    assert all(r < 0.5 for s, r in ratios.items() if s > 3)


@pytest.mark.parametrize("name", NAMES)
def test_picard_contraction_every_fixture(name):
    conn = builtin(name).connection
    tau, labels = default_grids(conn, count=11)
    g = picard_solve(conn, PicardConfig.from_seed(HypersurfaceSeed.default(conn), tau, labels))
    ratios = contraction_ratios(g.history)
    assert all(r < 0.9 for s, r in ratios.items() if s >= 3)
    assert g.history[-1] < 1e-12


def test_picard_nonconvergence_reports_history():
    conn = builtin("noneq2").connection
    tau, labels = default_grids(conn, count=11)
    cfg = PicardConfig.from_seed(HypersurfaceSeed.default(conn), tau, labels, max_iterations=4)
    with pytest.raises(ConvergenceError) as info:
        picard_solve(conn, cfg)
    assert len(info.value.history) == 4


def test_picard_singular_initial_data():
    conn = builtin("flat2").connection
    e2 = lambda Xt: np.broadcast_to([0.0, 1.0], (len(Xt), 2)).copy()  # noqa: E731
    cfg = PicardConfig.default(2, TAU, LABELS)
    with pytest.raises(ConstructionError, match="singular"):
        picard_solve(conn, PicardConfig(cfg.phi0, e2, TAU, LABELS))


# ------------------------------------------------------------- inversion

def test_invert_identity():
    g = identity_grid(2, TAU, LABELS)
    np.testing.assert_allclose(invert_transform(g, [0.3, 0.4]), [0.3, 0.4], atol=1e-12)


def test_invert_sheared(sheared):
    conn = sheared.connection
    tau, labels = default_grids(conn)
    g = shoot_congruence(conn, HypersurfaceSeed.default(conn, phi_value=0.0), tau, labels)
    np.testing.assert_allclose(invert_transform(g, [0.4, 0.12]), [0.4, 0.2], atol=1e-6)
    with pytest.raises(InversionError, match="outside"):
        invert_transform(g, [0.9, 0.99])
    with pytest.raises(InversionError):
        invert_transform(g, [5.0, 5.0])


def test_inversion_round_trip(sphere):
    conn = sphere.connection
    tau, labels = default_grids(conn, tau=(-0.4, 0.4, 81))
    g = shoot_congruence(conn, tilted_sphere_seed(conn), tau, labels)
    interp = GridInterpolator(g)
    nodes = np.argwhere(g.regular)
    rng = np.random.default_rng(3)
    pick = nodes[rng.choice(len(nodes), 100, replace=False)]
    coords = g.new_coords()
    for node in map(tuple, pick):
        xp = invert_transform(g, g.f[node], interpolator=interp)
        assert np.max(np.abs(xp - coords[node])) < 1e-8


def test_interpolator_between_nodes(sheared):
    conn = sheared.connection
    tau, labels = default_grids(conn)
    g = shoot_congruence(conn, HypersurfaceSeed.default(conn, phi_value=0.0), tau, labels)
    interp = GridInterpolator(g)
    xp = np.array([0.1234, 0.3456])
    f, jac = interp(xp)
    exact_f, exact_jac, _ = sheared.transform(xp[None])
    # Hermite along tau is exact for the quadratic tau-dependence
    np.testing.assert_allclose(f, exact_f[0], atol=1e-12)
    np.testing.assert_allclose(jac, exact_jac[0], atol=1e-3)
    with pytest.raises(InversionError):
        interp(np.array([0.0, 0.85]))
