"""Acceptance criteria 1-9, one test each, at their stated tolerances."""

import math
import time

import numpy as np
import pytest

from presemi.cli import RunConfig, dumps, run_pipeline
from presemi.fixtures import NAMES, builtin
from presemi.geodesic import HypersurfaceSeed, identity_grid, shoot_congruence
from presemi.ode import OdeProblem, integrate
from presemi.rectify import (PicardConfig, VectorFieldGrid, contraction_ratios, first_integral_residuals,
                             picard_solve, pushforward_residual, rectify_flow)
from presemi.verify import (check_geodesic_correspondence, check_straight_geodesics, dof_report,
                            equiaffine_check, evaluate_transformed, route_agreement,
                            torsion_tensoriality_residual)

from conftest import default_grids, record_criterion, tilted_sphere_seed

# tau samples per fixture configuration. Second differences along tau carry
# an O(h^2) truncation error; noneq2 and the tilted sphere seed need a finer
# tau grid than the default 41 samples to bring it below 1e-4.
CASES = {name: dict(tau=(-0.5, 0.5, 41)) for name in NAMES}
CASES["noneq2"] = dict(tau=(-0.5, 0.5, 321))
CASES["sphere2-tilted"] = dict(tau=(-0.4, 0.4, 641))


def _setup(case):
    name = case.split("-")[0]
    conn = builtin(name).connection
    tau, labels = default_grids(conn, tau=CASES[case]["tau"])
    seed = tilted_sphere_seed(conn) if case.endswith("tilted") else HypersurfaceSeed.default(conn)
    return conn, seed, tau, labels


@pytest.fixture(scope="module")
def pipeline_outputs():
    """Every construction route on every fixture configuration."""
    out = {}
    for case in CASES:
        conn, seed, tau, labels = _setup(case)
        for route in ("shoot", "picard"):
            if route == "shoot":
                grid = shoot_congruence(conn, seed, tau, labels)
            else:
                grid = picard_solve(conn, PicardConfig.from_seed(seed, tau, labels))
            out[case, route] = (conn, grid, evaluate_transformed(conn, grid))
    return out


def test_criterion_1_sheared_flattening():
    fx = builtin("sheared2")
    conn = fx.connection
    tau, labels = default_grids(conn)
    seed = HypersurfaceSeed.default(conn, phi_value=0.0)
    shoot_congruence(conn, seed, tau, labels)  # JIT warm-up outside the timing
    t0 = time.perf_counter()
    grid = shoot_congruence(conn, seed, tau, labels)
    tc = evaluate_transformed(conn, grid)
    elapsed = time.perf_counter() - t0
    f, _, _ = fx.transform(grid.new_coords().reshape(-1, 2))
    oracle = float(np.max(np.abs(grid.f.reshape(-1, 2) - f)))
    ok = tc.stats["max"] < 1e-3 and tc.stats["mean"] < 1e-4 and oracle < 1e-6 and elapsed < 2.0
    record_criterion(1, ok, f"max {tc.stats['max']:.2e}, mean {tc.stats['mean']:.2e}, "
                            f"oracle {oracle:.2e}, {elapsed:.3f} s")
    assert ok


def test_criterion_2_already_presemigeodesic():
    worst = {}
    for name in ("polar2", "sphere2"):
        conn = builtin(name).connection
        _, labels = default_grids(conn)
        lo, hi = conn.lo[0] + 0.1 * conn.extent[0], conn.hi[0] - 0.1 * conn.extent[0]
        tc = evaluate_transformed(conn, identity_grid(2, np.linspace(lo, hi, 41), labels))
        worst[name] = tc.stats["max"]
    ok = all(v < 1e-10 for v in worst.values())
    record_criterion(2, ok, ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))
    assert ok


def test_criterion_3_route_agreement():
    conn, seed, tau, labels = _setup("sheared2")
    picard_solve(conn, PicardConfig.from_seed(seed, tau, labels))  # JIT warm-up outside the timing
    t0 = time.perf_counter()
    details, ok = [], True
    for case, span in (("sheared2", (-0.5, 0.5, 41)), ("sphere2-tilted", (-0.4, 0.4, 161))):
        conn, seed, _, labels = _setup(case)
        tau, _ = default_grids(conn, tau=span)
        a = shoot_congruence(conn, seed, tau, labels)
        b = picard_solve(conn, PicardConfig.from_seed(seed, tau, labels))
        agree = route_agreement(a, b)
        ratios = [r for s, r in contraction_ratios(b.history).items() if s >= 3]
        below = next((s for s, d in enumerate(b.history, start=1) if d < 1e-8), None)
        case_ok = agree < 1e-5 and all(r < 0.9 for r in ratios) and below is not None and below <= 25
        ok &= case_ok
        details.append(f"{case} agree {agree:.2e} max ratio {max(ratios, default=0):.2f} "
                       f"<1e-8 at it {below}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 5.0
    record_criterion(3, ok, "; ".join(details) + f"; {elapsed:.3f} s")
    assert ok


def test_criterion_4_characterization(pipeline_outputs):
    worst = 0.0
    checked = 0
    for (case, route), (conn, grid, tc) in pipeline_outputs.items():
        if tc.stats["max"] < 1e-3:
            worst = max(worst, check_straight_geodesics(tc))
            checked += 1
    conn = builtin("sheared2").connection
    _, labels = default_grids(conn)
    wrong = evaluate_transformed(conn, identity_grid(2, default_grids(conn)[0], labels))
    detect = check_straight_geodesics(wrong, tau_span=(-0.5, 0.5))
    ok = checked == len(pipeline_outputs) and worst < 1e-3 and detect >= 0.1
    record_criterion(4, ok, f"{checked} outputs, max deviation {worst:.2e}; identity on sheared2 "
                            f"deviates {detect:.3f}")
    assert ok


def test_criterion_5_geodesic_correspondence(pipeline_outputs):
    values = {key: check_geodesic_correspondence(conn, grid)
              for key, (conn, grid, _) in pipeline_outputs.items()}
    worst_key = max(values, key=values.get)
    ok = all(v < 1e-4 for v in values.values())
    failing = [f"{c}/{r}" for (c, r), v in values.items() if not v < 1e-4]
    record_criterion(5, ok, f"{len(values)} outputs, worst {worst_key[0]}/{worst_key[1]} "
                            f"{values[worst_key]:.2e}" + (f"; failing {failing}" if failing else ""))
    assert ok


def test_criterion_6_torsion_pipeline():
    result = run_pipeline(RunConfig("torsion2", route="both"))
    routes = result.report["routes"]
    g11 = max(r["checks"]["gamma11_max"]["value"] for r in routes.values())
    tors = max(r["checks"]["torsion_tensoriality"]["value"] for r in routes.values())
    ok = result.status == 0 and g11 < 1e-3 and tors < 1e-6
    record_criterion(6, ok, f"exit {result.status}, max |G'11| {g11:.2e}, torsion residual {tors:.2e}")
    assert ok


def test_criterion_7_rectification():
    field = VectorFieldGrid.from_expressions(2, ["1", "x1"], [-1, -1], [1, 1], base_point=[0, 0])
    tau, labels = default_grids(builtin("flat2").connection)
    grid = rectify_flow(field, None, tau, labels)
    X = grid.new_coords()
    closed = np.stack([X[..., 0], X[..., 1] + X[..., 0] ** 2 / 2], axis=-1)
    flow_err = float(np.max(np.abs(grid.f - closed)))
    push = pushforward_residual(grid, field)
    res = first_integral_residuals(grid, field)
    ok = flow_err < 1e-9 and push < 1e-5 and res.max_r0 < 1e-5 and res.max_r1 < 1e-5
    record_criterion(7, ok, f"flow {flow_err:.2e}, pushforward {push:.2e}, r0 {res.max_r0:.2e}, "
                            f"r1 {res.max_r1:.2e}")
    assert ok


def test_criterion_8_structure_reports():
    dof_ok = all(
        dof_report(n).presemigeodesic_general == n * (n * n - 1)
        and dof_report(n).presemigeodesic_torsion_free == n * (n - 1) ** 2 // 2
        and dof_report(n).torsion_free_count == n * n * (n + 1) // 2
        and dof_report(n).equiaffine_reduction == n - 1
        for n in range(2, 7))
    flags = {name: equiaffine_check(builtin(name).connection) for name in ("flat2", "polar2", "sphere2", "noneq2")}
    eq_ok = all(flags[n][0] for n in ("flat2", "polar2", "sphere2"))
    neq_ok = not flags["noneq2"][0] and abs(flags["noneq2"][1] - 1.0) < 1e-6
    ok = dof_ok and eq_ok and neq_ok
    record_criterion(8, ok, f"dof n=2..6 {'exact' if dof_ok else 'WRONG'}; equiaffine "
                            + ", ".join(f"{k} {v[0]}" for k, v in flags.items())
                            + f"; noneq2 residual {flags['noneq2'][1]:.9f}")
    assert ok


def test_criterion_9_order_and_determinism(tmp_path):
    errs = [abs(integrate(OdeProblem(lambda t, y: y, 0.0, [1.0], 1.0, h), estimate_error=False).final[0]
                - math.e) for h in (0.1, 0.05)]
    ratio = errs[0] / errs[1]
    cfg = dict(route="both", seed='{"phi": "0.7853981633974483", "Lambda": ["cos(0.3)", "sin(0.3)"]}',
               tau_span=(-0.4, 0.4), tau_count=81)
    texts = []
    for k in range(2):
        out = tmp_path / str(k)
        run_pipeline(RunConfig("sphere2", out=str(out), **cfg))
        texts.append((out / "report.json").read_bytes())
    same = texts[0] == texts[1]
    direct = dumps(run_pipeline(RunConfig("sheared2", route="both")).report) == \
        dumps(run_pipeline(RunConfig("sheared2", route="both")).report)
    ok = 12 <= ratio <= 20 and same and direct
    record_criterion(9, ok, f"RK4 halving ratio {ratio:.2f}; reports byte-identical {same and direct}")
    assert ok
