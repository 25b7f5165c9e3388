"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (printed in the pytest terminal
summary) before asserting.  Criteria 7 and 9 are evaluated on the desk
strip runs stored in ``results/desk_strip``; set ``MORPHOFEM_DESK_RUN=1``
to recompute them (up to 15 min per fibre case on one core).  Criterion 8
needs production meshes and runs only with ``MORPHOFEM_FULL=1``.
"""

import json
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from morphofem import analysis as A
from morphofem import cli
from morphofem import config as cfgmod
from morphofem import fem
from morphofem import material as mat
from morphofem import tensors as T
from morphofem.mesh import FILM, SUBSTRATE, build_bilayer_box
from morphofem.solver import ContinuationConfig, PerturbationSpec, Problem, continuation_run, newton_solve
from morphofem.verification import random_states, rigid_body_pins
from oracles import fd_kirchhoff, fd_spatial_moduli, flat_layer_stretch, rel

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk_strip.json"
DESK_RESULTS = ROOT / "results" / "desk_strip"
EY = (0.0, 1.0, 0.0)
MU_FILM = 100.0


def base_materials(mu_fiber=100.0):
    return {
        FILM: mat.MaterialParams(100.0, 1e5, mu_fiber, EY),
        SUBSTRATE: mat.MaterialParams(1.0, 1e3),
    }


def tight():
    return ContinuationConfig(newton_rel_tol=1e-12, newton_abs_tol=1e-11)


# 1-2: constitutive ------------------------------------------------------------


def test_criterion_01_constitutive_fd(criterion):
    t0 = time.perf_counter()
    worst_s = worst_c = 0.0
    states = random_states(200, seed=2024)
    for params, spec, F in states:
        kin = mat.elastic_decompose(F, spec, params.n0)
        r = mat.evaluate(params, kin)
        worst_s = max(worst_s, rel(r.tau, fd_kirchhoff(F, params, spec.kind, spec.g)))

        def tau_of(G, params=params, spec=spec):
            return mat.evaluate(params, mat.elastic_decompose(G, spec, params.n0)).tau

        worst_c = max(worst_c, rel(r.c, fd_spatial_moduli(tau_of, F)))
    dt = time.perf_counter() - t0
    dets = [np.linalg.det(F @ np.linalg.inv(mat.make_growth_tensor(s))) for _, s, F in states]
    kinds = {s.kind for _, s, _ in states}
    ok = worst_s <= 1e-6 and worst_c <= 1e-4 and dt < 10 and min(dets) >= 0.3 - 1e-12 and max(dets) <= 2 + 1e-12
    ok = ok and kinds == {"planar", "isotropic"}
    criterion("PASS" if ok else "FAIL", f"200 states: stress {worst_s:.1e} (<=1e-6), moduli {worst_c:.1e} (<=1e-4), {dt:.1f} s")
    assert ok


def test_criterion_02_configuration_equivalence(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for params, spec, F in random_states(200, seed=2024):
        kin = mat.elastic_decompose(F, spec, params.n0)
        e = mat.evaluate(params, kin)
        S_parts, C_parts = mat.evaluate_lagrangian(params, kin)
        S, C = mat.total_pullback(kin, sum(S_parts), sum(C_parts))
        worst = max(worst, rel(T.push_forward_stress(S, F), e.tau), rel(T.push_forward_moduli(C, F), e.c))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 10
    criterion("PASS" if ok else "FAIL", f"max relative mismatch {worst:.1e} (<=1e-10), {dt:.1f} s")
    assert ok


# 3-6: discretization ---------------------------------------------------------


def test_criterion_03_free_growth_patch(criterion):
    t0 = time.perf_counter()
    mesh = build_bilayer_box(1.0, 1.0, 1.0, 0.5, 2, 2, 1, 1)  # 2 x 2 x 2 boxes
    prob = Problem(mesh, base_materials(2500.0), periodic_axes=(), fixed_facets=(), pinned=rigid_body_pins(mesh))
    g = 0.02
    cfg = tight()
    cfg.dt0, cfg.g_max = 0.005, g
    res = continuation_run(prob, cfg)
    u = res.final_state[1]
    X = mesh.nodes
    Fg = np.diag([1 + g, 1 + g, 1.0])
    err = np.abs(X + u - X @ Fg.T).max()
    asm = prob.assembler
    eb = asm.batch(u, g)
    stress = np.abs(fem.effective_stress(eb, asm.cell_material(g))).max()
    dt = time.perf_counter() - t0
    ok = res.status == "completed" and err <= 1e-8 and stress <= 1e-8 * MU_FILM and dt < 30
    criterion(
        "PASS" if ok else "FAIL",
        f"max |x - Fg X| {err:.1e} (<=1e-8), max |tau| {stress:.1e} (<=1e-6), {dt:.1f} s",
    )
    assert ok


def test_criterion_04_prebuckling_oracle(criterion):
    t0 = time.perf_counter()
    H, h = 4.0, 0.5
    mesh = build_bilayer_box(2.0, 2.0, H, h, 2, 2, 7, 1)
    params = base_materials(100.0)
    prob = Problem(mesh, params)
    g = 0.005
    rec, u = newton_solve(prob, prob.initial_state(), g, tight())
    X = mesh.nodes
    # z-only field depending on z alone
    inplane = np.abs(u[:, :2]).max()
    zs = np.unique(np.round(X[:, 2], 12))
    spread = max(np.ptp(u[np.isclose(X[:, 2], z), 2]) for z in zs)
    # per-layer oracle
    res = {}
    for tag, name in ((SUBSTRATE, "substrate"), (FILM, "film")):
        p = params[tag]
        res[name] = flat_layer_stretch(p.mu0, p.penalty_lambda, g, p.mu_fiber)
    s_s, s_f = res["substrate"][0], res["film"][0]
    top = np.isclose(X[:, 2], H)
    uz_top = (s_s - 1) * (H - h) + (s_f - 1) * h
    e_top = abs(u[top, 2].mean() - uz_top) / abs(uz_top)
    m = prob.assembler.batch(u, g).mixed
    p_const = p_match = 0.0
    for tag, name in ((SUBSTRATE, "substrate"), (FILM, "film")):
        pl = m.p[mesh.region == tag]
        p_const = max(p_const, np.ptp(pl) / abs(pl.mean()))
        p_match = max(p_match, abs(pl.mean() - res[name][1]) / abs(res[name][1]))
    V = 2.0 * 2.0
    E_oracle = res["substrate"][2] * V * (H - h) + res["film"][2] * V * h
    e_energy = abs(prob.assembler.energies(u, g).sum() - E_oracle) / E_oracle
    dt = time.perf_counter() - t0
    scale = abs(uz_top)
    ok = (
        rec.converged
        and inplane <= 1e-10 * scale
        and spread <= 1e-10 * scale
        and p_const <= 1e-6
        and max(e_top, p_match, e_energy) <= 1e-6
        and dt < 120
    )
    criterion(
        "PASS" if ok else "FAIL",
        f"in-plane {inplane:.1e}, pressure spread {p_const:.1e}, oracle: u_top {e_top:.1e} "
        f"p {p_match:.1e} energy {e_energy:.1e} (<=1e-6), {dt:.1f} s",
    )
    assert ok


def test_criterion_05_element_consistency(criterion):
    t0 = time.perf_counter()
    mesh = build_bilayer_box(1.0, 1.0, 1.0, 0.5, 1, 1, 1, 1)  # one box per layer
    prob = Problem(mesh, base_materials(250.0))
    asm, dm = prob.assembler, prob.dofmap
    rng = np.random.default_rng(5)
    u = dm.scatter(prob.initial_state(), 1e-3 * rng.standard_normal(dm.n_free))
    g = 0.02
    r, K = asm.residual(u, g)
    n = dm.n_free
    fd_r = np.empty(n)
    fd_K = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1e-6
        fd_r[k] = (asm.potential(dm.scatter(u, e), g) - asm.potential(dm.scatter(u, -e), g)) / 2e-6
        e[k] = 1e-7
        fd_K[:, k] = (
            asm.residual(dm.scatter(u, e), g, with_tangent=False) - asm.residual(dm.scatter(u, -e), g, with_tangent=False)
        ) / 2e-7
    er, eK = rel(r, fd_r), rel(K.toarray(), fd_K)
    dt = time.perf_counter() - t0
    ok = er <= 1e-6 and eK <= 1e-5 and dt < 60
    criterion("PASS" if ok else "FAIL", f"{mesh.n_cells} tets, {n} dofs: residual {er:.1e} (<=1e-6), tangent {eK:.1e} (<=1e-5)")
    assert ok


def _theta_deviation(refine):
    mesh = build_bilayer_box(1.0 * 1, 8.0, 4.0, 0.5, refine, 16 * refine, 7 * refine, refine)
    prob = Problem(mesh, base_materials(100.0), perturbation=PerturbationSpec(amplitude=0.1))
    cfg = ContinuationConfig(dt0=3e-3, g_max=6e-3)
    res = continuation_run(prob, cfg)
    g, u = res.final_state
    theta = prob.assembler.batch(u, g).mixed.theta
    return res.status, float(np.abs(theta - 1).max())


def test_criterion_06_quasi_incompressibility(criterion):
    dev = {}
    for refine in (1, 2):
        status, d = _theta_deviation(refine)
        dev[refine] = d if status == "completed" else np.inf
    ok = all(d <= 2e-3 for d in dev.values())
    criterion("PASS" if ok else "FAIL", f"max |theta - 1| at g=0.006: h=0.5 {dev[1]:.1e}, h=0.25 {dev[2]:.1e} (<=2e-3)")
    assert ok


# 7-9: buckling ---------------------------------------------------------------


def _desk_cases():
    """Per-fibre-case directories of the desk strip runs (recorded or fresh)."""
    if os.environ.get("MORPHOFEM_DESK_RUN") == "1":
        out = ROOT / "results" / "desk_strip_rerun"
        shutil.rmtree(out, ignore_errors=True)
        cfg = cfgmod.load(DESK_CONFIG)
        cli.run_strip(cfg, str(out))
        source = "fresh run"
    else:
        out = DESK_RESULTS
        source = "recorded run"
    cases = {}
    for mu in (100.0, 2500.0):
        d = out / f"mu_fiber_{mu:g}"
        if not (d / "summary.json").exists():
            return None, source
        cases[mu] = d
    return cases, source


def _case_data(d):
    summary = json.loads((d / "summary.json").read_text())
    cfg = json.loads((d / "config.json").read_text())
    ts = A.read_timeseries_csv(d / "timeseries.csv")
    w = np.column_stack([ts["wA"], ts["wB"], ts["wC"]])
    events = A.detect_bifurcations(ts["g"], w, ts["total_energy"], cfg["geometry"]["H"])
    return summary, cfg, ts, events


@pytest.fixture(scope="module")
def desk():
    return _desk_cases()


def test_criterion_07_buckling_trend(criterion, desk):
    cases, source = desk
    if cases is None:
        criterion("FAIL", f"no desk strip results in {DESK_RESULTS}")
        pytest.fail("desk strip results missing")
    data = {mu: _case_data(d) for mu, d in cases.items()}
    g1 = {mu: (ev[0].g if ev else None) for mu, (_, _, _, ev) in data.items()}
    lam = {mu: s["wavelength"] for mu, (s, _, _, _) in data.items()}
    rt = {mu: s["runtime_s"] for mu, (s, _, _, _) in data.items()}
    consistent = all(g1[mu] == data[mu][0]["g_cr1"] for mu in g1)
    geo = data[100.0][1]["geometry"]
    desk_geo = (geo["Ly"], geo["Lx"], geo["H"]) == (60.0, 1.0, 4.0)
    ok = (
        None not in g1.values()
        and None not in lam.values()
        and consistent
        and desk_geo
        and g1[2500.0] < g1[100.0]
        and lam[2500.0] > lam[100.0]
        and max(rt.values()) <= 1800
    )

    def f(v):
        return "none" if v is None else f"{v:.4g}"

    criterion(
        "PASS" if ok else "FAIL",
        f"({source}) g_cr1 {f(g1[2500.0])} (2500) vs {f(g1[100.0])} (100); "
        f"wavelength {f(lam[2500.0])} vs {f(lam[100.0])}; runtime {max(rt.values()):.0f} s (<=1800)",
    )
    assert ok


def test_criterion_08_reference_values(criterion, tmp_path):
    if os.environ.get("MORPHOFEM_FULL") != "1":
        criterion("SKIP", "optional production-mesh gate, not run (MORPHOFEM_FULL=1 enables it)")
        pytest.skip("production-mesh RVE study; set MORPHOFEM_FULL=1")
    cfg = cfgmod.resolve({"study": {"strip_summary": None}})
    strip = cli.run_strip(cfg, str(tmp_path / "strip"))
    cfg["study"]["strip_summary"] = str(tmp_path / "strip" / "strip_summary.json")
    rows = cli.run_rve(cfg, str(tmp_path / "rve"))
    g1 = {r["mu_fiber"]: r["g_cr1"] for r in rows}
    g2 = {r["mu_fiber"]: r["g_cr2"] for r in rows}
    ok = None not in g1.values()
    ok = ok and abs(g1[100.0] - 0.0116) <= 0.3 * 0.0116 and abs(g1[2500.0] - 0.0026) <= 0.3 * 0.0026
    ok = ok and all(v is not None and 0.022 <= v <= 0.038 for v in g2.values())
    order = [g1[mu] for mu in sorted(g1)]
    ok = ok and all(a > b for a, b in zip(order, order[1:]))
    criterion("PASS" if ok else "FAIL", f"g_cr1 {g1}, g_cr2 {g2}, strip {len(strip)} cases")
    assert ok


def test_criterion_09_energy_mechanism(criterion, desk):
    cases, source = desk
    if cases is None:
        criterion("FAIL", f"no desk strip results in {DESK_RESULTS}")
        pytest.fail("desk strip results missing")
    mags = {}
    for mu, d in cases.items():
        summary, cfg, ts, events = _case_data(d)
        if not events:
            mags[mu] = None
            continue
        dg = 2.0 * cfg["continuation"]["dt0"]
        k = events[0].index
        mags[mu] = {
            part: abs(A.kink_magnitude(ts["g"], ts[f"film_{part}"], k, dg)) for part in ("iso", "ani")
        }
    ok = all(v is not None for v in mags.values())
    ok = ok and mags[2500.0]["ani"] > mags[2500.0]["iso"] and mags[100.0]["iso"] > mags[100.0]["ani"]

    def f(m):
        return "no event" if m is None else f"ani {m['ani']:.3g} / iso {m['iso']:.3g}"

    criterion(
        "PASS" if ok else "FAIL",
        f"({source}) |slope change| of film energies: 2500: {f(mags[2500.0])}; 100: {f(mags[100.0])}",
    )
    assert ok


# 10: determinism -------------------------------------------------------------


def test_criterion_10_determinism(criterion, tmp_path):
    cfg = cfgmod.resolve(
        {
            "geometry": {"Ly": 8.0, "ny": 16, "nx": 1, "nz_substrate": 7, "nz_film": 1},
            "materials": {"film": {"mu_fiber": 2500.0}},
            "growth": {"g_max": 0.003},
            "continuation": {"dt0": 5e-4},
        }
    )
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        cli.run_case(cfg, str(d))
        outs.append((d / "timeseries.csv").read_bytes())
    n_rows = outs[0].count(b"\n") - 1
    ok = outs[0] == outs[1] and n_rows >= 6
    criterion("PASS" if ok else "FAIL", f"two runs, {n_rows} CSV rows, byte-identical: {outs[0] == outs[1]}")
    assert ok
