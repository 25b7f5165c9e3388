import csv

import numpy as np
import pytest

from morphofem import analysis as A
from morphofem import material as mat
from morphofem.errors import NoDominantMode
from morphofem.mesh import FILM, SUBSTRATE, build_bilayer_box
from morphofem.solver import Problem, StepRecord
from morphofem.vtu import read_vtu


@pytest.fixture(scope="module")
def strip():
    return build_bilayer_box(1.0, 24.0, 2.0, 0.5, 1, 48, 1, 1)


def test_synthetic_wavelength():
    L = 240.0
    n = 960
    s = L * np.arange(n) / n
    for lam in (12.0, 20.0, 30.0, 48.0):
        w = 0.1 * np.sin(2 * np.pi * s / lam + 0.4)
        assert A.dominant_wavelength(w, L) == pytest.approx(lam, rel=1e-3)


def test_wavelength_off_grid_refined():
    # 9.5 periods over the window: peak lies between two bins
    L, n = 240.0, 960
    s = L * np.arange(n) / n
    lam = L / 9.5
    est = A.dominant_wavelength(np.sin(2 * np.pi * s / lam), L)
    assert est == pytest.approx(lam, rel=0.03)


def test_flat_signal_has_no_mode():
    with pytest.raises(NoDominantMode):
        A.dominant_wavelength(np.zeros(200), 10.0)
    rng = np.random.default_rng(0)
    with pytest.raises(NoDominantMode):
        A.dominant_wavelength(1e-6 * rng.standard_normal(4096), 10.0)


def test_probe_interpolation_exact_for_quadratic(strip):
    # top-surface field w = 0.01 y^2 + 0.2 x y is reproduced exactly
    X = strip.nodes
    u = np.zeros_like(X)
    u[:, 2] = 0.01 * X[:, 1] ** 2 + 0.2 * X[:, 0] * X[:, 1]
    pts = np.array([[0.3, 1.7], [0.5, 10.0], [0.91, 23.2]])
    vals = A.ProbeSet(strip, pts).values(u)
    np.testing.assert_allclose(vals, 0.01 * pts[:, 1] ** 2 + 0.2 * pts[:, 0] * pts[:, 1], atol=1e-13)


def test_probe_outside_rejected(strip):
    with pytest.raises(ValueError):
        A.ProbeSet(strip, [[5.0, 5.0]])


def test_probes_for_wavelength(strip):
    ps = A.ProbeSet.for_wavelength(strip, 8.0)
    np.testing.assert_allclose(ps.points, [[0.5, 0.0], [0.5, 2.0], [0.5, 4.0]])


def test_extract_wavelength_from_field(strip):
    X = strip.nodes
    u = np.zeros_like(X)
    u[:, 2] = 0.05 * np.cos(2 * np.pi * X[:, 1] / 6.0) * X[:, 2] / 2.0
    assert A.extract_wavelength(strip, u) == pytest.approx(6.0, rel=5e-3)


def test_synthetic_probe_divergence():
    H = 4.0
    k_true = 17
    g = 1e-3 * np.arange(40)
    w = np.zeros((40, 3))
    w[:, :] = -0.001 * np.arange(40)[:, None]  # uniform settlement does not count
    amp = np.where(np.arange(40) >= k_true, 0.01 * (np.arange(40) - k_true + 1), 0.0)
    w[:, 1] += amp
    w[:, 2] -= amp
    hits = [k for k in range(40) if A.probe_divergence([w[k]], H)]
    assert hits[0] == k_true
    E = g**2
    E[k_true:] -= 5.0 * (g[k_true:] - g[k_true]) ** 2 + 0.01 * (g[k_true:] - g[k_true])
    ev = A.detect_bifurcations(g, w, E, H)
    assert ev[0].index == k_true and ev[0].mode == 1 and ev[0].criterion == "probe"


def test_energy_kinks_on_nonuniform_steps():
    g = np.concatenate([np.linspace(0, 0.01, 11), 0.01 + np.cumsum(np.full(10, 2.5e-4))])
    E = 50.0 * g**2
    kink = 11
    E[kink:] += -30.0 * (g[kink:] - g[kink - 1])
    ks = A.energy_kinks(g, E)
    assert ks and abs(ks[0] - kink) <= 1


def test_energy_curvature_exact_for_quadratic():
    g = np.array([0.0, 0.1, 0.15, 0.3, 0.31])
    c = A.energy_curvature(g, 3.0 * g**2 + g)
    np.testing.assert_allclose(c, 6.0, rtol=1e-12)


def test_kink_magnitude():
    g = np.linspace(0, 1, 101)
    E = np.where(g < 0.5, 2.0 * g, 1.0 - 3.0 * (g - 0.5))
    assert A.kink_magnitude(g, E, 50, 0.1) == pytest.approx(-5.0)
    with pytest.raises(ValueError):
        A.kink_magnitude(g, E, 0, 0.1)


def _records():
    recs = []
    for k in range(4):
        e = {f"{l}_{p}": 0.1 * k + j for j, (l, p) in enumerate((l, p) for l in ("film", "substrate") for p in A.ENERGY_PARTS)}
        recs.append(StepRecord(1e-3 * (k + 1), 1e-3, 3, [1.0, 1e-11], True, 0.1, probes=[0.1 * k, 0.0, -0.1 / 3], energies=e))
    recs.insert(2, StepRecord(2.5e-3, 1e-3, 20, [1.0], False, 0.2, "failed"))
    return recs


def test_csv_header_only_for_empty_run(tmp_path):
    path = tmp_path / "ts.csv"
    A.write_timeseries_csv([], path)
    assert path.read_text() == ",".join(A.CSV_COLUMNS) + "\n"


def test_csv_columns_and_roundtrip(tmp_path):
    path = tmp_path / "ts.csv"
    recs = _records()
    A.write_timeseries_csv(recs, path)
    rows = list(csv.reader(open(path)))
    assert len(A.CSV_COLUMNS) == 14
    assert rows[0] == list(A.CSV_COLUMNS)
    assert len(rows) == 5  # failed attempt excluded
    assert rows[1][2] == "3"
    data = A.read_timeseries_csv(path)
    acc = [r for r in recs if r.converged]
    assert np.array_equal(data["g"], [r.g for r in acc])
    assert np.array_equal(data["wC"], [-0.1 / 3] * 4)  # 17 digits round-trip exactly
    assert data["total_energy"][3] == pytest.approx(sum(acc[3].energies.values()))


def test_layer_energies_and_vtu_roundtrip(tmp_path):
    mesh = build_bilayer_box(1.0, 1.0, 1.0, 0.5, 1, 1, 1, 1)
    params = {FILM: mat.MaterialParams(100.0, 1e5, 250.0, (0, 1.0, 0)), SUBSTRATE: mat.MaterialParams(1.0, 1e3)}
    prob = Problem(mesh, params)
    rng = np.random.default_rng(1)
    u = prob.dofmap.scatter(prob.initial_state(), 1e-3 * rng.standard_normal(prob.dofmap.n_free))
    eb = A.layer_energies(prob, u, 0.01)
    E = prob.assembler.energies(u, 0.01)
    assert eb.total == pytest.approx(E.sum(), rel=1e-14)
    assert eb.film[2] > 0 and eb.substrate[2] == 0.0
    path = tmp_path / "f.vtu"
    A.write_fields_vtu(prob, u, 0.01, path)
    back = read_vtu(path)
    assert np.abs(back["point_data"]["displacement"] - u).max() <= 1e-15
    m = prob.assembler.batch(u, 0.01).mixed
    assert np.abs(back["cell_data"]["theta"] - m.theta).max() <= 1e-15
    assert back["field_data"]["g"] == pytest.approx(0.01)


def test_vtu_unwritable_path(tmp_path):
    mesh = build_bilayer_box(1.0, 1.0, 1.0, 0.5, 1, 1, 1, 1)
    params = {FILM: mat.MaterialParams(100.0, 1e5), SUBSTRATE: mat.MaterialParams(1.0, 1e3)}
    prob = Problem(mesh, params)
    with pytest.raises(OSError, match="missing"):
        A.write_fields_vtu(prob, prob.initial_state(), 0.0, tmp_path / "missing" / "f.vtu")
