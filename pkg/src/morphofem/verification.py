"""Self-checks run by ``morphofem verify``.

Every check is a small function returning ``(passed, detail)``; the suite
runs them all, never lets one failure stop the rest, and collects a
machine-readable report.
"""

import json
import os
import tempfile
import time

import numpy as np

from . import config as cfgmod
from . import fem
from . import material as mat
from . import tensors as T
from .linsolve import linear_solve
from .errors import ConfigError, SingularSystem
from .mesh import FILM, SUBSTRATE, build_bilayer_box, find_periodic_pairs, validate_mesh
from .vtu import read_vtu, write_vtu

MAX_COND = 30.0

BASE_MATERIALS = {
    FILM: dict(mu0=100.0, penalty_lambda=1e5),
    SUBSTRATE: dict(mu0=1.0, penalty_lambda=1e3),
}


def random_states(n, seed=0, fiber=(100.0, 2500.0)):
    """Seeded deformation states with ``det Fe`` in [0.3, 2] and
    ``g`` in [0, 0.05], cycling over growth kinds and material rows.

    Distortions are redrawn until ``cond(Fe) <= MAX_COND``: moving fourth
    order tensors between configurations costs about ``cond^4`` digits, so
    wilder samples only measure round-off.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        kind = ("planar", "isotropic")[i % 2]
        row = (FILM, SUBSTRATE)[(i // 2) % 2]
        g = rng.uniform(0.0, 0.05)
        mf = fiber[i % len(fiber)] if row == FILM else 0.0
        n0 = rng.standard_normal(3)
        n0 /= np.linalg.norm(n0)
        params = mat.MaterialParams(**BASE_MATERIALS[row], mu_fiber=mf, n0=tuple(n0), tension_only=bool(i % 3 == 0))
        spec = mat.GrowthSpec(kind, g, (0.0, 0.0, 1.0))
        Fg = mat.make_growth_tensor(spec)
        target = rng.uniform(0.3, 2.0)
        while True:
            A = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
            if np.linalg.det(A) < 0:
                A[:, 0] *= -1
            if np.linalg.cond(A) <= MAX_COND:
                break
        Fe = A * (target / np.linalg.det(A)) ** (1 / 3)
        out.append((params, spec, Fe @ Fg))
    return out


def _fd_stress(params, spec, F, h=1e-6):
    """Kirchhoff stress ``dpsi/dF F^T`` by central differences."""
    P = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            d = np.zeros((3, 3))
            d[i, j] = h
            ep = sum(mat.energy(params, mat.elastic_decompose(F + d, spec, params.n0)))
            em = sum(mat.energy(params, mat.elastic_decompose(F - d, spec, params.n0)))
            P[i, j] = (ep - em) / (2 * h)
    return P @ F.T


def _fd_moduli(params, spec, F, h=1e-6):
    """Spatial moduli from central differences of the Kirchhoff stress
    under perturbations ``F -> (I + h e_k x e_l) F``; the Truesdell-rate
    relation gives ``c_ijkl = dtau_ij/dL_kl - delta_ik tau_lj - tau_il delta_jk``
    symmetrized in ``kl``."""
    tau = mat.evaluate(params, mat.elastic_decompose(F, spec, params.n0)).tau
    D = np.zeros((3, 3, 3, 3))
    for k in range(3):
        for l in range(3):
            L = np.zeros((3, 3))
            L[k, l] = h
            tp = mat.evaluate(params, mat.elastic_decompose((np.eye(3) + L) @ F, spec, params.n0)).tau
            tm = mat.evaluate(params, mat.elastic_decompose((np.eye(3) - L) @ F, spec, params.n0)).tau
            D[:, :, k, l] = (tp - tm) / (2 * h)
    I = np.eye(3)
    c = D - np.einsum("ik,lj->ijkl", I, tau) - np.einsum("il,jk->ijkl", tau, I)
    return 0.5 * (c + c.transpose(0, 1, 3, 2))


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30))


# ---------------------------------------------------------------------------
# checks


def check_tensor_algebra():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((20, 3, 3)) + 3 * np.eye(3)
    e1 = np.abs(T.det(A) - np.linalg.det(A)).max()
    e2 = np.abs(T.inv(A) @ A - np.eye(3)).max()
    B = rng.standard_normal((3, 3))
    C = rng.standard_normal((3, 3))
    X = rng.standard_normal((3, 3))
    e3 = np.abs(np.einsum("ijkl,kl->ij", T.nonstandard_product(B, C), X) - B @ X @ C.T).max()
    err = max(e1, e2, e3)
    return err < 1e-12, f"max error {err:.2e}"


def check_growth_inverse():
    err = 0.0
    for kind in ("planar", "isotropic"):
        for g in (0.0, 1e-9, 0.02, 0.05):
            spec = mat.GrowthSpec(kind, g, (0.0, 0.0, 1.0))
            err = max(err, np.abs(mat.make_growth_tensor(spec) @ mat.inverse_growth_tensor(spec) - np.eye(3)).max())
    return err < 1e-14, f"max |Fg Fg^-1 - I| {err:.2e}"


def check_stress_fd(n=40):
    worst = 0.0
    for params, spec, F in random_states(n, seed=11):
        tau = mat.evaluate(params, mat.elastic_decompose(F, spec, params.n0)).tau
        worst = max(worst, _rel(tau, _fd_stress(params, spec, F)))
    return worst <= 1e-6, f"max relative error {worst:.2e} over {n} states"


def check_moduli_fd(n=40):
    worst = 0.0
    for params, spec, F in random_states(n, seed=12):
        c = mat.evaluate(params, mat.elastic_decompose(F, spec, params.n0)).c
        worst = max(worst, _rel(c, _fd_moduli(params, spec, F)))
    return worst <= 1e-4, f"max relative error {worst:.2e} over {n} states"


def check_configuration_equivalence(n=40):
    worst = 0.0
    for params, spec, F in random_states(n, seed=13):
        kin = mat.elastic_decompose(F, spec, params.n0)
        e = mat.evaluate(params, kin)
        S_parts, C_parts = mat.evaluate_lagrangian(params, kin)
        S, C = mat.total_pullback(kin, sum(S_parts), sum(C_parts))
        worst = max(worst, _rel(T.push_forward_stress(S, F), e.tau), _rel(T.push_forward_moduli(C, F), e.c))
    return worst <= 1e-10, f"max relative mismatch {worst:.2e}"


def check_moduli_symmetry(n=20):
    ok = True
    for params, spec, F in random_states(n, seed=14):
        c = mat.evaluate(params, mat.elastic_decompose(F, spec, params.n0)).c
        ok &= bool(T.has_minor_symmetry(c, 1e-10) and T.has_major_symmetry(c, 1e-10))
    return ok, "minor and major symmetry"


def check_quadrature():
    ref = reference = fem.reference_element()
    L = np.column_stack([1 - ref.points.sum(axis=1), ref.points])
    # int_T l0^a l1^b l2^c l3^d = a! b! c! d! 3! / (a+b+c+d+3)! * |T|, |T| = 1/6
    from math import factorial

    worst = 0.0
    for exps in [(4, 0, 0, 0), (2, 2, 0, 0), (1, 1, 1, 1), (2, 1, 1, 0), (0, 3, 1, 0), (0, 0, 0, 0)]:
        exact = np.prod([factorial(k) for k in exps]) * 6 / factorial(sum(exps) + 3) / 6
        num = reference.weights @ np.prod(L ** np.array(exps), axis=1)
        worst = max(worst, abs(num - exact))
    return worst < 1e-15, f"max error {worst:.2e} on degree <= 4 monomials"


def check_shape_functions():
    rng = np.random.default_rng(2)
    xi = rng.dirichlet(np.ones(4), size=10)[:, 1:]
    N, dN = fem.shape_functions(xi)
    e1 = np.abs(N.sum(axis=1) - 1).max()
    e2 = np.abs(dN.sum(axis=1)).max()
    return max(e1, e2) < 1e-14, f"partition of unity error {max(e1, e2):.2e}"


def check_mesh():
    mesh = build_bilayer_box(2.0, 3.0, 2.0, 0.5, 2, 3, 2, 1)
    problems = validate_mesh(mesh)
    return not problems, "; ".join(problems) if problems else f"{mesh.n_cells} cells valid"


def check_periodic_pairing():
    mesh = build_bilayer_box(2.0, 3.0, 2.0, 0.5, 2, 3, 2, 1)
    pp = find_periodic_pairs(mesh, ("x", "y"))
    rep = pp.representative(mesh.n_nodes)
    X = mesh.nodes
    lo, hi = mesh.bounds
    d = X - X[rep]
    ok = np.all(np.isclose(np.abs(d[:, 0]), 0) | np.isclose(np.abs(d[:, 0]), hi[0] - lo[0]))
    ok &= np.all(np.isclose(np.abs(d[:, 1]), 0) | np.isclose(np.abs(d[:, 1]), hi[1] - lo[1]))
    ok &= np.all(np.isclose(d[:, 2], 0))
    ok &= np.all(rep[rep] == rep)
    return bool(ok), f"{len(pp)} pairs, {len(np.unique(rep))} representatives"


def _two_cell_problem():
    from .solver import Problem

    mesh = build_bilayer_box(1.0, 1.0, 1.0, 0.5, 1, 1, 1, 1)
    params = {
        FILM: mat.MaterialParams(100.0, 1e5, 250.0, (0.0, 1.0, 0.0)),
        SUBSTRATE: mat.MaterialParams(1.0, 1e3),
    }
    return Problem(mesh, params, mat.GrowthSpec("planar", 0.0, (0.0, 0.0, 1.0)))


def check_global_residual_fd():
    prob = _two_cell_problem()
    asm = prob.assembler
    rng = np.random.default_rng(3)
    u = prob.dofmap.scatter(prob.initial_state(), 1e-3 * rng.standard_normal(prob.dofmap.n_free))
    g = 0.02
    r = asm.residual(u, g, with_tangent=False)
    h = 1e-6
    fd = np.empty_like(r)
    for k in range(len(r)):
        e = np.zeros(len(r))
        e[k] = h
        fd[k] = (asm.potential(prob.dofmap.scatter(u, e), g) - asm.potential(prob.dofmap.scatter(u, -e), g)) / (2 * h)
    err = _rel(r, fd)
    return err <= 1e-6, f"relative error {err:.2e} on {len(r)} dofs"


def check_global_tangent_fd():
    prob = _two_cell_problem()
    asm = prob.assembler
    rng = np.random.default_rng(4)
    u = prob.dofmap.scatter(prob.initial_state(), 1e-3 * rng.standard_normal(prob.dofmap.n_free))
    g = 0.02
    K = asm.tangent(u, g).toarray()
    h = 1e-7
    fd = np.empty_like(K)
    for k in range(K.shape[0]):
        e = np.zeros(K.shape[0])
        e[k] = h
        fd[:, k] = (
            asm.residual(prob.dofmap.scatter(u, e), g, with_tangent=False)
            - asm.residual(prob.dofmap.scatter(u, -e), g, with_tangent=False)
        ) / (2 * h)
    err = _rel(K, fd)
    return err <= 1e-5, f"relative error {err:.2e}"


def check_free_growth_patch():
    from .solver import ContinuationConfig, Problem, newton_solve

    mesh = build_bilayer_box(1.0, 1.0, 1.0, 0.5, 2, 2, 1, 1)
    params = {
        FILM: mat.MaterialParams(100.0, 1e5, 250.0, (0.0, 1.0, 0.0)),
        SUBSTRATE: mat.MaterialParams(100.0, 1e5, 250.0, (0.0, 1.0, 0.0)),
    }
    pinned = rigid_body_pins(mesh)
    prob = Problem(mesh, params, periodic_axes=(), fixed_facets=(), pinned=pinned)
    g = 0.02
    spec = mat.GrowthSpec("planar", g, (0.0, 0.0, 1.0))
    rec, u = newton_solve(prob, prob.initial_state(), g, ContinuationConfig(newton_abs_tol=1e-11))
    X = mesh.nodes
    target = X @ mat.make_growth_tensor(spec).T - X
    err = np.abs(u - target).max()
    ok = rec.converged and err <= 1e-8
    return bool(ok), f"converged={rec.converged}, max |u - (Fg - I) X| {err:.2e}"


def rigid_body_pins(mesh):
    """Dirichlet data removing the six rigid modes of a free box: the
    origin corner fixed, the x-corner held in y and z, the y-corner in z."""
    X = mesh.nodes
    lo, hi = mesh.bounds

    def node(p):
        return int(np.argmin(np.linalg.norm(X - p, axis=1)))

    o = node(lo)
    a = node([hi[0], lo[1], lo[2]])
    b = node([lo[0], hi[1], lo[2]])
    return {(o, 0): 0.0, (o, 1): 0.0, (o, 2): 0.0, (a, 1): 0.0, (a, 2): 0.0, (b, 2): 0.0}


def check_linear_solver():
    import scipy.sparse as sp

    rng = np.random.default_rng(5)
    A = rng.standard_normal((5, 5))
    K = A @ A.T + 5 * np.eye(5)
    r = rng.standard_normal(5)
    x = linear_solve(sp.csr_matrix(K), r)
    ok = np.abs(x - np.linalg.solve(K, r)).max() < 1e-12
    try:
        linear_solve(sp.csr_matrix(np.diag([1.0, 1.0, 0.0])), np.ones(3))
        ok = False
    except SingularSystem:
        pass
    return bool(ok), "dense oracle match and singular detection"


def check_config_roundtrip():
    cfg = cfgmod.resolve({})
    ok = cfgmod.parse(cfgmod.dumps(cfg)) == cfg
    try:
        cfgmod.resolve({"materials": {"film": {"mu0": -1.0, "kappa": 1e5}}})
        ok = False
    except ConfigError as exc:
        ok &= "materials.film.mu0" in str(exc)
    return bool(ok), "round trip identity and negative modulus rejected"


def check_vtu_roundtrip():
    mesh = build_bilayer_box(1.0, 1.0, 1.0, 0.5, 1, 1, 1, 1)
    rng = np.random.default_rng(6)
    u = rng.standard_normal(mesh.nodes.shape)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "check.vtu")
        write_vtu(path, mesh.nodes, mesh.cells, {"displacement": u}, {"region": mesh.region.astype(np.int32)})
        back = read_vtu(path)
    err = np.abs(back["point_data"]["displacement"] - u).max()
    return err <= 1e-15, f"max round-trip error {err:.2e}"


def check_rest_energy():
    prob = _two_cell_problem()
    E = prob.assembler.energies(prob.initial_state(), 0.0)
    # theta = sum(w Je) / V carries quadrature round-off, so not exactly 0
    scale = 100.0 * prob.assembler.geom.volume.sum()
    return bool(np.abs(E).max() <= 1e-20 * scale), f"max |energy| {np.abs(E).max():.2e}"


CHECKS = [
    ("tensor_algebra", check_tensor_algebra),
    ("growth_tensor_inverse", check_growth_inverse),
    ("kirchhoff_stress_fd", check_stress_fd),
    ("spatial_moduli_fd", check_moduli_fd),
    ("configuration_equivalence", check_configuration_equivalence),
    ("moduli_symmetry", check_moduli_symmetry),
    ("quadrature_degree4", check_quadrature),
    ("shape_functions", check_shape_functions),
    ("mesh_validation", check_mesh),
    ("periodic_pairing", check_periodic_pairing),
    ("global_residual_fd", check_global_residual_fd),
    ("global_tangent_fd", check_global_tangent_fd),
    ("free_growth_patch", check_free_growth_patch),
    ("linear_solver", check_linear_solver),
    ("config_roundtrip", check_config_roundtrip),
    ("vtu_roundtrip", check_vtu_roundtrip),
    ("rest_state_energy", check_rest_energy),
]


def run_checks(names=None):
    report = []
    for name, fn in CHECKS:
        if names and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        report.append(
            {"name": name, "passed": bool(passed), "detail": detail, "seconds": round(time.perf_counter() - t0, 3)}
        )
    return report


def write_report(report, path):
    doc = {"passed": all(c["passed"] for c in report), "n_checks": len(report), "checks": report}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    return doc
