"""Newton-Raphson growth continuation.

The growth parameter ``g`` is advanced by ``dt``; a step whose Newton
iteration fails (iteration cap, non-finite residual, inverted element or
singular tangent) is retried from the last accepted state with ``dt``
halved, up to ``max_halvings`` times, after which the run stops.  Once the
first bifurcation is detected, ``dt`` is reset to ``dt0``.

With ``stability_check`` on, a converged state whose tangent has negative
pivots in its symmetric factorization is an unstable equilibrium and is
treated like a failed step.  Without it, Newton readily converges to the
flat (unstable) solution past a bifurcation and the wrinkled branch is
never reached.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fem
from .errors import ContinuationStalled, MorphoError, NonPositiveJacobian, SingularSystem
from .linsolve import linear_solve
from .material import GrowthSpec
from .mesh import FILM, SUBSTRATE, find_periodic_pairs

log = logging.getLogger(__name__)


@dataclass
class ContinuationConfig:
    dt0: float = 1e-4
    max_halvings: int = 5
    newton_max_iter: int = 20
    newton_rel_tol: float = 1e-8
    newton_abs_tol: float = 1e-10
    g_max: float = 0.04
    reset_after_buckling: bool = True
    stability_check: bool = True

    def __post_init__(self):
        if not self.dt0 > 0:
            raise ValueError("dt0 must be positive")
        if not (self.newton_rel_tol > 0 and self.newton_abs_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_halvings < 0 or self.newton_max_iter < 1:
            raise ValueError("max_halvings must be >= 0 and newton_max_iter >= 1")


@dataclass
class PerturbationSpec:
    """In-plane dead traction on the film top face, scaled by the substrate
    shear modulus.

    ``pattern`` is ``"patch"`` (a Gaussian patch centred off every symmetry
    plane, periodically wrapped; contains all wavelengths down to a few
    ``width``) or ``"sinusoid"`` (one full period along each axis).
    """

    amplitude: float = 0.1
    pattern: str = "patch"
    active_window: tuple = (0.0, math.inf)
    center: tuple = (0.31, 0.37)  # fractions of Lx, Ly
    width: float = 0.05  # Gaussian sigma as a fraction of max(Lx, Ly)
    direction: tuple = (0.6, 0.8)

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("perturbation amplitude must be non-negative")
        if self.pattern not in ("patch", "sinusoid"):
            raise ValueError(f"unknown perturbation pattern {self.pattern!r}")
        self.active_window = tuple(float(v) for v in self.active_window)

    def active(self, g):
        lo, hi = self.active_window
        return lo <= g <= hi


def perturbation_traction(spec, Lx, Ly):
    """Traction field ``t(X)`` (per unit substrate shear modulus and unit
    amplitude) for the chosen pattern."""
    if spec.pattern == "sinusoid":

        def t(X):
            out = np.zeros_like(X)
            out[:, 0] = np.sin(2 * np.pi * X[:, 0] / Lx + 0.3)
            out[:, 1] = np.sin(2 * np.pi * X[:, 1] / Ly + 0.7)
            return out

        return t

    cx, cy = spec.center[0] * Lx, spec.center[1] * Ly
    sigma = spec.width * max(Lx, Ly)
    d = np.asarray(spec.direction, dtype=float)
    d = d / np.linalg.norm(d)

    def t(X):
        dx = X[:, 0] - cx
        dy = X[:, 1] - cy
        dx -= Lx * np.round(dx / Lx)
        dy -= Ly * np.round(dy / Ly)
        amp = np.exp(-(dx**2 + dy**2) / (2 * sigma**2))
        out = np.zeros_like(X)
        out[:, 0] = d[0] * amp
        out[:, 1] = d[1] * amp
        return out

    return t


class Problem:
    """Bilayer boundary value problem: mesh, materials, constraints, loads.

    Parameters
    ----------
    mesh : Mesh
    params_by_region : dict
        ``{FILM: MaterialParams, SUBSTRATE: MaterialParams}``.
    growth : GrowthSpec
        Growth kind and membrane normal (``g`` is supplied per step).
    periodic_axes : sequence of {"x", "y"}
    fixed_facets : sequence of facet names clamped in all directions.
    pinned : dict, optional
        Extra ``{(node, component): value}`` Dirichlet data.
    perturbation : PerturbationSpec, optional
    """

    def __init__(
        self,
        mesh,
        params_by_region,
        growth=None,
        periodic_axes=("x", "y"),
        fixed_facets=("bottom",),
        pinned=None,
        perturbation=None,
    ):
        self.mesh = mesh
        self.params_by_region = dict(params_by_region)
        self.growth = growth or GrowthSpec("planar", 0.0, (0.0, 0.0, 1.0))
        self.periodic = find_periodic_pairs(mesh, periodic_axes)
        self.dofmap = fem.DofMap.from_mesh(mesh, self.periodic, fixed_facets, pinned)
        self.assembler = fem.Assembler(mesh, self.dofmap, self.params_by_region, self.growth)
        self.perturbation = perturbation
        self._load_pattern = None

    @property
    def substrate_shear_modulus(self):
        p = self.params_by_region.get(SUBSTRATE) or next(iter(self.params_by_region.values()))
        return p.mu0

    def initial_state(self):
        return self.dofmap.initial_displacement()

    def external_load(self, g):
        """Free-dof external force vector at growth ``g`` (None when no
        perturbation acts)."""
        return apply_perturbation(self.perturbation, g, self)

    def residual(self, u, g):
        return self.assembler.residual(u, g, self.external_load(g), with_tangent=False)

    def potential(self, u, g):
        return self.assembler.potential(u, g, self.external_load(g))


def apply_perturbation(spec, g, problem):
    if spec is None or spec.amplitude == 0 or not spec.active(g):
        return None
    if problem._load_pattern is None:
        mesh = problem.mesh
        lo, hi = mesh.bounds
        t = perturbation_traction(spec, hi[0] - lo[0], hi[1] - lo[1])
        nodal = fem.surface_load(mesh, mesh.facets["top"], t)
        problem._load_pattern = problem.assembler.load_vector(nodal)
    return spec.amplitude * problem.substrate_shear_modulus * problem._load_pattern


@dataclass
class StepRecord:
    g: float
    dt: float
    iterations: int
    residuals: list
    converged: bool
    wall_time: float
    reason: str = ""
    negative_pivots: int = None
    probes: list = field(default_factory=list)
    energies: dict = field(default_factory=dict)


def newton_solve(problem, u, g, config, f_ext=None, dt=0.0):
    """Solve for equilibrium at growth ``g`` starting from ``u``.

    Returns ``(record, u_new)``; on failure ``u_new`` is ``u`` unchanged.
    The stability check uses the inertia of the last factorized tangent.
    """
    asm = problem.assembler
    t0 = time.perf_counter()
    history = []
    u_k = u
    reason = ""
    converged = False
    n_neg = None
    it = 0
    check = config.stability_check
    try:
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            eb = asm.batch(u_k, g)
            r = asm.force_vector(eb, g, f_ext)
            history.append(float(np.linalg.norm(r)))
            tol = max(config.newton_rel_tol * history[0], config.newton_abs_tol)
            while True:
                if not np.isfinite(history[-1]):
                    reason = "non-finite residual"
                    break
                if history[-1] <= tol:
                    converged = True
                    break
                if it >= config.newton_max_iter:
                    reason = f"no convergence in {config.newton_max_iter} iterations"
                    break
                K = asm.tangent_matrix(eb, g)
                du, n_neg = linear_solve(K, -r, return_inertia=check) if check else (linear_solve(K, -r), None)
                u_k = problem.dofmap.scatter(u_k, du)
                it += 1
                eb = asm.batch(u_k, g)
                r = asm.force_vector(eb, g, f_ext)
                history.append(float(np.linalg.norm(r)))
            if converged and check and it == 0:
                K = asm.tangent_matrix(eb, g)
                _, n_neg = linear_solve(K, np.zeros(K.shape[0]) + 1.0, return_inertia=True)
    except NonPositiveJacobian as exc:
        reason = f"element inversion: {exc}"
    except SingularSystem as exc:
        reason = f"singular tangent: {exc}"
    except FloatingPointError as exc:
        reason = f"floating point error: {exc}"
    if converged and check and n_neg:
        converged = False
        reason = f"unstable equilibrium: {n_neg} negative pivots"
    rec = StepRecord(float(g), float(dt), it, history, converged, time.perf_counter() - t0, reason, n_neg)
    return rec, (u_k if converged else u)


@dataclass
class ContinuationResult:
    records: list = field(default_factory=list)  # every attempt, accepted or not
    snapshots: list = field(default_factory=list)  # (g, u) per accepted step
    status: str = "running"
    bifurcation_g: float = None
    bifurcation_state: object = None  # displacements when the detector fired
    final_state: tuple = None  # (g, u) of the last accepted step

    @property
    def accepted(self):
        return [r for r in self.records if r.converged]


def continuation_run(
    problem,
    config,
    perturbation=None,
    probes=None,
    detector=None,
    u0=None,
    g0=0.0,
    dt=None,
    keep_snapshots=True,
    on_step=None,
    raise_on_stall=False,
    stop=None,
):
    """Advance growth from ``g0`` to ``config.g_max``.

    Parameters
    ----------
    perturbation : PerturbationSpec, optional
        Overrides ``problem.perturbation`` when given.
    probes : ProbeSet, optional
        Vertical displacement probes recorded at every accepted step.
    detector : callable, optional
        ``detector(records) -> bool``; the first time it returns True the
        bifurcation is flagged (and ``dt`` reset when configured).  Defaults
        to the probe-divergence test when probes are given.
    on_step : callable, optional
        ``on_step(record, u)`` after each accepted step (checkpointing,
        output).
    stop : callable, optional
        ``stop(result, g) -> bool`` checked after each accepted step; True
        ends the run early with status ``"stopped"``.
    """
    from .analysis import layer_energies, probe_divergence

    if perturbation is not None:
        problem.perturbation = perturbation
        problem._load_pattern = None
    if detector is None and probes is not None:
        H = problem.mesh.meta.get("H", float(np.ptp(problem.mesh.nodes[:, 2])))

        def detector(records):
            return probe_divergence([r.probes for r in records], H)

    result = ContinuationResult()
    u = problem.initial_state() if u0 is None else u0
    g = float(g0)
    dt = config.dt0 if dt is None else float(dt)
    eps = 1e-12 * max(config.g_max, 1.0)
    flagged = False
    result.final_state = (g, u)
    while g < config.g_max - eps:
        step = min(dt, config.g_max - g)
        for attempt in range(config.max_halvings + 1):
            g_new = g + step
            rec, u_new = newton_solve(problem, u, g_new, config, problem.external_load(g_new), dt=step)
            result.records.append(rec)
            if rec.converged:
                break
            log.info("g=%.6g dt=%.3g failed (%s); halving", g_new, step, rec.reason)
            if attempt < config.max_halvings:
                step *= 0.5
        else:
            result.status = "stalled"
            msg = f"no convergence at g={g + step:.6g} after {config.max_halvings} halvings"
            log.warning(msg)
            if raise_on_stall:
                raise ContinuationStalled(msg)
            return result

        u, g = u_new, g_new
        result.final_state = (g, u)
        if step < dt:
            dt = step
        if probes is not None:
            rec.probes = [float(v) for v in probes.values(u)]
        rec.energies = layer_energies(problem, u, g).as_dict()
        if keep_snapshots:
            result.snapshots.append((g, u))
        log.info("g=%.6g dt=%.3g iters=%d |r|=%.3e", g, step, rec.iterations, rec.residuals[-1])
        if not flagged and detector is not None and detector(result.accepted):
            flagged = True
            result.bifurcation_g = g
            result.bifurcation_state = u
            if config.reset_after_buckling:
                dt = config.dt0
        if on_step is not None:
            on_step(rec, u)
        if stop is not None and stop(result, g):
            result.status = "stopped"
            return result
    result.status = "completed"
    return result


# checkpoints


def write_checkpoint(path, problem, u, g, dt=None):
    """Nodal displacements, condensed element fields and ``g`` as JSON."""
    eb = problem.assembler.batch(u, g)
    m = eb.mixed
    doc = {
        "format": "morphofem-checkpoint",
        "version": 1,
        "g": float(g),
        "dt": None if dt is None else float(dt),
        "u": np.asarray(u).tolist(),
        "mixed": {
            "theta": m.theta.tolist(),
            "p": m.p.tolist(),
            "lambda_bar": m.lambda_bar.tolist(),
            "s": m.s.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "morphofem-checkpoint":
        raise MorphoError(f"{path}: not a checkpoint file")
    doc["u"] = np.asarray(doc["u"], dtype=float)
    doc["mixed"] = {k: np.asarray(v) for k, v in doc["mixed"].items()}
    return doc


def record_to_dict(rec):
    return asdict(rec)
