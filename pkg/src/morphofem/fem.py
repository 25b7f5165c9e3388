"""T2P0F0 mixed tetrahedron and global assembly.

Displacements are interpolated with quadratic 10-node tetrahedra.  The
dilatation ``theta`` with its pressure ``p`` and the fiber stretch measure
``lambda_bar`` with its fiber stress ``s`` are constant per element and are
eliminated in closed form: since the penalty energies are quadratic,
stationarity gives

    theta      = <Je>_e,   p = lam (theta - 1)
    lambda_bar = <I4e>_e,  s = 2 mu_f (lambda_bar - 1)

where ``<.>_e`` is the reference-volume average over the element.  The
remaining displacement problem minimizes the condensed potential

    Pi_e(u) = int psi_iso dV + V_e [psi_vol(theta) + psi_ani(lambda_bar)].

Element dofs are node-major, xyz within a node (30 per element).  All
kernels are vectorized over a batch of elements.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import material as mat
from . import tensors as T
from .errors import NonPositiveJacobian

# ---------------------------------------------------------------------------
# reference element


@dataclass(frozen=True)
class ReferenceElementT2:
    points: np.ndarray  # (nq, 3) reference coordinates (xi, eta, zeta)
    weights: np.ndarray  # (nq,)
    N: np.ndarray  # (nq, 10)
    dN: np.ndarray  # (nq, 10, 3)


def keast_degree4():
    """11-point tetrahedron rule, exact for polynomials of degree 4.
    Barycentric points and weights summing to 1/6."""
    a, b = 0.3994035761667992, 0.1005964238332008
    bary = [(0.25, 0.25, 0.25, 0.25)]
    bary += [tuple(11 / 14 if i == j else 1 / 14 for i in range(4)) for j in range(4)]
    bary += [(a, a, b, b), (a, b, a, b), (a, b, b, a), (b, a, a, b), (b, a, b, a), (b, b, a, a)]
    w = np.array([-74 / 5625] + [343 / 45000] * 4 + [56 / 2250] * 6)
    return np.array(bary), w


def shape_functions(xi):
    """Quadratic tetrahedron shape functions and their gradients with
    respect to the reference coordinates ``xi`` (shape ``(n, 3)``)."""
    xi = np.atleast_2d(xi)
    L = np.column_stack([1.0 - xi.sum(axis=1), xi])
    dL = np.array([[-1.0, -1.0, -1.0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    n = len(xi)
    N = np.empty((n, 10))
    dN = np.empty((n, 10, 3))
    for a in range(4):
        N[:, a] = L[:, a] * (2.0 * L[:, a] - 1.0)
        dN[:, a] = (4.0 * L[:, a] - 1.0)[:, None] * dL[a]
    for m, (a, b) in enumerate(((0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3))):
        N[:, 4 + m] = 4.0 * L[:, a] * L[:, b]
        dN[:, 4 + m] = 4.0 * (L[:, a, None] * dL[b] + L[:, b, None] * dL[a])
    return N, dN


_REF = None


def reference_element():
    global _REF
    if _REF is None:
        bary, w = keast_degree4()
        xi = bary[:, 1:]
        N, dN = shape_functions(xi)
        _REF = ReferenceElementT2(xi, w, N, dN)
    return _REF


@dataclass
class Geometry:
    """Reference-configuration data of a batch of cells."""

    X: np.ndarray  # (ne, 10, 3)
    G: np.ndarray  # (ne, nq, 10, 3) dN/dX
    w: np.ndarray  # (ne, nq) quadrature weight times |dX/dxi|
    volume: np.ndarray  # (ne,)


def cell_geometry(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    ref = reference_element()
    J = np.einsum("eai,qaj->eqij", X, ref.dN)
    detJ = T.det(J)
    if np.any(detJ <= 0):
        bad = np.flatnonzero(np.any(detJ <= 0, axis=1))
        raise NonPositiveJacobian(f"{len(bad)} cells with non-positive reference Jacobian", bad)
    G = np.einsum("qaj,eqji->eqai", ref.dN, T.inv(J))
    w = detJ * ref.weights
    return Geometry(X, G, w, w.sum(axis=1))


# ---------------------------------------------------------------------------
# material data per cell


@dataclass
class CellMaterial:
    """Per-cell material and growth data, broadcast from region tables."""

    mu: np.ndarray
    lam: np.ndarray
    mu_f: np.ndarray
    tension_only: np.ndarray
    Fg_inv: np.ndarray  # (ne, 3, 3)
    a0: np.ndarray  # (ne, 3) = Fg^-1 n0

    @classmethod
    def build(cls, region, params_by_region, spec):
        region = np.asarray(region)
        n = len(region)
        Fgi = mat.inverse_growth_tensor(spec)
        out = cls(
            mu=np.empty(n),
            lam=np.empty(n),
            mu_f=np.empty(n),
            tension_only=np.zeros(n, dtype=bool),
            Fg_inv=np.broadcast_to(Fgi, (n, 3, 3)).copy(),
            a0=np.empty((n, 3)),
        )
        for tag, p in params_by_region.items():
            m = region == tag
            out.mu[m] = p.mu0
            out.lam[m] = p.penalty_lambda
            out.mu_f[m] = p.mu_fiber
            out.tension_only[m] = p.tension_only
            out.a0[m] = Fgi @ p.fiber
        return out

    def take(self, idx):
        return CellMaterial(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


@dataclass
class MixedElementState:
    theta: np.ndarray
    p: np.ndarray
    lambda_bar: np.ndarray
    s: np.ndarray


def _ani(lb, cm):
    """Condensed fiber energy, stress and stiffness per cell."""
    d = lb - 1.0
    d = np.where(cm.tension_only, np.maximum(d, 0.0), d)
    k = np.where(cm.tension_only & (lb <= 1.0), 0.0, 2.0 * cm.mu_f)
    return cm.mu_f * d**2, 2.0 * cm.mu_f * d, k


@dataclass
class ElementBatch:
    """Quadrature-point kinematics and condensed fields of a batch of cells."""

    F: np.ndarray
    Finv: np.ndarray
    Je: np.ndarray
    be: np.ndarray
    ne: np.ndarray
    I4e: np.ndarray
    g: np.ndarray  # spatial shape-function gradients (ne, nq, 10, 3)
    mixed: MixedElementState
    psi_iso: np.ndarray  # (ne, nq)
    energies: np.ndarray  # (ne, 3) iso, vol, ani element totals


def deformation_gradient(geom, u):
    """``F = I + sum_a u_a ⊗ grad_X N_a`` at every quadrature point."""
    return np.eye(3) + np.einsum("eai,eqaj->eqij", u, geom.G)


def evaluate_batch(geom, u, cm, cells=None):
    F = deformation_gradient(geom, u)
    detF = T.det(F)
    if np.any(~(detF > 0)):
        bad = np.flatnonzero(np.any(~(detF > 0), axis=1))
        ids = bad if cells is None else np.asarray(cells)[bad]
        raise NonPositiveJacobian(f"inverted elements: {ids[:10].tolist()}", ids)
    Finv = T.inv(F, rtol=0.0)
    Fe = F @ cm.Fg_inv[:, None]
    Je = detF * T.det(cm.Fg_inv)[:, None]
    be = Fe @ np.swapaxes(Fe, -1, -2)
    ne = np.einsum("eqij,ej->eqi", F, cm.a0)
    I4e = np.einsum("eqi,eqi->eq", ne, ne)
    g = np.einsum("eqaA,eqAj->eqaj", geom.G, Finv)

    V = geom.volume
    theta = np.einsum("eq,eq->e", geom.w, Je) / V
    lb = np.einsum("eq,eq->e", geom.w, I4e) / V
    p = cm.lam * (theta - 1.0)
    psi_a, s, _ = _ani(lb, cm)
    psi_iso = 0.5 * cm.mu[:, None] * (np.trace(be, axis1=-2, axis2=-1) - 2.0 * np.log(Je) - 3.0)
    energies = np.column_stack(
        [
            np.einsum("eq,eq->e", geom.w, psi_iso),
            V * 0.5 * cm.lam * (theta - 1.0) ** 2,
            V * psi_a,
        ]
    )
    return ElementBatch(F, Finv, Je, be, ne, I4e, g, MixedElementState(theta, p, lb, s), psi_iso, energies)


def effective_stress(eb, cm):
    """``tau_iso + p Je I + 2 s ne ⊗ ne`` at every quadrature point."""
    I = np.eye(3)
    m = eb.mixed
    return (
        cm.mu[:, None, None, None] * (eb.be - I)
        + (m.p[:, None] * eb.Je)[..., None, None] * I
        + 2.0 * m.s[:, None, None, None] * T.outer(eb.ne, eb.ne)
    )


def internal_force(geom, eb, cm):
    tau = effective_stress(eb, cm)
    return np.einsum("eq,eqij,eqaj->eai", geom.w, tau, eb.g).reshape(len(geom.w), 30)


def stiffness(geom, eb, cm):
    """Consistent element tangents, shape ``(ne, 30, 30)``."""
    ne_, nq = geom.w.shape
    tau = effective_stress(eb, cm)
    m = eb.mixed
    pJ = m.p[:, None] * eb.Je
    alpha = 2.0 * cm.mu[:, None] - 2.0 * pJ  # coefficient of the symmetric identity
    beta = pJ  # coefficient of I ⊗ I
    w = geom.w
    g = eb.g

    # delta_ik terms: (alpha/2) g_a.g_b + g_a.tau.g_b
    tg = np.einsum("eqjl,eqbl->eqbj", tau, g)
    scal = np.einsum("eq,eqaj,eqbj->eab", 0.5 * w * alpha, g, g) + np.einsum("eq,eqaj,eqbj->eab", w, g, tg)
    K = np.einsum("eab,ik->eaibk", scal, np.eye(3))

    gf = g.reshape(ne_, nq, 30)
    Kb = np.matmul(np.swapaxes(gf * (w * beta)[..., None], 1, 2), gf).reshape(ne_, 10, 3, 10, 3)
    Ka = np.matmul(np.swapaxes(gf * (0.5 * w * alpha)[..., None], 1, 2), gf).reshape(ne_, 10, 3, 10, 3)
    K += Kb + np.swapaxes(Ka, 2, 4)

    # element-constant fields: rank-one couplings
    V = geom.volume
    A = np.einsum("eq,eq,eqai->eai", w, eb.Je, g).reshape(ne_, 30)
    ng = np.einsum("eqaj,eqj->eqa", g, eb.ne)
    B = 2.0 * np.einsum("eq,eqa,eqi->eai", w, ng, eb.ne).reshape(ne_, 30)
    _, _, k_ani = _ani(m.lambda_bar, cm)
    K = K.reshape(ne_, 30, 30)
    K += (cm.lam / V)[:, None, None] * A[:, :, None] * A[:, None, :]
    K += (k_ani / V)[:, None, None] * B[:, :, None] * B[:, None, :]
    return K


# single-element conveniences --------------------------------------------------


def _single(X, u, spec, params):
    geom = cell_geometry(X)
    cm = CellMaterial.build(np.zeros(1), {0: params}, spec)
    u = np.asarray(u, dtype=float).reshape(1, 10, 3)
    return geom, u, cm


def element_kinematics(X, u, qp=None):
    """Deformation gradient(s) of one cell at quadrature point ``qp``
    (all points when ``qp`` is None)."""
    geom = cell_geometry(X)
    F = deformation_gradient(geom, np.asarray(u, dtype=float).reshape(1, 10, 3))[0]
    return F if qp is None else F[qp]


def condense_mixed_fields(X, u, spec, params):
    geom, u, cm = _single(X, u, spec, params)
    m = evaluate_batch(geom, u, cm).mixed
    return MixedElementState(float(m.theta[0]), float(m.p[0]), float(m.lambda_bar[0]), float(m.s[0]))


def element_potential(X, u, spec, params):
    geom, u, cm = _single(X, u, spec, params)
    return float(evaluate_batch(geom, u, cm).energies.sum())


def element_residual(X, u, spec, params):
    geom, u, cm = _single(X, u, spec, params)
    return internal_force(geom, evaluate_batch(geom, u, cm), cm)[0]


def element_tangent(X, u, spec, params):
    geom, u, cm = _single(X, u, spec, params)
    return stiffness(geom, evaluate_batch(geom, u, cm), cm)[0]


# ---------------------------------------------------------------------------
# global system


class DofMap:
    """Displacement dof numbering with periodic aliasing and Dirichlet
    elimination.

    Parameters
    ----------
    n_nodes : int
    representative : ndarray, optional
        Node owning each node's dofs (followers point to their leader).
    dirichlet : dict, optional
        ``{(node, component): value}``; keys are mapped to representatives.
    """

    def __init__(self, n_nodes, representative=None, dirichlet=None):
        self.n_nodes = n_nodes
        self.rep = np.arange(n_nodes) if representative is None else np.asarray(representative)
        self.prescribed = {}
        for (node, comp), val in (dirichlet or {}).items():
            key = (int(self.rep[node]), int(comp))
            if key in self.prescribed and self.prescribed[key] != val:
                raise ValueError(f"conflicting prescribed values on node {key[0]} component {comp}")
            self.prescribed[key] = float(val)
        owner = np.zeros((n_nodes, 3), dtype=bool)
        owner[np.unique(self.rep)] = True
        for node, comp in self.prescribed:
            owner[node, comp] = False
        self.eq = np.full((n_nodes, 3), -1, dtype=np.int64)
        self.eq[owner] = np.arange(owner.sum())
        self.eq = self.eq[self.rep]  # followers share their leader's equations
        self.n_free = int(owner.sum())

    @classmethod
    def from_mesh(cls, mesh, periodic=None, fixed_facets=("bottom",), pinned=None):
        rep = None if periodic is None else periodic.representative(mesh.n_nodes)
        bc = {}
        for name in fixed_facets:
            for n in mesh.facet_nodes(name):
                for c in range(3):
                    bc[(int(n), c)] = 0.0
        for (n, c), v in (pinned or {}).items():
            bc[(int(n), int(c))] = float(v)
        return cls(mesh.n_nodes, rep, bc)

    def initial_displacement(self):
        u = np.zeros((self.n_nodes, 3))
        for (node, comp), val in self.prescribed.items():
            u[node, comp] = val
        return u[self.rep]

    def scatter(self, u, du):
        """Return ``u`` updated by the free-dof increment ``du``."""
        inc = np.zeros(self.n_free + 1)
        inc[:-1] = du
        return u + inc[self.eq]


class Assembler:
    """Global residual and sparse tangent for one mesh / dof map.

    The sparsity pattern and the element-to-CSR scatter map are built once;
    accumulation goes through ``np.bincount`` in a fixed order, so results
    are bit-reproducible.
    """

    def __init__(self, mesh, dofmap, params_by_region, growth):
        self.mesh = mesh
        self.dofmap = dofmap
        self.params_by_region = dict(params_by_region)
        self.growth = growth
        self.geom = cell_geometry(mesh.cell_coordinates())
        self.edofs = dofmap.eq[mesh.cells].reshape(mesh.n_cells, 30)
        self._build_pattern()
        self._cm_cache = {}

    def _build_pattern(self):
        e = self.edofs
        rows = np.repeat(e, 30, axis=1).ravel()
        cols = np.tile(e, (1, 30)).ravel()
        valid = (rows >= 0) & (cols >= 0)
        n = self.dofmap.n_free
        key = rows[valid] * n + cols[valid]
        uniq, inv = np.unique(key, return_inverse=True)
        self._kvalid = valid
        self._kmap = inv.ravel()
        self._rows = uniq // n
        self._cols = uniq % n
        self._fvalid = e.ravel() >= 0
        self._fmap = e.ravel()[self._fvalid]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, self._rows + 1, 1)
        self._indptr = np.cumsum(indptr)

    def cell_material(self, g):
        key = float(g)
        if key not in self._cm_cache:
            if len(self._cm_cache) > 4:
                self._cm_cache.clear()
            self._cm_cache[key] = CellMaterial.build(self.mesh.region, self.params_by_region, self.growth.at(g))
        return self._cm_cache[key]

    def batch(self, u, g):
        return evaluate_batch(self.geom, u[self.mesh.cells], self.cell_material(g))

    def force_vector(self, eb, g, f_ext=None):
        """Free-dof residual (internal minus external) from an evaluated batch."""
        fe = internal_force(self.geom, eb, self.cell_material(g))
        r = np.bincount(self._fmap, weights=fe.ravel()[self._fvalid], minlength=self.dofmap.n_free)
        if f_ext is not None:
            r -= f_ext
        return r

    def tangent_matrix(self, eb, g):
        Ke = stiffness(self.geom, eb, self.cell_material(g))
        data = np.bincount(self._kmap, weights=Ke.ravel()[self._kvalid], minlength=len(self._rows))
        n = self.dofmap.n_free
        return sp.csr_matrix((data, self._cols, self._indptr), shape=(n, n))

    def residual(self, u, g, f_ext=None, with_tangent=True):
        """Free-dof residual and, optionally, the CSR tangent."""
        eb = self.batch(u, g)
        r = self.force_vector(eb, g, f_ext)
        if not with_tangent:
            return r
        return r, self.tangent_matrix(eb, g)

    def tangent(self, u, g):
        return self.residual(u, g)[1]

    def energies(self, u, g):
        """Element energies ``(n_cells, 3)`` with columns iso, vol, ani."""
        return self.batch(u, g).energies

    def potential(self, u, g, f_ext=None):
        pi = float(self.energies(u, g).sum())
        if f_ext is not None:
            pi -= float(f_ext @ self.free_values(u))
        return pi

    def free_values(self, u):
        """Displacements of the free dofs, in equation order."""
        out = np.zeros(self.dofmap.n_free)
        m = self.dofmap.eq >= 0
        out[self.dofmap.eq[m]] = u[m]
        return out

    def load_vector(self, nodal_forces):
        """Map a nodal force array ``(n_nodes, 3)`` to the free equations;
        follower loads accumulate on their leaders."""
        eq = self.dofmap.eq.ravel()
        m = eq >= 0
        return np.bincount(eq[m], weights=np.asarray(nodal_forces).ravel()[m], minlength=self.dofmap.n_free)


def assemble(mesh, dofmap, u, spec, params_by_region, f_ext=None):
    """One-shot global residual and tangent (builds a throwaway
    :class:`Assembler`)."""
    asm = Assembler(mesh, dofmap, params_by_region, spec)
    return asm.residual(u, spec.g, f_ext)


def surface_load(mesh, tri, traction):
    """Consistent nodal forces of a dead traction on 6-node triangles.

    ``traction`` maps reference points ``(n, 3)`` to traction vectors.
    """
    pts, wts = triangle_rule()
    L = np.column_stack([1.0 - pts.sum(axis=1), pts])
    Nt = np.column_stack(
        [L[:, a] * (2 * L[:, a] - 1) for a in range(3)]
        + [4 * L[:, 0] * L[:, 1], 4 * L[:, 1] * L[:, 2], 4 * L[:, 2] * L[:, 0]]
    )
    X = mesh.nodes[tri]  # (nt, 6, 3)
    area2 = np.linalg.norm(np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), axis=1)
    xq = np.einsum("qa,tai->tqi", Nt, X)
    t = traction(xq.reshape(-1, 3)).reshape(xq.shape)
    fe = np.einsum("q,t,qa,tqi->tai", wts, area2, Nt, t)
    out = np.zeros((mesh.n_nodes, 3))
    np.add.at(out, tri.ravel(), fe.reshape(-1, 3))
    return out


def triangle_rule(n=5):
    """Collapsed Gauss rule on the unit triangle (weights sum to 1/2)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    a, b = np.meshgrid(x, x, indexing="ij")
    wa, wb = np.meshgrid(w, w, indexing="ij")
    xi = a.ravel()
    eta = (b * (1.0 - a)).ravel()
    return np.column_stack([xi, eta]), (wa * wb * (1.0 - a)).ravel()
