"""Structured bilayer meshes of 10-node tetrahedra.

Local node ordering follows VTK_QUADRATIC_TETRA: corners 0-3, then the
midpoints of edges (0,1), (1,2), (0,2), (0,3), (1,3), (2,3).  Boundary
triangles are 6-node (corners, then midpoints of (0,1), (1,2), (2,0)) and
oriented with outward normals.
"""

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidGeometry, MeshValidationError, PairingFailure

SUBSTRATE, FILM = 0, 1
REGION_NAMES = {SUBSTRATE: "substrate", FILM: "film"}
FACET_NAMES = ("bottom", "top", "x_min", "x_max", "y_min", "y_max")

TET_EDGES = ((0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3))
# faces opposite to each corner, listed so that the normal points away from it
TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))
AXES = {"x": 0, "y": 1, "z": 2}


@dataclass
class Mesh:
    nodes: np.ndarray
    cells: np.ndarray
    region: np.ndarray
    facets: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def bounds(self):
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    def cell_coordinates(self):
        return self.nodes[self.cells]

    def facet_nodes(self, name):
        return np.unique(self.facets[name])

    def cells_in(self, region):
        return np.flatnonzero(self.region == region)


def _kuhn_tets():
    """Six tetrahedra of the unit cube sharing the (0,0,0)-(1,1,1) diagonal,
    each positively oriented."""
    tets = []
    for perm in itertools.permutations(range(3)):
        v = [np.zeros(3, dtype=int)]
        for axis in perm:
            nxt = v[-1].copy()
            nxt[axis] = 1
            v.append(nxt)
        vol = np.linalg.det(np.array([v[1] - v[0], v[2] - v[0], v[3] - v[0]], dtype=float))
        if vol < 0:
            v[1], v[2] = v[2], v[1]
        tets.append(np.array(v))
    return np.array(tets)  # (6, 4, 3) cube-corner offsets


def _layer_coordinates(length, n):
    return np.linspace(0.0, length, 2 * n + 1)


def build_bilayer_box(Lx, Ly, H, h_film, nx, ny, nz_subs, nz_film):
    """Structured film-on-substrate box ``[0,Lx] x [0,Ly] x [0,H]``.

    The substrate occupies ``z < H - h_film`` and is split into ``nz_subs``
    layers of boxes, the film into ``nz_film``; each box is cut into six
    tetrahedra along its main diagonal so that opposite faces of the domain
    carry translated copies of the same surface triangulation.
    """
    if min(Lx, Ly, H) <= 0:
        raise InvalidGeometry(f"box dimensions must be positive, got {(Lx, Ly, H)}")
    if not 0 < h_film < H:
        raise InvalidGeometry(f"film thickness {h_film} does not fall on a grid plane inside (0, {H})")
    counts = (nx, ny, nz_subs, nz_film)
    if min(counts) < 1 or any(int(c) != c for c in counts):
        raise InvalidGeometry(f"cell counts must be positive integers, got {counts}")
    nx, ny, nz_subs, nz_film = (int(c) for c in counts)
    nz = nz_subs + nz_film
    H_s = H - h_film

    xs = _layer_coordinates(Lx, nx)
    ys = _layer_coordinates(Ly, ny)
    zs = np.concatenate([_layer_coordinates(H_s, nz_subs), H_s + _layer_coordinates(h_film, nz_film)[1:]])
    mx, my, mz = len(xs), len(ys), len(zs)
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def index(i, j, k):
        return i + mx * (j + my * k)

    kuhn = _kuhn_tets()
    bk, bj, bi = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    base = 2 * np.column_stack([bi.ravel(), bj.ravel(), bk.ravel()])  # refined-grid box origins

    cells = np.empty((len(base) * 6, 10), dtype=np.int64)
    region = np.empty(len(base) * 6, dtype=np.int8)
    for t, tet in enumerate(kuhn):
        corners = base[:, None, :] + 2 * tet[None, :, :]  # (nbox, 4, 3)
        mids = np.stack([(corners[:, a] + corners[:, b]) // 2 for a, b in TET_EDGES], axis=1)
        allv = np.concatenate([corners, mids], axis=1)
        cells[t::6] = index(allv[..., 0], allv[..., 1], allv[..., 2])
    box_k = np.repeat(base[:, 2] // 2, 6)
    region[:] = np.where(box_k >= nz_subs, FILM, SUBSTRATE)

    mesh = Mesh(
        nodes=nodes,
        cells=cells,
        region=region,
        meta={
            "Lx": float(Lx),
            "Ly": float(Ly),
            "H": float(H),
            "h_film": float(h_film),
            "counts": [nx, ny, nz_subs, nz_film],
            "grid_shape": [mx, my, mz],
        },
    )
    mesh.facets = _classify_boundary(mesh)
    return mesh


def boundary_faces(cells):
    """All boundary faces as ``(n, 6)`` quadratic triangles with outward
    orientation (faces used by exactly one cell)."""
    edge_id = {e: 4 + m for m, e in enumerate(TET_EDGES)}
    edge_id.update({(b, a): v for (a, b), v in list(edge_id.items())})
    tri = []
    for f in TET_FACES:
        mids = [edge_id[(f[0], f[1])], edge_id[(f[1], f[2])], edge_id[(f[2], f[0])]]
        tri.append(cells[:, list(f) + mids])
    tri = np.concatenate(tri)
    key = np.sort(tri[:, :3], axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return tri[cnt[inv.ravel()] == 1]


def _classify_boundary(mesh):
    tri = boundary_faces(mesh.cells)
    lo, hi = mesh.bounds
    tol = 1e-9 * np.max(hi - lo)
    xyz = mesh.nodes[tri[:, :3]]  # (n, 3 corners, 3)
    facets = {}
    for name, axis, value in (
        ("bottom", 2, lo[2]),
        ("top", 2, hi[2]),
        ("x_min", 0, lo[0]),
        ("x_max", 0, hi[0]),
        ("y_min", 1, lo[1]),
        ("y_max", 1, hi[1]),
    ):
        on = np.all(np.abs(xyz[:, :, axis] - value) <= tol, axis=1)
        facets[name] = tri[on]
    return facets


def triangle_areas(mesh, tri):
    x = mesh.nodes[tri[:, :3]]
    return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)


@dataclass
class PeriodicPairs:
    """Follower-to-leader node pairs, ``pairs[k] = (follower, leader, axis)``."""

    pairs: np.ndarray
    translation: dict

    def __len__(self):
        return len(self.pairs)

    def representative(self, n_nodes):
        """Map every node to the node owning its degrees of freedom,
        following chains such as ``(Lx, Ly) -> (0, Ly) -> (0, 0)``."""
        rep = np.arange(n_nodes)
        direct = {}
        for f, l, _ in self.pairs:
            if int(f) in direct:
                raise PairingFailure(f"node {f} is a follower twice", [f])
            direct[int(f)] = int(l)
        for f in direct:
            seen = {f}
            r = direct[f]
            while r in direct:
                r = direct[r]
                if r in seen:
                    raise PairingFailure(f"periodic chain through node {f} is a cycle", [f])
                seen.add(r)
            rep[f] = r
        return rep


def find_periodic_pairs(mesh, axes=("x", "y"), tol=1e-8):
    """Pair every node on the max face of each periodic axis with its
    translate on the min face."""
    axes = tuple(axes)
    lo, hi = mesh.bounds
    scale = float(np.max(hi - lo))
    pairs, translation = [], {}
    taken = np.zeros(mesh.n_nodes, dtype=bool)
    for name in axes:
        axis = AXES[name]
        others = [d for d in range(3) if d != axis]
        tol_abs = tol * scale
        lead = np.flatnonzero(np.abs(mesh.nodes[:, axis] - lo[axis]) <= tol_abs)
        follow = np.flatnonzero(np.abs(mesh.nodes[:, axis] - hi[axis]) <= tol_abs)
        tree = cKDTree(mesh.nodes[lead][:, others])
        dist, idx = tree.query(mesh.nodes[follow][:, others])
        bad = follow[dist > tol_abs]
        if len(bad) or len(lead) != len(follow):
            raise PairingFailure(f"{len(bad)} unmatched nodes on the {name}_max face", bad)
        # nodes already following on an earlier axis keep that single link
        keep = ~taken[follow]
        pairs.append(np.column_stack([follow[keep], lead[idx][keep], np.full(keep.sum(), axis)]))
        taken[follow] = True
        translation[name] = float(hi[axis] - lo[axis])
    arr = np.concatenate(pairs) if pairs else np.empty((0, 3), dtype=np.int64)
    return PeriodicPairs(arr.astype(np.int64), translation)


def validate_mesh(mesh, tol=1e-12):
    """Check the mesh invariants; returns a list of problem descriptions
    (empty when the mesh is valid)."""
    from .fem import reference_element  # local import: fem depends on mesh

    problems = []
    X = mesh.cell_coordinates()
    ref = reference_element()
    J = np.einsum("eai,qaj->eqij", X, ref.dN)
    detJ = np.linalg.det(J)
    for c in np.flatnonzero(np.any(detJ <= 0, axis=1)):
        problems.append(f"cell {c}: non-positive Jacobian ({detJ[c].min():.3e})")

    h = np.linalg.norm(X[:, 1] - X[:, 0], axis=1)
    for m, (a, b) in enumerate(TET_EDGES):
        off = np.linalg.norm(X[:, 4 + m] - 0.5 * (X[:, a] + X[:, b]), axis=1)
        for c in np.flatnonzero(off > 1e-12 * np.maximum(h, 1.0) + tol):
            problems.append(f"cell {c}: edge node {4 + m} is off the edge midpoint by {off[c]:.3e}")

    bad_tag = ~np.isin(mesh.region, list(REGION_NAMES))
    for c in np.flatnonzero(bad_tag):
        problems.append(f"cell {c}: unknown region tag {mesh.region[c]}")

    if detJ.min() > 0:
        tri = boundary_faces(mesh.cells)
        keys = {}
        for name, faces in mesh.facets.items():
            for f in faces:
                k = tuple(sorted(f[:3]))
                keys[k] = keys.get(k, 0) + 1
        bnd = {tuple(sorted(f[:3])) for f in tri}
        missing = bnd - set(keys)
        extra = set(keys) - bnd
        twice = [k for k, v in keys.items() if v > 1]
        if missing:
            problems.append(f"{len(missing)} boundary triangles belong to no facet set")
        if extra:
            problems.append(f"{len(extra)} facet triangles are not on the boundary")
        if twice:
            problems.append(f"{len(twice)} boundary triangles belong to several facet sets")
    return problems


def check_mesh(mesh):
    problems = validate_mesh(mesh)
    if problems:
        raise MeshValidationError("; ".join(problems[:10]))


# native JSON container


def mesh_to_dict(mesh):
    return {
        "format": "morphofem-mesh",
        "version": 1,
        "nodes": mesh.nodes.tolist(),
        "cells": mesh.cells.tolist(),
        "region": [REGION_NAMES[int(r)] for r in mesh.region],
        "facets": {k: v.tolist() for k, v in mesh.facets.items()},
        "meta": mesh.meta,
    }


def mesh_from_dict(data):
    if data.get("format") != "morphofem-mesh":
        raise MeshValidationError("not a morphofem mesh document")
    names = {v: k for k, v in REGION_NAMES.items()}
    return Mesh(
        nodes=np.asarray(data["nodes"], dtype=float).reshape(-1, 3),
        cells=np.asarray(data["cells"], dtype=np.int64).reshape(-1, 10),
        region=np.array([names[r] for r in data["region"]], dtype=np.int8),
        facets={k: np.asarray(v, dtype=np.int64).reshape(-1, 6) for k, v in data["facets"].items()},
        meta=dict(data.get("meta", {})),
    )


def write_mesh_json(mesh, path):
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(mesh), fh)


def read_mesh_json(path):
    with open(path) as fh:
        return mesh_from_dict(json.load(fh))


def write_vtu_mesh(mesh, path):
    from .vtu import write_vtu

    write_vtu(path, mesh.nodes, mesh.cells, cell_data={"region": mesh.region.astype(np.int32)})
