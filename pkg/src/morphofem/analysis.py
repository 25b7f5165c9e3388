"""Post-processing: layer energies, displacement probes, bifurcation
detection, wrinkle wavelength, VTU and CSV output."""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import NoDominantMode
from .mesh import FILM, REGION_NAMES, SUBSTRATE
from .vtu import write_vtu

ENERGY_PARTS = ("iso", "vol", "ani")
CSV_COLUMNS = (
    "g",
    "dt",
    "newton_iters",
    "wA",
    "wB",
    "wC",
    "film_iso",
    "film_vol",
    "film_ani",
    "substrate_iso",
    "substrate_vol",
    "substrate_ani",
    "residual_norm",
    "total_energy",
)

PROBE_RTOL = 1e-3  # probe divergence threshold, fraction of the total height
KINK_RATIO = 10.0  # energy-curvature jump over its pre-critical median


@dataclass
class EnergyBreakdown:
    film: tuple  # (iso, vol, ani) totals
    substrate: tuple

    def as_dict(self):
        out = {}
        for layer in ("film", "substrate"):
            for part, v in zip(ENERGY_PARTS, getattr(self, layer)):
                out[f"{layer}_{part}"] = float(v)
        return out

    @property
    def total(self):
        return float(sum(self.film) + sum(self.substrate))


def layer_energies(problem, u, g):
    """Quadrature sums of the condensed energy parts per layer."""
    E = problem.assembler.energies(u, g)
    region = problem.mesh.region
    film = E[region == FILM].sum(axis=0)
    subs = E[region == SUBSTRATE].sum(axis=0)
    return EnergyBreakdown(tuple(float(v) for v in film), tuple(float(v) for v in subs))


# ---------------------------------------------------------------------------
# probes


def _triangle_basis(l1, l2):
    l0 = 1.0 - l1 - l2
    return np.array([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0])


class ProbeSet:
    """Vertical displacement at points of the top surface, interpolated with
    the quadratic basis of the containing top triangle."""

    def __init__(self, mesh, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
        tri = mesh.facets["top"]
        xy = mesh.nodes[tri[:, :3], :2]
        self.nodes = np.empty((len(self.points), 6), dtype=np.int64)
        self.weights = np.empty((len(self.points), 6))
        for k, p in enumerate(self.points):
            a, b, c = xy[:, 0], xy[:, 1], xy[:, 2]
            T = np.stack([b - a, c - a], axis=-1)  # (nt, 2, 2)
            lam = np.linalg.solve(T, (p - a)[..., None])[..., 0]
            l0 = 1.0 - lam.sum(axis=1)
            inside = np.min(np.column_stack([lam, l0]), axis=1)
            t = int(np.argmax(inside))
            if inside[t] < -1e-9:
                raise ValueError(f"probe point {p} is not on the top surface")
            self.nodes[k] = tri[t]
            self.weights[k] = _triangle_basis(*lam[t])

    @classmethod
    def for_wavelength(cls, mesh, wavelength, axis="y"):
        """Points A, B, C at 0, wavelength/4, wavelength/2 along the top
        centreline in ``axis``."""
        lo, hi = mesh.bounds
        mid = 0.5 * (lo + hi)
        offs = np.array([0.0, 0.25, 0.5]) * wavelength
        if axis == "y":
            pts = np.column_stack([np.full(3, mid[0]), lo[1] + offs])
        else:
            pts = np.column_stack([lo[0] + offs, np.full(3, mid[1])])
        return cls(mesh, pts)

    def values(self, u, component=2):
        return np.einsum("ka,ka->k", self.weights, np.asarray(u)[self.nodes, component])


def probe_divergence(probe_history, H, rtol=PROBE_RTOL):
    """True once the probes have separated by more than ``rtol * H``."""
    if not probe_history or not len(probe_history[-1]):
        return False
    w = np.asarray(probe_history[-1])
    return bool(np.ptp(w) > rtol * H)


# ---------------------------------------------------------------------------
# bifurcations


@dataclass
class BifurcationEvent:
    g: float
    index: int  # accepted-step index
    mode: int  # 1 for the first buckling, 2 for the next, ...
    criterion: str
    confirmed: bool


def energy_curvature(g, E):
    """Discrete second derivative of ``E(g)`` at interior points (index
    ``1..n-2``), valid on non-uniform steps."""
    g = np.asarray(g, dtype=float)
    E = np.asarray(E, dtype=float)
    s = np.diff(E) / np.diff(g)
    return np.diff(s) / (0.5 * (g[2:] - g[:-2]))


def energy_kinks(g, E, start=0, ratio=KINK_RATIO, baseline=None):
    """Indices ``k`` (into ``g``) where the energy curvature changes sign and
    exceeds ``ratio`` times the median magnitude of the curvature over
    ``[start, k)``."""
    c = energy_curvature(g, E)
    out = []
    for j in range(1, len(c)):
        k = j + 1
        if k <= start + 2:
            continue
        ref = np.abs(c[max(start, 0) : j]) if baseline is None else np.abs(baseline)
        if ref.size < 2:
            continue
        med = np.median(ref)
        if np.sign(c[j]) != np.sign(c[j - 1]) and abs(c[j]) > ratio * med:
            out.append(k)
    return out


def detect_bifurcations(g, probes, energy, H, rtol=PROBE_RTOL, ratio=KINK_RATIO, confirm_window=3, gap=5):
    """Bifurcation events from probe histories and the total energy.

    The first event is the first step at which the probes A, B, C separate
    by more than ``rtol * H``; it is marked confirmed when an energy kink
    lies within ``confirm_window`` steps.  Later events are energy kinks at
    least ``gap`` steps after the previous event.
    """
    g = np.asarray(g, dtype=float)
    if len(g) < 3:
        return []
    w = np.asarray(probes, dtype=float)
    spread = np.ptp(w, axis=1)
    hits = np.flatnonzero(spread > rtol * H)
    if not len(hits):
        return []
    k1 = int(hits[0])
    pre = energy_curvature(g[: k1 + 1], energy[: k1 + 1])
    kinks = energy_kinks(g, energy, ratio=ratio, baseline=pre if pre.size >= 2 else None)
    confirmed = any(abs(k - k1) <= confirm_window for k in kinks)
    events = [BifurcationEvent(float(g[k1]), k1, 1, "probe", confirmed)]
    last = k1
    for k in kinks:
        if k >= last + gap:
            post = energy_curvature(g[last + 1 : k], energy[last + 1 : k])
            if post.size >= 2 and abs(energy_curvature(g[k - 1 : k + 2], energy[k - 1 : k + 2])[0]) > ratio * np.median(
                np.abs(post)
            ):
                events.append(BifurcationEvent(float(g[k]), k, len(events) + 1, "energy", True))
                last = k
    return events


def kink_magnitude(g, E, index, dg):
    """Change of slope ``dE/dg`` across ``g[index]``, from secants over a
    growth window ``dg`` on each side (``E`` linearly interpolated)."""
    g = np.asarray(g, dtype=float)
    E = np.asarray(E, dtype=float)
    gc = g[index]
    lo = max(gc - dg, g[0])
    hi = min(gc + dg, g[-1])
    if not (lo < gc < hi):
        raise ValueError("kink window extends past the recorded history")
    before = (E[index] - np.interp(lo, g, E)) / (gc - lo)
    after = (np.interp(hi, g, E) - E[index]) / (hi - gc)
    return float(after - before)


# ---------------------------------------------------------------------------
# wavelength


def dominant_wavelength(samples, length, ratio=3.0):
    """Wavelength of the dominant Fourier mode of uniformly spaced samples
    covering ``length`` (endpoint excluded)."""
    w = np.asarray(samples, dtype=float)
    w = w - w.mean()
    n = len(w)
    win = np.hanning(n + 1)[:-1]  # periodic Hann window
    spec = np.abs(np.fft.rfft(w * win))[1:]
    if spec.size < 3 or not np.any(spec > 0):
        raise NoDominantMode("flat signal")
    k = int(np.argmax(spec))
    if spec[k] < ratio * np.median(spec):
        raise NoDominantMode(f"peak {spec[k]:.3e} below {ratio} x median {np.median(spec):.3e}")
    shift = 0.0
    if 0 < k < spec.size - 1 and np.all(spec[k - 1 : k + 2] > 0):
        a, b, c = np.log(spec[k - 1 : k + 2])
        den = a - 2 * b + c
        if den < 0:
            shift = 0.5 * (a - c) / den
    return length / (k + 1 + shift)


def centerline_deflection(mesh, u, direction="y", spacing=None):
    """Vertical displacement of the top surface along its centreline."""
    lo, hi = mesh.bounds
    axis = 1 if direction == "y" else 0
    L = hi[axis] - lo[axis]
    if spacing is None:
        counts = mesh.meta.get("counts", [1, 1])
        h = L / counts[axis]
        spacing = 0.5 * h
    n = int(np.ceil(L / spacing))
    s = lo[axis] + L * np.arange(n) / n
    mid = 0.5 * (lo + hi)
    pts = np.column_stack([np.full(n, mid[0]), s]) if axis == 1 else np.column_stack([s, np.full(n, mid[1])])
    return s, ProbeSet(mesh, pts).values(u), L


def extract_wavelength(mesh, u, direction="y", spacing=None):
    _, w, L = centerline_deflection(mesh, u, direction, spacing)
    return dominant_wavelength(w, L)


# ---------------------------------------------------------------------------
# output


def write_fields_vtu(problem, u, g, path):
    """Displacements, condensed fields, region tags and energy densities."""
    asm = problem.assembler
    try:
        eb = asm.batch(u, g)
    except Exception as exc:
        raise OSError(f"{path}: cannot evaluate fields for output: {exc}") from exc
    m = eb.mixed
    vol = asm.geom.volume
    cell = {
        "pressure": m.p,
        "theta": m.theta,
        "s": m.s,
        "lambda_bar": m.lambda_bar,
        "region": problem.mesh.region.astype(np.int32),
    }
    for j, part in enumerate(ENERGY_PARTS):
        cell[f"psi_{part}"] = eb.energies[:, j] / vol
    try:
        write_vtu(
            path,
            problem.mesh.nodes,
            problem.mesh.cells,
            point_data={"displacement": np.asarray(u)},
            cell_data=cell,
            field_data={"g": g},
        )
    except OSError as exc:
        raise OSError(f"{path}: {exc}") from exc


def timeseries_rows(records):
    rows = []
    for r in records:
        if not r.converged:
            continue
        w = list(r.probes) + [float("nan")] * (3 - len(r.probes))
        e = r.energies
        row = [r.g, r.dt, r.iterations, *w[:3]]
        row += [e.get(f"{layer}_{p}", float("nan")) for layer in ("film", "substrate") for p in ENERGY_PARTS]
        row += [r.residuals[-1] if r.residuals else float("nan"), sum(e.values()) if e else float("nan")]
        rows.append(row)
    return rows


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_timeseries_csv(records, path):
    """One row per accepted step; floats written with 17 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in timeseries_rows(records):
        writer.writerow([_fmt(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_timeseries_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.empty((0, len(header)))
    return {name: data[:, j] for j, name in enumerate(header)}


__all__ = [
    "EnergyBreakdown",
    "layer_energies",
    "ProbeSet",
    "probe_divergence",
    "BifurcationEvent",
    "detect_bifurcations",
    "energy_kinks",
    "kink_magnitude",
    "dominant_wavelength",
    "extract_wavelength",
    "write_fields_vtu",
    "write_timeseries_csv",
    "read_timeseries_csv",
    "REGION_NAMES",
]
