"""Point-level constitutive model for grown, fiber-reinforced solids.

The deformation gradient is split multiplicatively, ``F = Fe · Fg``, and
the stored energy is a function of the elastic part only::

    psi = lam/2 (Je - 1)^2                    volumetric penalty
        + mu0/2 (I1e - 2 ln Je - 3)           neo-Hookean
        + mu_f (I4e - 1)^2                    fiber penalty

with ``Ce = Fe^T Fe``, ``Je = det Fe``, ``I1e = tr Ce`` and
``I4e = n0 · Ce · n0``.  Stresses and moduli are returned in the spatial
(Kirchhoff) description, which is what the element uses; the Lagrangian
description is kept for cross-checking.

Every function broadcasts over leading batch dimensions.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensors as T
from .errors import InvalidGrowth, InvalidMaterial, NonPositiveJacobian

__all__ = [
    "MaterialParams",
    "GrowthSpec",
    "KinematicState",
    "StressModuli",
    "make_growth_tensor",
    "inverse_growth_tensor",
    "elastic_decompose",
    "evaluate",
    "evaluate_lagrangian",
    "total_pullback",
    "energy",
    "psi_vol",
    "dpsi_vol",
    "psi_ani",
    "dpsi_ani",
    "ddpsi_ani",
]


@dataclass(frozen=True)
class MaterialParams:
    mu0: float
    penalty_lambda: float
    mu_fiber: float = 0.0
    n0: tuple = (0.0, 1.0, 0.0)
    tension_only: bool = False

    def __post_init__(self):
        if not self.mu0 > 0:
            raise InvalidMaterial(f"mu0 must be positive, got {self.mu0}")
        if not self.penalty_lambda > 0:
            raise InvalidMaterial(f"penalty_lambda must be positive, got {self.penalty_lambda}")
        if not self.mu_fiber >= 0:
            raise InvalidMaterial(f"mu_fiber must be non-negative, got {self.mu_fiber}")
        n0 = np.asarray(self.n0, dtype=float)
        if n0.shape != (3,) or abs(np.linalg.norm(n0) - 1.0) > 1e-12:
            raise InvalidMaterial(f"n0 must be a unit 3-vector, got {self.n0}")
        object.__setattr__(self, "n0", tuple(float(c) for c in n0))

    @property
    def fiber(self):
        return np.asarray(self.n0)


@dataclass(frozen=True)
class GrowthSpec:
    """Prescribed growth: ``isotropic`` (``(1+g) I``) or ``planar``
    (in-plane growth, none along the membrane normal ``m0``)."""

    kind: str = "planar"
    g: float = 0.0
    m0: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("isotropic", "planar"):
            raise InvalidGrowth(f"unknown growth kind {self.kind!r}")
        if not 1.0 + self.g > 0:
            raise InvalidGrowth(f"growth requires 1 + g > 0, got g = {self.g}")
        m0 = np.asarray(self.m0, dtype=float)
        if self.kind == "planar" and (m0.shape != (3,) or abs(np.linalg.norm(m0) - 1.0) > 1e-12):
            raise InvalidGrowth(f"m0 must be a unit 3-vector, got {self.m0}")
        object.__setattr__(self, "m0", tuple(float(c) for c in m0))

    def at(self, g):
        return GrowthSpec(self.kind, float(g), self.m0)


def make_growth_tensor(spec):
    if not 1.0 + spec.g > 0:
        raise InvalidGrowth(f"growth requires 1 + g > 0, got g = {spec.g}")
    Fg = (1.0 + spec.g) * np.eye(3)
    if spec.kind == "planar":
        m0 = np.asarray(spec.m0)
        Fg -= spec.g * np.outer(m0, m0)
    return Fg


def inverse_growth_tensor(spec):
    # direct inversion; the closed form quoted in the growth literature
    # does not reduce to the identity as g -> 0
    return T.inv(make_growth_tensor(spec))


@dataclass
class KinematicState:
    """Elastic kinematics at a material point (or a stack of points).

    ``n`` is the fully convected fiber ``F · n0`` and ``ne = Fe · n0`` the
    elastic one; ``I4e = |ne|^2``.
    """

    F: np.ndarray
    Fg: np.ndarray
    Fe: np.ndarray
    Ce: np.ndarray
    Je: np.ndarray
    I1e: np.ndarray
    I4e: np.ndarray
    n: np.ndarray
    ne: np.ndarray
    n0: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    @property
    def be(self):
        return self.Fe @ np.swapaxes(self.Fe, -1, -2)


def elastic_decompose(F, spec, n0=(0.0, 1.0, 0.0)):
    """Split ``F`` into elastic and growth parts for the growth ``spec``.

    Raises
    ------
    NonPositiveJacobian
        If ``det F <= 0`` or ``det Fe <= 0`` anywhere in the stack.
    """
    F = np.asarray(F, dtype=float)
    n0 = np.asarray(n0, dtype=float)
    J = T.det(F)
    if np.any(~(J > 0)):
        raise NonPositiveJacobian(f"det F = {np.min(J):.3e} <= 0")
    Fg = make_growth_tensor(spec)
    Fe = F @ inverse_growth_tensor(spec)
    Je = T.det(Fe)
    if np.any(~(Je > 0)):
        raise NonPositiveJacobian(f"det Fe = {np.min(Je):.3e} <= 0")
    Ce = np.swapaxes(Fe, -1, -2) @ Fe
    ne = Fe @ n0
    return KinematicState(
        F=F,
        Fg=np.broadcast_to(Fg, F.shape).copy(),
        Fe=Fe,
        Ce=Ce,
        Je=Je,
        I1e=np.trace(Ce, axis1=-2, axis2=-1),
        I4e=np.einsum("...i,...i->...", ne, ne),
        n=F @ n0,
        ne=ne,
        n0=n0,
    )


# scalar energy pieces, shared with the mixed element


def psi_vol(J, lam):
    return 0.5 * lam * (J - 1.0) ** 2


def dpsi_vol(J, lam):
    return lam * (J - 1.0)


def psi_ani(I4, mu_f, tension_only=False):
    d = I4 - 1.0
    if tension_only:
        d = np.maximum(d, 0.0)
    return mu_f * d**2


def dpsi_ani(I4, mu_f, tension_only=False):
    d = I4 - 1.0
    if tension_only:
        d = np.maximum(d, 0.0)
    return 2.0 * mu_f * d


def ddpsi_ani(I4, mu_f, tension_only=False):
    I4 = np.asarray(I4, dtype=float)
    out = np.full_like(I4, 2.0 * mu_f)
    if tension_only:
        out = np.where(I4 > 1.0, out, 0.0)
    return out


def psi_iso(I1, J, mu0):
    return 0.5 * mu0 * (I1 - 2.0 * np.log(J) - 3.0)


@dataclass
class StressModuli:
    tau_vol: np.ndarray
    tau_iso: np.ndarray
    tau_ani: np.ndarray
    c_vol: np.ndarray
    c_iso: np.ndarray
    c_ani: np.ndarray
    energies: tuple

    @property
    def tau(self):
        return self.tau_vol + self.tau_iso + self.tau_ani

    @property
    def c(self):
        return self.c_vol + self.c_iso + self.c_ani

    @property
    def psi(self):
        return sum(self.energies)


def energy(params, kin):
    """Energy parts ``(psi_vol, psi_iso, psi_ani)``."""
    return (
        psi_vol(kin.Je, params.penalty_lambda),
        psi_iso(kin.I1e, kin.Je, params.mu0),
        psi_ani(kin.I4e, params.mu_fiber, params.tension_only),
    )


def evaluate(params, kin):
    """Kirchhoff stress and spatial moduli, split into their three parts."""
    lam, mu, muf = params.penalty_lambda, params.mu0, params.mu_fiber
    Je = np.asarray(kin.Je)
    I = np.broadcast_to(T.IDENTITY, Je.shape + (3, 3))
    II = T.symmetric_identity4()

    p = Je * dpsi_vol(Je, lam)
    kappa = lam * Je**2
    tau_vol = p[..., None, None] * I
    c_vol = (p + kappa)[..., None, None, None, None] * T.dyad(I, I) - 2.0 * p[..., None, None, None, None] * II

    tau_iso = mu * (kin.be - I)
    c_iso = np.broadcast_to(2.0 * mu * II, Je.shape + (3, 3, 3, 3)).copy()

    nn = T.outer(kin.ne, kin.ne)
    s = 2.0 * dpsi_ani(kin.I4e, muf, params.tension_only)
    k = 4.0 * ddpsi_ani(kin.I4e, muf, params.tension_only)
    tau_ani = s[..., None, None] * nn
    c_ani = k[..., None, None, None, None] * T.dyad(nn, nn)

    return StressModuli(tau_vol, tau_iso, tau_ani, c_vol, c_iso, c_ani, energy(params, kin))


def evaluate_lagrangian(params, kin):
    """Elastic second Piola-Kirchhoff stress and moduli on the intermediate
    configuration.

    Returns
    -------
    S_parts, C_parts : tuple of ndarray
        ``(vol, iso, ani)`` stress parts and moduli parts.
    """
    lam, mu, muf = params.penalty_lambda, params.mu0, params.mu_fiber
    Je = np.asarray(kin.Je)
    Ci = T.inv(kin.Ce)
    I = np.broadcast_to(T.IDENTITY, Je.shape + (3, 3))
    IICi = T.symmetric_identity4(Ci)

    p = Je * dpsi_vol(Je, lam)
    kappa = lam * Je**2
    S_vol = p[..., None, None] * Ci
    C_vol = (p + kappa)[..., None, None, None, None] * T.dyad(Ci, Ci) - 2.0 * p[..., None, None, None, None] * IICi

    S_iso = mu * (I - Ci)
    C_iso = 2.0 * mu * IICi

    n0 = np.broadcast_to(kin.n0, Je.shape + (3,))
    NN = T.outer(n0, n0)
    s = 2.0 * dpsi_ani(kin.I4e, muf, params.tension_only)
    k = 4.0 * ddpsi_ani(kin.I4e, muf, params.tension_only)
    S_ani = s[..., None, None] * NN
    C_ani = k[..., None, None, None, None] * T.dyad(NN, NN)
    return (S_vol, S_iso, S_ani), (C_vol, C_iso, C_ani)


def total_pullback(kin, S_e, C_e):
    """Map elastic (intermediate) stress and moduli to the reference
    configuration: ``S = Fg^-1 Se Fg^-T`` and
    ``C = [Fg^-1 ⊗̄ Fg^-1] : Ce : [Fg^-T ⊗̄ Fg^-T]``."""
    Fgi = T.inv(kin.Fg)
    S = T.push_forward_stress(S_e, Fgi)
    C = T.push_forward_moduli(C_e, Fgi)
    return S, C
