"""Independent reference computations shared by the test modules.

Nothing here calls into the package's constitutive or element code; the
energy is written out in plain numpy on ``Fe = F Fg^-1``.
"""

import numpy as np
from scipy.optimize import brentq

EZ = (0.0, 0.0, 1.0)


def growth_tensor(kind, g, m0=EZ):
    m0 = np.asarray(m0, dtype=float)
    Fg = (1 + g) * np.eye(3)
    if kind == "planar":
        Fg -= g * np.outer(m0, m0)
    return Fg


def oracle_energy(F, params, kind, g, m0=EZ):
    Fe = F @ np.linalg.inv(growth_tensor(kind, g, m0))
    Ce = Fe.T @ Fe
    Je = np.linalg.det(Fe)
    n0 = np.asarray(params.n0)
    e4 = n0 @ Ce @ n0 - 1
    if params.tension_only:
        e4 = max(e4, 0.0)
    return (
        0.5 * params.penalty_lambda * (Je - 1) ** 2
        + 0.5 * params.mu0 * (np.trace(Ce) - 2 * np.log(Je) - 3)
        + params.mu_fiber * e4**2
    )


def fd_kirchhoff(F, params, kind, g, h=1e-6):
    """``tau = dpsi/dF F^T`` from central differences of the oracle energy."""
    P = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            d = np.zeros((3, 3))
            d[i, j] = h
            P[i, j] = (oracle_energy(F + d, params, kind, g) - oracle_energy(F - d, params, kind, g)) / (2 * h)
    return P @ F.T


def fd_spatial_moduli(tau_of, F, h=1e-6):
    """Spatial moduli from a stress function ``tau_of(F)``.

    Perturbing ``F -> (I + h E_kl) F`` gives the velocity-gradient
    derivative ``D``; removing the convective terms of the Truesdell rate
    leaves ``c_ijkl = D_ijkl - delta_ik tau_lj - tau_il delta_jk``.
    """
    tau = tau_of(F)
    D = np.zeros((3, 3, 3, 3))
    for k in range(3):
        for l in range(3):
            E = np.zeros((3, 3))
            E[k, l] = h
            D[:, :, k, l] = (tau_of((np.eye(3) + E) @ F) - tau_of((np.eye(3) - E) @ F)) / (2 * h)
    c = np.empty_like(D)
    for i, j, k, l in np.ndindex(3, 3, 3, 3):
        c[i, j, k, l] = D[i, j, k, l] - (i == k) * tau[l, j] - tau[i, l] * (j == k)
    return 0.5 * (c + c.transpose(0, 1, 3, 2))


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - b) / max(np.linalg.norm(b), 1e-300))


def flat_layer_stretch(mu, lam, g, mu_fiber=0.0):
    """Out-of-plane stretch of a laterally confined layer under planar growth.

    With ``F = diag(1, 1, s)`` and ``Fe = diag(1/(1+g), 1/(1+g), s)`` the
    vertical Kirchhoff stress ``mu (s^2 - 1) + lam Je (Je - 1)`` must vanish
    (traction-free top, stress continuous through the layers).  An in-plane
    fiber adds energy but no vertical stress.
    """
    a = 1.0 / (1.0 + g)

    def tzz(s):
        Je = a * a * s
        return mu * (s * s - 1) + lam * Je * (Je - 1)

    s = brentq(tzz, 0.5, 2.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    Je = a * a * s
    psi = 0.5 * lam * (Je - 1) ** 2 + 0.5 * mu * (2 * a * a + s * s - 2 * np.log(Je) - 3)
    psi += mu_fiber * (a * a - 1) ** 2
    return s, lam * (Je - 1), psi
