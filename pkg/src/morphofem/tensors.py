"""Fixed-dimension (3D) tensor algebra.

All functions accept either a single tensor or a stack of tensors with
arbitrary leading batch dimensions, e.g. ``(..., 3, 3)`` for second-order
and ``(..., 3, 3, 3, 3)`` for fourth-order tensors.  Fourth-order tensors
are stored densely (81 entries).
"""

import numpy as np

from .errors import SingularTensor

__all__ = [
    "IDENTITY",
    "det",
    "inv",
    "sym",
    "outer",
    "dyad",
    "nonstandard_product",
    "symmetric_identity4",
    "ddot42",
    "push_forward_stress",
    "pull_back_stress",
    "push_forward_moduli",
    "pull_back_moduli",
    "has_minor_symmetry",
    "has_major_symmetry",
]

IDENTITY = np.eye(3)


def det(A):
    """Determinant by cofactor expansion along the first row."""
    A = np.asarray(A, dtype=float)
    return (
        A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
        - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
        + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0])
    )


def cofactor(A):
    """Cofactor matrix, ``cof(A) = det(A) inv(A)^T``."""
    A = np.asarray(A, dtype=float)
    C = np.empty_like(A)
    C[..., 0, 0] = A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1]
    C[..., 0, 1] = A[..., 1, 2] * A[..., 2, 0] - A[..., 1, 0] * A[..., 2, 2]
    C[..., 0, 2] = A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0]
    C[..., 1, 0] = A[..., 0, 2] * A[..., 2, 1] - A[..., 0, 1] * A[..., 2, 2]
    C[..., 1, 1] = A[..., 0, 0] * A[..., 2, 2] - A[..., 0, 2] * A[..., 2, 0]
    C[..., 1, 2] = A[..., 0, 1] * A[..., 2, 0] - A[..., 0, 0] * A[..., 2, 1]
    C[..., 2, 0] = A[..., 0, 1] * A[..., 1, 2] - A[..., 0, 2] * A[..., 1, 1]
    C[..., 2, 1] = A[..., 0, 2] * A[..., 1, 0] - A[..., 0, 0] * A[..., 1, 2]
    C[..., 2, 2] = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    return C


def inv(A, rtol=1e-14):
    """Inverse through the adjugate.

    Raises
    ------
    SingularTensor
        If ``|det A| <= rtol * ||A||^3`` for any tensor in the stack.
    """
    A = np.asarray(A, dtype=float)
    d = det(A)
    scale = np.linalg.norm(A, axis=(-2, -1)) ** 3
    if np.any(np.abs(d) <= rtol * scale) or not np.all(np.isfinite(d)):
        raise SingularTensor(f"tensor is singular (det = {np.min(np.abs(d)):.3e})")
    return np.swapaxes(cofactor(A), -1, -2) / d[..., None, None]


def sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def outer(a, b):
    """Dyadic product of vectors, ``(a ⊗ b)_ij = a_i b_j``."""
    return a[..., :, None] * b[..., None, :]


def dyad(A, B):
    """Dyadic product of second-order tensors, ``(A ⊗ B)_ijkl = A_ij B_kl``."""
    return A[..., :, :, None, None] * B[..., None, None, :, :]


def nonstandard_product(A, B):
    """``[A ⊗̄ B]_ijkl = A_ik B_jl``.

    Its double contraction with a second-order tensor is
    ``(A ⊗̄ B) : C = A · C · B^T``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    return A[..., :, None, :, None] * B[..., None, :, None, :]


def symmetric_identity4(A=None):
    """Fourth-order symmetric identity ``½(A_ik A_jl + A_il A_jk)``.

    With ``A`` omitted the identity metric is used.
    """
    if A is None:
        A = IDENTITY
    A = np.asarray(A, dtype=float)
    return 0.5 * (
        A[..., :, None, :, None] * A[..., None, :, None, :]
        + A[..., :, None, None, :] * A[..., None, :, :, None]
    )


def ddot42(M, A):
    """``(M : A)_ij = M_ijkl A_kl``."""
    return np.einsum("...ijkl,...kl->...ij", M, A)


def push_forward_stress(S, F):
    """``τ = F · S · F^T``."""
    return np.einsum("...iA,...AB,...jB->...ij", F, S, F)


def pull_back_stress(tau, F):
    """``S = F^-1 · τ · F^-T``."""
    Fi = inv(F)
    return np.einsum("...Ai,...ij,...Bj->...AB", Fi, tau, Fi)


def push_forward_moduli(M, F):
    """``c_ijkl = F_iA F_jB M_ABCD F_kC F_lD``."""
    return np.einsum("...iA,...jB,...ABCD,...kC,...lD->...ijkl", F, F, M, F, F, optimize=True)


def pull_back_moduli(M, F):
    """Inverse of :func:`push_forward_moduli`, i.e. the push forward by ``F^-1``."""
    return push_forward_moduli(M, inv(F))


def has_minor_symmetry(M, rtol=1e-12):
    scale = max(np.max(np.abs(M)), np.finfo(float).tiny)
    return bool(
        np.max(np.abs(M - np.swapaxes(M, -4, -3))) <= rtol * scale
        and np.max(np.abs(M - np.swapaxes(M, -2, -1))) <= rtol * scale
    )


def has_major_symmetry(M, rtol=1e-12):
    scale = max(np.max(np.abs(M)), np.finfo(float).tiny)
    Mt = np.moveaxis(M, (-4, -3), (-2, -1))
    return bool(np.max(np.abs(M - Mt)) <= rtol * scale)
