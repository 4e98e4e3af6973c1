"""Proximal operators and least-squares kernels for the coefficient updates.

Coefficient blocks are real arrays whose *last* axis runs over the echo
columns. A 2-D array ``(atoms, columns)`` is one coefficient matrix; a 3-D
array ``(atoms, n_patches, columns)`` holds one matrix per patch. Row
shrinkage groups entries along the last axis; singular value shrinkage acts
on each ``(atoms, columns)`` slice separately.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

from ._accel import njit, use_numba


class SingularSystemError(np.linalg.LinAlgError):
    """Normal matrix is singular and no damping was requested."""


def row_soft_threshold(Z, tau):
    """Prox of ``tau * ||Z||_{2,1}``: shrink each row's Euclidean norm by ``tau``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    out = np.array(Z, dtype=np.float64)
    if tau == 0:
        return out
    _shrink_rows_inplace(out, tau)
    return out


def _shrink_rows_inplace(V, tau):
    flat = V.reshape(-1, V.shape[-1]) if V.ndim else V.reshape(1, 1)
    kernel = _shrink_rows_numba if use_numba() else _shrink_rows_numpy
    kernel(flat, float(tau))
    return V


@njit(cache=True)
def _shrink_rows_numba(V, tau):
    for i in range(V.shape[0]):
        s = 0.0
        for j in range(V.shape[1]):
            s += V[i, j] * V[i, j]
        n = np.sqrt(s)
        f = 1.0 - tau / n if n > tau else 0.0
        for j in range(V.shape[1]):
            V[i, j] *= f
    return V


def _shrink_rows_numpy(V, tau):
    norms = np.sqrt(np.einsum("ij,ij->i", V, V))[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        V *= np.where(norms > tau, 1.0 - tau / norms, 0.0)
    return V


def _as_patch_stack(Z):
    # (atoms, [n_patches,] cols) -> (n_patches, atoms, cols)
    if Z.ndim == 2:
        return Z[None]
    return Z.transpose(1, 0, 2)


def _from_patch_stack(S, ndim):
    if ndim == 2:
        return S[0]
    return S.transpose(1, 0, 2)


def svt(Z, tau):
    """Prox of ``tau * ||Z||_*``: soft-threshold the singular values."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    Z = np.asarray(Z, dtype=np.float64)
    if not np.all(np.isfinite(Z)):
        raise np.linalg.LinAlgError("SVD of non-finite matrix")
    if tau == 0:
        return Z.copy()
    S = _as_patch_stack(Z)
    u, s, vt = np.linalg.svd(S, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    out = np.matmul(u * s[..., None, :], vt)
    return _from_patch_stack(out, Z.ndim)


def relu_project(Z):
    return np.maximum(Z, 0.0)


def l21_norm(Z):
    """Sum of row norms; summed over patches for 3-D input."""
    return float(np.linalg.norm(Z, axis=-1).sum())


def nuclear_norm(Z):
    S = _as_patch_stack(np.asarray(Z, dtype=np.float64))
    return float(np.linalg.svd(S, compute_uv=False).sum())


def numerical_rank(Z, rtol=1e-8):
    """Per-matrix rank counting singular values above ``rtol * sigma_max``."""
    S = _as_patch_stack(np.asarray(Z, dtype=np.float64))
    s = np.linalg.svd(S, compute_uv=False)
    smax = s[..., :1]
    ranks = np.sum((s > rtol * smax) & (smax > 0), axis=-1)
    return int(ranks[0]) if np.ndim(Z) == 2 else ranks


def solve_normal(gram, rhs, damp=0.0):
    """Solve ``(gram + damp I) X = rhs`` for a symmetric PSD ``gram``.

    ``rhs`` may carry trailing axes; they are flattened for the solve.
    """
    n = gram.shape[0]
    g = gram + damp * np.eye(n) if damp else gram
    flat = rhs.reshape(n, -1)
    try:
        c = scipy.linalg.cho_factor(g, check_finite=True)
        # reject numerically singular systems that Cholesky lets through
        diag = np.abs(np.diag(c[0]))
        if diag.min() <= 1e-7 * max(diag.max(), np.finfo(float).tiny):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        raise SingularSystemError(
            "normal matrix is singular; retry with damp > 0"
        ) from None
    return scipy.linalg.cho_solve(c, flat, check_finite=False).reshape(rhs.shape)


def ridge_lstsq(A, B, damp=0.0):
    """``argmin_X ||B - A X||_F^2 + damp ||X||_F^2``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if damp < 0:
        raise ValueError("damp must be nonnegative")
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"A has {A.shape[0]} rows but B has {B.shape[0]}")
    rhs = (A.T @ B.reshape(B.shape[0], -1)).reshape((A.shape[1],) + B.shape[1:])
    return solve_normal(A.T @ A, rhs, damp)


def default_damp(A):
    """``1e-6 * trace(A^T A) / cols``; used for the dictionary fits."""
    A = np.asarray(A)
    return 1e-6 * float(np.sum(A * A)) / A.shape[1]


def _ista(A, B, gamma, weight, n_iters, Z0, prox, reg, trace):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if gamma < 0 or weight < 0:
        raise ValueError("gamma and weight must be nonnegative")
    m, a = A.shape
    tail = B.shape[1:]
    AtA = A.T @ A
    AtB = (A.T @ B.reshape(m, -1)).reshape((a,) + tail)
    lip = 2.0 * weight * float(np.linalg.eigvalsh(AtA)[-1]) if a else 0.0
    Z = np.zeros((a,) + tail) if Z0 is None else np.array(Z0, dtype=np.float64)

    def objective(Z):
        R = B - (A @ Z.reshape(a, -1)).reshape(B.shape)
        return weight * float(np.sum(R * R)) + gamma * reg(Z)

    if lip <= 0:
        warnings.warn("ista: zero operator, returning the zero solution", RuntimeWarning)
        Z = np.zeros((a,) + tail)
        return (Z, [objective(Z)]) if trace else Z

    step = 1.0 / lip
    objs = [objective(Z)] if trace else None
    g = -2.0 * weight * step
    for _ in range(n_iters):
        # V = Z - step * grad, built in place
        V = (AtA @ Z.reshape(a, -1)).reshape(Z.shape)
        V -= AtB
        V *= g
        V += Z
        Z = prox(V, gamma * step)
        if trace:
            objs.append(objective(Z))
    return (Z, objs) if trace else Z


def ista_l21(A, B, gamma, weight=1.0, n_iters=30, Z0=None, trace=False):
    """Proximal gradient for ``weight ||B - A Z||_F^2 + gamma ||Z||_{2,1}``.

    Step size is ``1 / L`` with ``L = 2 * weight * lambda_max(A^T A)``, so the
    objective is non-increasing. With ``trace=True`` also returns the
    objective after every step (entry 0 is the starting point).
    """
    return _ista(A, B, gamma, weight, n_iters, Z0, _shrink_rows_inplace, l21_norm, trace)


def ista_nuclear(A, B, gamma, weight=1.0, n_iters=30, Z0=None, trace=False):
    """As :func:`ista_l21` with the nuclear norm of each coefficient matrix."""
    return _ista(A, B, gamma, weight, n_iters, Z0, svt, nuclear_norm, trace)
