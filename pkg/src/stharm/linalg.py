"""Batched small-matrix helpers (leading axes are batch axes, last one/two are m or m x m)."""

from __future__ import annotations

import numpy as np

from .errors import GeometryError


def inv_small(a: np.ndarray) -> np.ndarray:
    """Inverse of a stack of small square matrices; closed form for sizes 1 and 2."""
    m = a.shape[-1]
    if m == 1:
        return 1.0 / a
    if m == 2:
        det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
        out = np.empty_like(a)
        out[..., 0, 0] = a[..., 1, 1]
        out[..., 1, 1] = a[..., 0, 0]
        out[..., 0, 1] = -a[..., 0, 1]
        out[..., 1, 0] = -a[..., 1, 0]
        return out / det[..., None, None]
    return np.linalg.inv(a)


def matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", a, v)


def solve_small(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b where b is a vector stack (...,m) or a matrix stack (...,m,k)."""
    ainv = inv_small(a)
    if b.ndim == a.ndim - 1:
        return matvec(ainv, b)
    return ainv @ b


def cayley_apply(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return (I + a/2)^{-1} (I - a/2) v, the implicit-midpoint step of dV = -a V."""
    eye = np.eye(a.shape[-1])
    half = 0.5 * a
    return solve_small(eye + half, v - half @ v)


def inv_sqrt_spd(s: np.ndarray) -> np.ndarray:
    """S^{-1/2} for a stack of symmetric positive definite matrices; closed form for sizes 1 and 2."""
    m = s.shape[-1]
    if m == 1:
        return 1.0 / np.sqrt(s)
    if m == 2:
        # sqrt(S) = (S + sqrt(det) I) / sqrt(tr + 2 sqrt(det))
        sym = 0.5 * (s + np.swapaxes(s, -1, -2))
        rdet = np.sqrt(sym[..., 0, 0] * sym[..., 1, 1] - sym[..., 0, 1] ** 2)
        root = sym + rdet[..., None, None] * np.eye(2)
        root = root / np.sqrt(sym[..., 0, 0] + sym[..., 1, 1] + 2.0 * rdet)[..., None, None]
        return inv_small(root)
    w, vecs = np.linalg.eigh(0.5 * (s + np.swapaxes(s, -1, -2)))
    return (vecs / np.sqrt(w)[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def cholesky(g: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise GeometryError("metric is not positive definite") from exc


def relative_eigvalsh(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Eigenvalues of the symmetric form s relative to the metric g, ascending."""
    lower_inv = inv_small(cholesky(g))
    sym = lower_inv @ s @ np.swapaxes(lower_inv, -1, -2)
    return np.linalg.eigvalsh(0.5 * (sym + np.swapaxes(sym, -1, -2)))


def operator_norm(a: np.ndarray, g_from: np.ndarray, g_to: np.ndarray) -> np.ndarray:
    """Operator norm of a: (V, g_from) -> (W, g_to)."""
    pulled = np.swapaxes(a, -1, -2) @ g_to @ a
    top = relative_eigvalsh(pulled, g_from)[..., -1]
    return np.sqrt(np.maximum(top, 0.0))


def metric_norm(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", v, g, v), 0.0))
