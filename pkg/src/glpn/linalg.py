"""Dense real linear algebra on float64 numpy arrays.

A "dense matrix" throughout the package is a 2-D, C-contiguous ``float64``
``numpy.ndarray``.  :func:`as_matrix` is the single gate that enforces this.
The symmetric eigensolver is a parallel-ordered cyclic Jacobi method; the
thin SVD is derived from it.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, ConvergenceError, DimensionError

MAX_SWEEPS = 100
SYM_TOL = 1e-10
SIGMA_FLOOR = 1e-12


def as_matrix(a, *, name="matrix", allow_nonfinite=False) -> np.ndarray:
    """Return ``a`` as a 2-D float64 array, checking finiteness."""
    m = np.array(a, dtype=np.float64, copy=True)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(m)):
        raise ContractError(f"{name} contains NaN or Inf")
    return np.ascontiguousarray(m)


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul operands must be 2-D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for one sweep: every (p, q) with p < q appears exactly once.

    Each round is a set of disjoint pairs, so the rotations of a round commute
    and can be applied together.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            i, j = players[k], players[m - 1 - k]
            if i < n and j < n:
                ps.append(min(i, j))
                qs.append(max(i, j))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.linalg.norm(off))


def sym_eigen(m, tol: float = 1e-12, max_sweeps: int = MAX_SWEEPS):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi.

    Parameters
    ----------
    m : array_like (n, n)
        Symmetric within ``1e-10`` entry-wise; symmetrised before iterating.
    tol : float
        Stop once the off-diagonal Frobenius norm falls below
        ``tol * max(1, ||m||_F)``.

    Returns
    -------
    eigenvalues : ndarray (n,)
        Ascending.
    eigenvectors : ndarray (n, n)
        Orthonormal columns, ``m ~= V diag(w) V^T``.
    """
    if tol <= 0:
        raise ContractError("tol must be positive")
    a = as_matrix(m, name="m")
    n, k = a.shape
    if n != k:
        raise ContractError(f"sym_eigen needs a square matrix, got {a.shape}")
    if n and np.max(np.abs(a - a.T)) > SYM_TOL:
        raise ContractError("sym_eigen needs a symmetric matrix")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n <= 1:
        return np.diag(a).copy(), v

    target = tol * max(1.0, float(np.linalg.norm(a)))
    rounds = _round_robin(n)
    off = _off_norm(a)
    sweep = 0
    while off > target:
        if sweep >= max_sweeps:
            raise ConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(off-diagonal norm {off:.3e})",
                residual=off,
            )
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            app = a[p, p]
            aqq = a[q, q]
            with np.errstate(over="ignore", divide="ignore"):
                theta = (aqq - app) / np.where(active, 2.0 * apq, 1.0)
            big = np.abs(theta) > 1e150
            tame = np.where(big, 1.0, theta)
            root = np.sqrt(tame * tame + 1.0)
            t = np.where(theta >= 0.0, 1.0, -1.0) / (np.abs(theta) + root)
            # tan(phi) ~ 1/(2 theta) once theta^2 would overflow
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            t[~active] = 0.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cc, ss = c[:, None], s[:, None]
            rp, rq = a[p, :].copy(), a[q, :]
            a[p, :] = cc * rp - ss * rq
            a[q, :] = ss * rp + cc * rq
            cp, cq = a[:, p].copy(), a[:, q]
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q]
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
        off = _off_norm(a)
        sweep += 1

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], np.ascontiguousarray(v[:, order])


def _complete_basis(u: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged in ``filled`` by an
    orthonormal completion (Gram-Schmidt against the unit vectors)."""
    rows, cols = u.shape
    basis = [u[:, j] for j in range(cols) if filled[j]]
    out = u.copy()
    candidates = iter(np.eye(rows))
    for j in range(cols):
        if filled[j]:
            continue
        for e in candidates:
            w = e.copy()
            for b in basis:
                w -= (b @ w) * b
            nrm = np.linalg.norm(w)
            if nrm > 1e-8:
                w /= nrm
                basis.append(w)
                out[:, j] = w
                break
    return out


def svd_thin(m):
    """Thin SVD ``m = U diag(s) V^T`` via the eigen-decomposition of the
    smaller Gram matrix.

    Returns ``(U, s, V)`` with ``s`` non-negative and descending and
    ``k = min(rows, cols)`` columns in ``U`` and ``V``.
    """
    a = as_matrix(m, name="m")
    rows, cols = a.shape
    if rows < cols:
        u, s, v = svd_thin(a.T)
        return v, s, u
    gram = a.T @ a
    w, v = sym_eigen(gram)
    w, v = w[::-1], v[:, ::-1]
    s = np.sqrt(np.clip(w, 0.0, None))
    u = np.zeros((rows, cols))
    ok = s > SIGMA_FLOOR
    u[:, ok] = (a @ v[:, ok]) / s[ok]
    s[~ok] = 0.0
    # Gram eigenvalues carry ~eps * ||a||^2 absolute error, so columns for
    # singular values near sqrt(eps) * ||a|| are not orthogonal; re-orthogonalise
    # in descending order and rebuild any column that collapses.
    for j in np.flatnonzero(ok):
        w = u[:, j]
        for _ in range(2):
            w = w - u[:, :j] @ (u[:, :j].T @ w)
        nrm = np.linalg.norm(w)
        if nrm < 0.5:
            ok[j] = False
            u[:, j] = 0.0
        else:
            u[:, j] = w / nrm
    if not np.all(ok):
        u = _complete_basis(u, ok)
    return u, s, np.ascontiguousarray(v)
