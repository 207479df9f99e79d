"""Singular value decomposition by one-sided (Hestenes) Jacobi rotations, and
best rank-k projection built on top of it.

Column pairs are visited in round-robin (tournament) order so that each round
rotates n/2 disjoint pairs at once with whole-array numpy operations.
"""
from dataclasses import dataclass

import numpy as np

from deepfont.errors import NumericError

JACOBI_TOL = 1e-12
MAX_SWEEPS = 60


@dataclass
class SvdResult:
    u: np.ndarray  # m x r, orthonormal columns
    s: np.ndarray  # r singular values, non-increasing
    v: np.ndarray  # n x r, orthonormal columns

    def reconstruct(self, k=None):
        k = len(self.s) if k is None else min(k, len(self.s))
        return (self.u[:, :k] * self.s[:k]) @ self.v[:, :k].T


def _round_robin(n):
    """Pairings for one sweep: n-1 rounds (n even) of n/2 disjoint (p, q) pairs."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        half = size // 2
        p = np.array(players[:half])
        q = np.array(players[size - 1:half - 1:-1])
        keep = (p >= 0) & (q >= 0)
        if keep.any():
            rounds.append((p[keep], q[keep]))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u, good):
    """Fill the columns of u not flagged in `good` with an orthonormal complement."""
    m, r = u.shape
    basis = [u[:, j] for j in range(r) if good[j]]
    fill = []
    for e in range(m):
        if len(basis) + len(fill) == r:
            break
        cand = np.zeros(m)
        cand[e] = 1.0
        for _ in range(2):
            for b in basis + fill:
                cand -= (b @ cand) * b
        norm = np.linalg.norm(cand)
        if norm > 1e-8:
            fill.append(cand / norm)
    out = u.copy()
    out[:, ~good] = np.array(fill).T if fill else out[:, ~good]
    return out


def _rotate(at, vt, p, q, tol):
    """One Jacobi round over disjoint column pairs (p[i], q[i]); True if any rotated."""
    ap = at[p]
    aq = at[q]
    alpha = np.einsum("ij,ij->i", ap, ap)
    beta = np.einsum("ij,ij->i", aq, aq)
    gamma = np.einsum("ij,ij->i", ap, aq)
    act = np.abs(gamma) > tol * np.sqrt(alpha * beta)
    if not act.any():
        return False
    if not act.all():
        p, q = p[act], q[act]
        ap, aq = ap[act], aq[act]
        alpha, beta, gamma = alpha[act], beta[act], gamma[act]
    zeta = (beta - alpha) / (2.0 * gamma)
    t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
    c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
    s = c * t[:, None]
    at[p] = c * ap - s * aq
    at[q] = s * ap + c * aq
    vp = vt[p]
    vq = vt[q]
    vt[p] = c * vp - s * vq
    vt[q] = s * vp + c * vq
    return True


def svd(w, tol=JACOBI_TOL, max_sweeps=MAX_SWEEPS, v_init=None):
    """Thin SVD of an m x n matrix, computed in float64.

    `v_init` optionally supplies an orthogonal n x n starting basis (for m >= n);
    a basis close to the right singular vectors cuts the sweep count sharply.
    Raises NumericError if rotations are still needed after `max_sweeps` sweeps.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"svd expects a matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("svd input has non-finite entries")
    m, n = w.shape
    if m < n:
        res = svd(w.T, tol=tol, max_sweeps=max_sweeps)
        return SvdResult(u=res.v, s=res.s, v=res.u)

    # columns of a and v are stored as rows so that pair gathers are contiguous
    if v_init is None:
        at = w.T.copy()
        vt = np.eye(n)
    else:
        vt = np.array(v_init, dtype=np.float64).T.copy()
        at = vt @ w.T

    schedule = _round_robin(n)
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p, q in schedule:
            rotated |= _rotate(at, vt, p, q, tol)
        if not rotated:
            break
    else:
        raise NumericError(f"Jacobi SVD did not converge in {max_sweeps} sweeps", sweeps=max_sweeps)

    a = at.T
    v = vt.T
    sv = np.linalg.norm(a, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv = sv[order]
    a = a[:, order]
    v = v[:, order]
    good = sv > 0
    u = np.zeros_like(a)
    u[:, good] = a[:, good] / sv[good]
    if not good.all():
        u = _complete_basis(u, good)
    return SvdResult(u=u, s=sv, v=v)


def truncated_svd(w, k, basis=None, tol=JACOBI_TOL, max_sweeps=MAX_SWEEPS):
    """Top-k singular triplets of w (m >= n) by a partial one-sided Jacobi.

    Starting from the orthogonal n x n `basis` (e.g. the one returned by the
    previous call on a nearby matrix), only the pairs involving one of the
    first k columns are rotated. Once those k columns are orthogonal to each
    other and to the rest, they are exact singular vectors; they are the top k
    when their smallest norm is at least the Frobenius norm of the remaining
    columns. If that bound fails, or no basis is given, a full svd is run.

    Returns (SvdResult with k triplets, updated basis).
    """
    w = np.asarray(w, dtype=np.float64)
    m, n = w.shape
    if m < n:
        raise ValueError("truncated_svd expects m >= n")
    if basis is not None and 2 * k <= n:
        vt = np.array(basis, dtype=np.float64).T.copy()
        at = vt @ w.T
        head = np.arange(k)
        rounds = _round_robin(k) + [(head, k + (head + r) % (n - k)) for r in range(n - k)]
        for _ in range(max_sweeps):
            rotated = False
            for p, q in rounds:
                rotated |= _rotate(at, vt, p, q, tol)
            if not rotated:
                break
        norms = np.linalg.norm(at[:k], axis=1)
        if rotated is False and norms.min() >= np.linalg.norm(at[k:]):
            order = np.argsort(-norms, kind="stable")
            rows = np.concatenate([order, np.arange(k, n)])
            at, vt = at[rows], vt[rows]
            sv = norms[order]
            if sv[-1] > 0:
                return SvdResult(u=at[:k].T / sv, s=sv, v=vt[:k].T.copy()), vt.T
    res = svd(w, tol=tol, max_sweeps=max_sweeps)
    return SvdResult(u=res.u[:, :k], s=res.s[:k], v=res.v[:, :k]), res.v


def rank_project(w, k, svd_result=None):
    """Best rank-k approximation of w in Frobenius norm (keeps the k largest
    singular values, zeroes the rest). Returns an array of w's dtype."""
    if k < 1:
        raise ValueError("rank k must be at least 1")
    w = np.asarray(w)
    res = svd(w) if svd_result is None else svd_result
    return res.reconstruct(k).astype(w.dtype, copy=False)


def numerical_rank_ratio(w, k, svd_result=None):
    """s[k] / s[0], the quantity used to decide whether w has rank <= k (0 if k >= r)."""
    res = svd(w) if svd_result is None else svd_result
    if k >= len(res.s) or res.s[0] == 0:
        return 0.0
    return float(res.s[k] / res.s[0])
