"""Cost matrix of the joint least-squares registration problem.

The registration cost

    sum_{i~j} sum_k || R_i x^k_ij + t_i - R_j x^k_ji - t_j ||^2

is quadratic in the translations. Eliminating them in closed form leaves a
linear function ``<C, G>`` of the Gram matrix ``G = R^T R`` of the stacked
rotations ``R = [R_1 ... R_m]``, with

    L = sum n_ij e_ij e_ij^T,   B = sum_k d^k_ij e_ij^T,   D = sum_k d^k_ij d^k_ij^T,
    C = D - B L^+ B^T,          T* = -R B L^+.

``i~j`` is a symmetric relation, so by default every overlapping pair is
summed in both orders; ``symmetric=False`` counts each pair once, which
scales every matrix (and the cost) by 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, DisconnectedGraphError, RegistrationError


@dataclass(frozen=True)
class CostMatrix:
    C: np.ndarray
    L: np.ndarray
    L_pinv: np.ndarray
    B: np.ndarray
    D: np.ndarray
    m: int
    d: int

    @property
    def size(self) -> int:
        return self.m * self.d

    def block(self, i: int, j: int) -> np.ndarray:
        d = self.d
        return self.C[i * d:(i + 1) * d, j * d:(j + 1) * d]


def pinv_psd(L: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix by eigendecomposition."""
    w, V = np.linalg.eigh(L)
    cutoff = rel_tol * max(np.max(np.abs(w)), np.finfo(float).tiny)
    inv = np.zeros_like(w)
    keep = w > cutoff
    inv[keep] = 1.0 / w[keep]
    P = (V * inv) @ V.T
    return (P + P.T) / 2


def _pair_weight(n: int, symmetric: bool, normalize: bool) -> float:
    w = 2.0 if symmetric else 1.0
    if normalize:
        w /= n
    return w


def _pair_points(sets, pair):
    X = sets[pair.i].points[pair.matches[:, 0]]
    Y = sets[pair.j].points[pair.matches[:, 1]]
    return X, Y


def _check_inputs(sets, corr):
    if not corr.pairs:
        raise RegistrationError("empty correspondence set")
    if len(sets) != corr.m:
        raise DimensionMismatchError(f"{len(sets)} point sets for a correspondence set over m={corr.m}")
    dims = {s.dim for s in sets}
    if len(dims) != 1:
        raise DimensionMismatchError(f"point sets have mixed dimensions {sorted(dims)}")
    comps = corr.components()
    if len(comps) > 1:
        raise DisconnectedGraphError(comps)
    return dims.pop()


def build_cost(sets, corr, symmetric: bool = True, normalize: bool = False) -> CostMatrix:
    """Assemble ``C`` (and ``L``, ``L^+``, ``B``, ``D``) from matched point sets.

    Per pair only the (i,i), (i,j), (j,i), (j,j) blocks of ``D`` and columns
    i, j of ``B`` are touched; the difference vectors ``d^k_ij`` are never
    formed. ``normalize=True`` divides each pair's contribution by ``n_ij``.
    """
    d = _check_inputs(sets, corr)
    m = corr.m
    L = np.zeros((m, m))
    B = np.zeros((m * d, m))
    D = np.zeros((m * d, m * d))

    for pair in corr.pairs:
        i, j = pair.i, pair.j
        X, Y = _pair_points(sets, pair)
        n = len(X)
        w = _pair_weight(n, symmetric, normalize)
        bi, bj = slice(i * d, (i + 1) * d), slice(j * d, (j + 1) * d)

        L[i, i] += w * n
        L[j, j] += w * n
        L[i, j] -= w * n
        L[j, i] -= w * n

        sx, sy = X.sum(axis=0), Y.sum(axis=0)
        B[bi, i] += w * sx
        B[bj, i] -= w * sy
        B[bi, j] -= w * sx
        B[bj, j] += w * sy

        XY = X.T @ Y
        D[bi, bi] += w * (X.T @ X)
        D[bj, bj] += w * (Y.T @ Y)
        D[bi, bj] -= w * XY
        D[bj, bi] -= w * XY.T

    L_pinv = pinv_psd(L)
    C = D - B @ L_pinv @ B.T
    C = (C + C.T) / 2
    return CostMatrix(C=C, L=L, L_pinv=L_pinv, B=B, D=D, m=m, d=d)


def _as_matrix(C) -> np.ndarray:
    return C.C if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)


def objective(C, G: np.ndarray) -> float:
    """``<C, G> = trace(C^T G)``."""
    C = _as_matrix(C)
    G = np.asarray(G, dtype=float)
    if C.shape != G.shape:
        raise DimensionMismatchError(f"cost {C.shape} vs Gram {G.shape}")
    return float(np.sum(C * G))


def stack_rotations(rotations) -> np.ndarray:
    """``[R_1 ... R_m]`` as a (d, dm) array."""
    return np.hstack([np.asarray(R, dtype=float) for R in rotations])


def gram_matrix(rotations) -> np.ndarray:
    R = stack_rotations(rotations)
    return R.T @ R


def recover_translations(C: CostMatrix, R) -> np.ndarray:
    """Optimal translations ``T = -R B L^+`` for fixed rotations; returns (m, d)."""
    R = np.asarray(R, dtype=float) if not isinstance(R, (list, tuple)) else stack_rotations(R)
    if R.shape != (C.d, C.size):
        raise DimensionMismatchError(f"stacked rotations of shape {R.shape}, expected {(C.d, C.size)}")
    T = -R @ C.B @ C.L_pinv
    return T.T.copy()


def evaluate_ls_objective(sets, corr, transforms, symmetric: bool = True,
                          normalize: bool = False) -> float:
    """Direct evaluation of the least-squares registration cost."""
    if len(transforms) != corr.m:
        raise DimensionMismatchError(f"{len(transforms)} transforms for m={corr.m} sets")
    total = 0.0
    for pair in corr.pairs:
        X, Y = _pair_points(sets, pair)
        Ti, Tj = transforms[pair.i], transforms[pair.j]
        r = Ti.apply(X) - Tj.apply(Y)
        total += _pair_weight(len(X), symmetric, normalize) * float(np.sum(r * r))
    return total
