"""Independent reference computations used to check the package."""

import numpy as np
from scipy.spatial.transform import Rotation


def so2_grid_angle(A, n=10**6):
    """Angle maximizing <A, R(theta)> over an n-point grid, refined by a parabola through the peak."""
    h = 2 * np.pi / n
    theta = np.arange(n) * h
    f = (A[0, 0] + A[1, 1]) * np.cos(theta) + (A[1, 0] - A[0, 1]) * np.sin(theta)
    k = int(np.argmax(f))
    fm, f0, fp = f[k - 1], f[k], f[(k + 1) % n]
    denom = fm - 2 * f0 + fp
    delta = 0.5 * (fm - fp) / denom if denom != 0 else 0.0
    return theta[k] + delta * h, f


def angle_diff(a, b):
    return abs((a - b + np.pi) % (2 * np.pi) - np.pi)


def omega_dense(A, d):
    """Top-d clipped eigen-reconstruction from a full eigendecomposition."""
    w, V = np.linalg.eigh((A + A.T) / 2)
    w, V = w[::-1][:d], V[:, ::-1][:, :d]
    return (V * np.maximum(w, 0)) @ V.T


def log_map_angle(R1, R2):
    """Geodesic distance through scipy's quaternion log map."""
    return float(Rotation.from_matrix(R1.T @ R2).magnitude())


def brute_nearest(src, tgt):
    d2 = ((src[:, None, :] - tgt[None, :, :]) ** 2).sum(-1)
    idx = np.argmin(d2, axis=1)
    return idx, np.sqrt(d2[np.arange(len(src)), idx])


def min_over_translations(sets, corr, rotations, weight=2.0):
    """Least-squares cost minimized over translations by a dense linear solve (set 0 pinned)."""
    d = sets[0].dim
    m = corr.m
    rows, rhs = [], []
    for p in corr.pairs:
        X = sets[p.i].points[p.matches[:, 0]] @ rotations[p.i].T
        Y = sets[p.j].points[p.matches[:, 1]] @ rotations[p.j].T
        for x, y in zip(X, Y):
            for c in range(d):
                row = np.zeros(m * d)
                row[p.i * d + c] = 1.0
                row[p.j * d + c] = -1.0
                rows.append(row)
                rhs.append(y[c] - x[c])
    A = np.sqrt(weight) * np.array(rows)
    b = np.sqrt(weight) * np.array(rhs)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    r = A @ sol - b
    return float(r @ r)


def rigid_grid_cost_2d(X, Y, n_theta=360, n_t=21, t_range=3.0):
    """Smallest sum ||x - R(theta) y - t||^2 over a (theta, tx, ty) grid."""
    best = np.inf
    ts = np.linspace(-t_range, t_range, n_t)
    for th in np.arange(n_theta) * 2 * np.pi / n_theta:
        c, s = np.cos(th), np.sin(th)
        RY = Y @ np.array([[c, -s], [s, c]]).T
        for tx in ts:
            for ty in ts:
                r = X - RY - np.array([tx, ty])
                best = min(best, float(np.sum(r * r)))
    return best
