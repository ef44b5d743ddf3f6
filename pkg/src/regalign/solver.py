"""ADMM solver for rotation registration posed over Gram matrices.

The rotation problem ``min <C, G>`` is split into ``G in Omega`` (PSD with
rank at most d) and ``H in Theta`` (identity diagonal blocks, rotation
super-diagonal blocks) with ``G = H``. Every ADMM step is then a closed-form
projection:

    G <- P_Omega(H - (C + Lambda) / rho)
    H <- P_Theta(G + Lambda / rho)
    Lambda <- Lambda + rho (G - H)
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .cost import CostMatrix, objective, recover_translations, stack_rotations
from .errors import DegenerateProjectionWarning, DegenerateRoundingError, DimensionMismatchError
from .geometry import RigidTransform, project_so, random_rotation

log = logging.getLogger(__name__)

# below this size a dense partial eigendecomposition beats ARPACK
DENSE_LIMIT = 128

INIT_MODES = ("spectral", "identity", "user")
EIG_METHODS = ("auto", "dense", "iterative")


@dataclass
class SolverConfig:
    rho: float = 10.0
    max_iterations: int = 1000
    eps_abs: float = 1e-8
    init_mode: str = "spectral"
    init_H: np.ndarray | None = None
    eig_method: str = "auto"
    eig_tol: float = 0.0
    seed: int = 0
    anchor_first: bool = True

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.eps_abs > 0:
            raise ValueError(f"eps_abs must be positive, got {self.eps_abs}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if self.init_mode == "user" and self.init_H is None:
            raise ValueError("init_mode='user' needs init_H")
        if self.eig_method not in EIG_METHODS:
            raise ValueError(f"eig_method must be one of {EIG_METHODS}")


class IterationRecord(NamedTuple):
    objective: float
    primal_residual: float
    dual_residual: float
    seconds: float


@dataclass
class GramIterate:
    G: np.ndarray
    H: np.ndarray
    Lambda: np.ndarray
    rho: float
    iteration: int = 0
    history: list = field(default_factory=list)


@dataclass
class Registration:
    transforms: list
    objective_value: float
    iterations_used: int
    converged: bool
    determinants: list

    @property
    def rotations(self) -> list:
        return [t.rotation for t in self.transforms]


def top_eigenpairs(A: np.ndarray, k: int, method: str = "auto", v0=None, tol: float = 0.0):
    """The ``k`` algebraically largest eigenpairs of symmetric ``A``, descending."""
    n = A.shape[0]
    if method == "dense" or (method == "auto" and n <= DENSE_LIMIT) or k >= n - 1:
        w, V = scipy.linalg.eigh(A, subset_by_index=[n - k, n - 1])
    else:
        try:
            w, V = eigsh(A, k=k, which="LA", v0=v0, tol=tol)
        except ArpackNoConvergence:
            log.warning("ARPACK did not converge, falling back to dense eigh")
            w, V = scipy.linalg.eigh(A, subset_by_index=[n - k, n - 1])
    order = np.argsort(w)[::-1]
    return w[order], V[:, order]


def project_omega(A: np.ndarray, d: int, method: str = "auto", v0=None, tol: float = 0.0,
                  return_vectors: bool = False):
    """Nearest PSD matrix of rank at most ``d``: keep the top-d eigenpairs, clip at zero."""
    A = np.asarray(A, dtype=float)
    A = (A + A.T) / 2
    w, V = top_eigenpairs(A, d, method, v0, tol)
    w = np.maximum(w, 0.0)
    X = (V * w) @ V.T
    X = (X + X.T) / 2
    return (X, V) if return_vectors else X


def project_theta(A: np.ndarray, d: int, m: int) -> np.ndarray:
    """Identity diagonal blocks, SO(d)-projected (i, i+1) blocks, the rest untouched."""
    A = np.asarray(A, dtype=float)
    if A.shape != (d * m, d * m):
        raise DimensionMismatchError(f"matrix of shape {A.shape} for d={d}, m={m}")
    X = A.copy()
    for i in range(m):
        X[i * d:(i + 1) * d, i * d:(i + 1) * d] = np.eye(d)
    if m > 1:
        sup = np.stack([A[i * d:(i + 1) * d, (i + 1) * d:(i + 2) * d] for i in range(m - 1)])
        rot = project_so(sup)
        for i in range(m - 1):
            X[i * d:(i + 1) * d, (i + 1) * d:(i + 2) * d] = rot[i]
            X[(i + 1) * d:(i + 2) * d, i * d:(i + 1) * d] = rot[i].T
    return X


def _round_factor(W: np.ndarray, d: int, m: int, frame=None) -> list:
    """Rotations from a (d, dm) factor: global reflection fix, then per-block projection."""
    W = np.array(W, dtype=float)
    blocks = W.reshape(d, m, d).transpose(1, 0, 2)
    # a reflection of the whole factor leaves W^T W unchanged; pick the orientation
    # under which the blocks are predominantly proper
    if np.sum(np.linalg.det(blocks)) < 0:
        W[-1] *= -1
    if frame is not None:
        W = np.asarray(frame) @ W
    blocks = W.reshape(d, m, d).transpose(1, 0, 2)
    return list(project_so(blocks))


def round_gram(H: np.ndarray, d: int, m: int, frame=None, method: str = "auto") -> list:
    """Extract m rotations from a (near) Gram matrix by spectral rounding.

    ``frame`` optionally fixes the global rotation of the result; the
    relative rotations ``R_i^T R_j`` do not depend on it.
    """
    H = np.asarray(H, dtype=float)
    w, V = top_eigenpairs((H + H.T) / 2, d, method)
    if np.any(w <= 1e-12 * max(abs(w[0]), 1.0)):
        raise DegenerateRoundingError(f"fewer than {d} positive eigenvalues: {w}")
    W = np.sqrt(w)[:, None] * V.T
    return _round_factor(W, d, m, frame)


def all_identity_init(m: int, d: int) -> np.ndarray:
    return np.tile(np.eye(d), (m, m))


def spectral_rotations(C: CostMatrix) -> list:
    """Rotations rounded from the d bottom eigenvectors of C."""
    _, V = scipy.linalg.eigh(C.C, subset_by_index=[0, C.d - 1])
    W = np.sqrt(C.m) * V.T
    return _round_factor(W, C.d, C.m)


def spectral_init(C: CostMatrix) -> np.ndarray:
    R = stack_rotations(spectral_rotations(C))
    return R.T @ R


def initial_h(C: CostMatrix, cfg: SolverConfig) -> np.ndarray:
    if cfg.init_mode == "spectral":
        return spectral_init(C)
    if cfg.init_mode == "identity":
        return all_identity_init(C.m, C.d)
    H0 = np.asarray(cfg.init_H, dtype=float)
    if H0.shape != (C.size, C.size):
        raise DimensionMismatchError(f"init_H of shape {H0.shape}, expected {(C.size, C.size)}")
    return (H0 + H0.T) / 2


def admm_step(C: np.ndarray, H: np.ndarray, Lam: np.ndarray, rho: float, d: int, m: int,
              method: str = "auto", v0=None, tol: float = 0.0):
    """One pass of the three updates; returns ``(G, H, Lambda, eigvecs)``."""
    G, V = project_omega(H - (C + Lam) / rho, d, method, v0, tol, return_vectors=True)
    H_new = project_theta(G + Lam / rho, d, m)
    Lam_new = Lam + rho * (G - H_new)
    Lam_new = (Lam_new + Lam_new.T) / 2
    return G, H_new, Lam_new, V


def admm_solve(C: CostMatrix, cfg: SolverConfig | None = None):
    """Run ADMM from the configured start, then round and recover translations.

    Stops once ``max(||G - H||_F, rho ||H_new - H_old||_F) <= eps_abs * dm``.
    Returns ``(GramIterate, Registration)``.
    """
    cfg = cfg or SolverConfig()
    d, m, n = C.d, C.m, C.size
    rho = float(cfg.rho)
    tol_stop = cfg.eps_abs * n
    Lam = np.zeros((n, n))
    history = []
    converged = False
    rng = np.random.default_rng(cfg.seed)
    v0 = rng.standard_normal(n)
    # the spectral start and early iterates may have zero or reflection-like
    # blocks; these project to a valid rotation anyway, so the warnings are only logged
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateProjectionWarning)
        H = initial_h(C, cfg)
        G = H
        for k in range(cfg.max_iterations):
            t0 = time.perf_counter()
            G, H_new, Lam, V = admm_step(C.C, H, Lam, rho, d, m, cfg.eig_method, v0, cfg.eig_tol)
            v0 = V.sum(axis=1)
            primal = float(np.linalg.norm(G - H_new))
            dual = rho * float(np.linalg.norm(H_new - H))
            H = H_new
            history.append(IterationRecord(objective(C, G), primal, dual, time.perf_counter() - t0))
            if max(primal, dual) <= tol_stop:
                converged = True
                break
    degenerate = 0
    for w in caught:
        if issubclass(w.category, DegenerateProjectionWarning):
            degenerate += 1
        else:
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    if degenerate:
        log.debug("admm: %d degenerate SO(d) projections", degenerate)
    it = GramIterate(G=G, H=H, Lambda=Lam, rho=rho, iteration=len(history), history=history)
    log.info("admm: %d iterations, converged=%s, objective %.6g",
             it.iteration, converged, history[-1].objective)

    frame = random_rotation(cfg.seed, d) if d in (2, 3) else None
    rotations = round_gram(H, d, m, frame=frame)
    reg = registration_from_rotations(C, rotations, anchor_first=cfg.anchor_first)
    reg.iterations_used = it.iteration
    reg.converged = converged
    return it, reg


def registration_from_rotations(C: CostMatrix, rotations, anchor_first: bool = True) -> Registration:
    """Attach optimal translations to ``rotations``, optionally fixing set 0 at the origin."""
    T = recover_translations(C, stack_rotations(rotations))
    transforms = [RigidTransform(R, t) for R, t in zip(rotations, T)]
    if anchor_first:
        # global motion (Q, s) with Q = R_0^T, s = -R_0^T t_0 sends set 0 to the identity
        anchor = transforms[0].inverse()
        transforms = [anchor.compose(t) for t in transforms]
    R = stack_rotations([t.rotation for t in transforms])
    return Registration(
        transforms=transforms,
        objective_value=objective(C, R.T @ R),
        iterations_used=0,
        converged=True,
        determinants=[float(np.linalg.det(t.rotation)) for t in transforms],
    )


def umeyama_fit(X, Y) -> RigidTransform:
    """Closed-form rigid fit minimizing ``sum_k ||x_k - R y_k - t||^2``.

    ``R = P_SO(H)`` with ``H = sum (x_k - x_bar)(y_k - y_bar)^T`` and
    ``t = x_bar - R y_bar``. Coincident points give the identity rotation.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape or X.ndim != 2:
        raise DimensionMismatchError(f"point arrays of shape {X.shape} and {Y.shape}")
    x_bar, y_bar = X.mean(axis=0), Y.mean(axis=0)
    H = (X - x_bar).T @ (Y - y_bar)
    R = project_so(H)
    return RigidTransform(R, x_bar - R @ y_bar)


def alignment_cost(X, Y, transform: RigidTransform) -> float:
    """``sum_k ||x_k - (R y_k + t)||^2`` for index-aligned X, Y."""
    r = np.asarray(X, dtype=float) - transform.apply(Y)
    return float(np.sum(r * r))
