"""Pairwise correspondence estimation with Picky-ICP.

Picky-ICP differs from plain ICP in two ways: multiple source points that
hit the same target are reduced to the closest one, and matches farther
than ``trim_factor`` times the distance scale are dropped.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import AllTrimmedError, DimensionMismatchError, DisconnectedGraphError, NonOverlapError
from .geometry import PointSet, RigidTransform
from .solver import umeyama_fit

log = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 64


@dataclass
class CorrespondencePair:
    """Matched point indices between sets ``i < j``; ``matches`` is (n, 2)."""

    i: int
    j: int
    matches: np.ndarray

    def __post_init__(self):
        if self.i > self.j:
            self.i, self.j = self.j, self.i
            self.matches = np.asarray(self.matches)[:, ::-1]
        if self.i == self.j:
            raise ValueError(f"self-pair ({self.i}, {self.j})")
        M = np.asarray(self.matches, dtype=np.int64).reshape(-1, 2)
        if len(M) == 0:
            raise ValueError(f"pair ({self.i}, {self.j}) has no matches")
        if len(np.unique(M[:, 0])) != len(M) or len(np.unique(M[:, 1])) != len(M):
            raise ValueError(f"matches of pair ({self.i}, {self.j}) are not one-to-one")
        self.matches = M

    @property
    def n(self) -> int:
        return len(self.matches)


@dataclass
class CorrespondenceSet:
    m: int
    pairs: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for p in self.pairs:
            if not (0 <= p.i < self.m and 0 <= p.j < self.m):
                raise ValueError(f"pair ({p.i}, {p.j}) out of range for m={self.m}")
            if (p.i, p.j) in seen:
                raise ValueError(f"pair ({p.i}, {p.j}) listed twice")
            seen.add((p.i, p.j))

    def edges(self) -> list:
        return [(p.i, p.j) for p in self.pairs]

    def components(self) -> list:
        """Connected components of the view graph, each a sorted list."""
        if self.m == 0:
            return []
        e = np.array(self.edges(), dtype=np.int64).reshape(-1, 2)
        A = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.m, self.m))
        _, labels = connected_components(A, directed=False)
        return [sorted(np.flatnonzero(labels == c).tolist()) for c in np.unique(labels)]

    def is_connected(self) -> bool:
        return len(self.components()) == 1

    def validate(self, sets) -> None:
        """Check every match index against the point sets."""
        if len(sets) != self.m:
            raise DimensionMismatchError(f"{len(sets)} point sets for m={self.m}")
        for p in self.pairs:
            if p.matches[:, 0].max() >= len(sets[p.i]) or p.matches[:, 1].max() >= len(sets[p.j]):
                raise ValueError(f"match index out of range in pair ({p.i}, {p.j})")
            if p.matches.min() < 0:
                raise ValueError(f"negative match index in pair ({p.i}, {p.j})")

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "pairs": [{"i": p.i, "j": p.j, "matches": p.matches.tolist()} for p in self.pairs],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CorrespondenceSet":
        pairs = [CorrespondencePair(int(p["i"]), int(p["j"]), np.asarray(p["matches"], dtype=np.int64))
                 for p in doc["pairs"]]
        return cls(int(doc["m"]), pairs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "CorrespondenceSet":
        return cls.from_dict(json.loads(text))


@dataclass
class IcpConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-10
    trim_factor: float = 3.0
    trim_scale: str = "rms"
    max_distance: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.trim_factor <= 0:
            raise ValueError("trim_factor must be positive")


class IcpResult(NamedTuple):
    pair: CorrespondencePair
    transform: RigidTransform
    msd_history: list


def nearest_neighbors(source: PointSet, target: PointSet) -> np.ndarray:
    """Exact nearest target point for every source point.

    Returns an (n_src, 3) float array of rows ``(k_src, k_tgt, distance)``.
    """
    src = source.points if isinstance(source, PointSet) else np.asarray(source, dtype=float)
    tgt = target.points if isinstance(target, PointSet) else np.asarray(target, dtype=float)
    if src.shape[1] != tgt.shape[1]:
        raise DimensionMismatchError(f"{src.shape[1]}-d source vs {tgt.shape[1]}-d target")
    if len(tgt) < BRUTE_FORCE_LIMIT and len(src) < BRUTE_FORCE_LIMIT:
        d2 = ((src[:, None, :] - tgt[None, :, :]) ** 2).sum(-1)
        idx = np.argmin(d2, axis=1)
        dist = np.sqrt(d2[np.arange(len(src)), idx])
    else:
        dist, idx = cKDTree(tgt).query(src, k=1)
    return np.column_stack([np.arange(len(src)), idx, dist]).astype(float)


def resolve_multiple_assignments(raw: np.ndarray, seed=0) -> np.ndarray:
    """Keep, for every target hit more than once, only the closest source.

    Equal distances are broken by a seeded random key.
    """
    raw = np.asarray(raw, dtype=float).reshape(-1, 3)
    if len(raw) == 0:
        return raw
    rng = np.random.default_rng(seed)
    tiebreak = rng.random(len(raw))
    order = np.lexsort((tiebreak, raw[:, 2], raw[:, 1]))
    tgt = raw[order, 1]
    first = np.ones(len(order), dtype=bool)
    first[1:] = tgt[1:] != tgt[:-1]
    kept = order[first]
    return raw[np.sort(kept)]


def trim_outliers(matches: np.ndarray, trim_factor: float = 3.0, atol: float = 0.0,
                  scale: str = "rms") -> np.ndarray:
    """Keep matches with distance ``d_k <= trim_factor * s``.

    ``s`` is the standard deviation of the distances taken about zero
    (their RMS) by default; ``scale="std"`` uses the spread about the mean
    instead, which is much more aggressive on tightly clustered distances.
    Zero spread (up to round-off) keeps everything. Distances up to ``atol`` are always kept,
    so exact matches that differ only by round-off survive.
    """
    matches = np.asarray(matches, dtype=float).reshape(-1, 3)
    if len(matches) == 0:
        raise AllTrimmedError("no matches to trim")
    dist = matches[:, 2]
    if scale == "rms":
        s = float(np.sqrt(np.mean(dist ** 2)))
    elif scale == "std":
        s = float(np.std(dist))
    else:
        raise ValueError(f"unknown trim scale {scale!r}")
    # spread at round-off level counts as zero spread
    if s <= 16 * np.finfo(float).eps * float(np.max(np.abs(dist))):
        return matches
    kept = matches[dist <= max(trim_factor * s, atol)]
    if len(kept) == 0:
        raise AllTrimmedError("outlier trimming discarded every match")
    return kept


def picky_icp(P_i: PointSet, P_j: PointSet, init: RigidTransform | None = None,
              cfg: IcpConfig | None = None) -> IcpResult:
    """Align ``P_i`` onto ``P_j`` and return one-to-one correspondences.

    The returned transform maps coordinates of ``P_i`` into the frame of
    ``P_j``. Match indices refer to the untransformed input sets. Candidate
    matches longer than ``cfg.max_distance`` (default: the diagonal of the
    bounding box of ``P_j``) are ignored before resolution and trimming.
    """
    cfg = cfg or IcpConfig()
    if P_i.dim != P_j.dim:
        raise DimensionMismatchError(f"{P_i.dim}-d vs {P_j.dim}-d point sets")
    d = P_i.dim
    T = init if init is not None else RigidTransform.identity(d)
    tree = cKDTree(P_j.points)
    extent = float(np.ptp(P_j.points, axis=0).max())
    atol = 1e-9 * extent
    gate = cfg.max_distance
    if gate is None:
        gate = float(np.linalg.norm(np.ptp(P_j.points, axis=0)))
    history = []
    prev = np.inf
    matches = None
    for it in range(cfg.max_iterations):
        moved = T.apply(P_i.points)
        if len(P_j) < BRUTE_FORCE_LIMIT and len(P_i) < BRUTE_FORCE_LIMIT:
            raw = nearest_neighbors(moved, P_j.points)
        else:
            dist, idx = tree.query(moved, k=1)
            raw = np.column_stack([np.arange(len(moved)), idx, dist])
        raw = raw[raw[:, 2] <= gate]
        if len(raw) < d + 1:
            raise NonOverlapError(f"only {len(raw)} candidate matches within {gate:.3g}")
        resolved = resolve_multiple_assignments(raw, seed=(cfg.seed, it))
        matches = trim_outliers(resolved, cfg.trim_factor, atol, cfg.trim_scale)
        if len(matches) < d + 1:
            raise NonOverlapError(f"only {len(matches)} matches survive, need at least {d + 1}")
        msd = float(np.mean(matches[:, 2] ** 2))
        history.append(msd)
        if msd <= atol ** 2 or abs(prev - msd) < cfg.convergence_tol:
            break
        prev = msd
        src_idx = matches[:, 0].astype(np.int64)
        tgt_idx = matches[:, 1].astype(np.int64)
        T = umeyama_fit(P_j.points[tgt_idx], P_i.points[src_idx])
    log.debug("picky-icp (%d, %d): %d iterations, msd %.3g, %d matches",
              P_i.id, P_j.id, len(history), history[-1], len(matches))
    pair = CorrespondencePair(P_i.id, P_j.id, matches[:, :2].astype(np.int64))
    return IcpResult(pair, T, history)


def chain_pairing(m: int) -> list:
    return [(i, i + 1) for i in range(m - 1)]


def all_pairs(m: int) -> list:
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


def build_correspondences(sets, pairing=None, cfg: IcpConfig | None = None,
                          inits: dict | None = None) -> CorrespondenceSet:
    """Run Picky-ICP on every requested pair (default: successive pairs).

    Pairs that fail with too little overlap are dropped. ``inits`` optionally
    maps ``(i, j)`` to an initial transform taking set ``i`` into set ``j``.
    """
    cfg = cfg or IcpConfig()
    m = len(sets)
    pairing = chain_pairing(m) if pairing is None else pairing
    inits = inits or {}
    sets = [PointSet(s.points, id=k) for k, s in enumerate(sets)]
    pairs, seen = [], set()
    for i, j in pairing:
        if not (0 <= i < m and 0 <= j < m) or i == j:
            raise ValueError(f"invalid pair ({i}, {j}) for m={m}")
        a, b = min(i, j), max(i, j)
        if (a, b) in seen:
            continue
        seen.add((a, b))
        try:
            res = picky_icp(sets[a], sets[b], inits.get((a, b)), cfg)
        except NonOverlapError as exc:
            log.info("dropping pair (%d, %d): %s", a, b, exc)
            continue
        pairs.append(res.pair)
    corr = CorrespondenceSet(m, pairs)
    comps = corr.components()
    if len(comps) > 1:
        raise DisconnectedGraphError(comps)
    return corr
