"""Joint rigid registration of multiple point sets via ADMM on Gram matrices."""

from .correspondence import (
    CorrespondencePair,
    CorrespondenceSet,
    IcpConfig,
    build_correspondences,
    picky_icp,
)
from .cost import CostMatrix, build_cost, evaluate_ls_objective, objective, recover_translations
from .evaluation import ErrorReport, SyntheticScene, generate_scene, noise_sweep, rotation_error
from .geometry import PointSet, RigidTransform, apply_transform, geodesic_distance, project_so, random_rotation
from .solver import Registration, SolverConfig, admm_solve, round_gram, umeyama_fit

__version__ = "0.1.0"

__all__ = [
    "CorrespondencePair", "CorrespondenceSet", "CostMatrix", "ErrorReport", "IcpConfig",
    "PointSet", "Registration", "RigidTransform", "SolverConfig", "SyntheticScene",
    "admm_solve", "apply_transform", "build_correspondences", "build_cost",
    "evaluate_ls_objective", "generate_scene", "geodesic_distance", "noise_sweep",
    "objective", "picky_icp", "project_so", "random_rotation", "recover_translations",
    "rotation_error", "round_gram", "umeyama_fit",
]
