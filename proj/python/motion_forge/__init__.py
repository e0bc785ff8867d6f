"""Procedural motion planning problems, expert planners and a point-cloud policy."""

from ._core import (
    CorruptRecord,
    DegenerateProfile,
    Policy,
    Problem,
    Robot,
    Scene,
    VersionMismatch,
    generate_problem,
    orientation_error,
    plan_global,
    plan_hybrid,
    read_problems,
    replay,
    rollout,
    sparc,
)

__all__ = [
    "CorruptRecord",
    "DegenerateProfile",
    "Policy",
    "Problem",
    "Robot",
    "Scene",
    "VersionMismatch",
    "generate_problem",
    "orientation_error",
    "plan_global",
    "plan_hybrid",
    "read_problems",
    "replay",
    "rollout",
    "sparc",
]
