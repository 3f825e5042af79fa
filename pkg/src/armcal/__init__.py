"""System-identification toolkit for a PD-controlled planar arm: surrogate-
based gradient refinement of (friction, stiffness, damping) against a
simulated-annealing baseline, plus preference-based policy fine-tuning."""

__version__ = "0.1.0"

from .plant import (Action, EePose, JointState, ParamBounds, PhysParams,
                    PlantConfig, Trajectory, fk, rollout, step)

__all__ = [
    "Action", "EePose", "JointState", "ParamBounds", "PhysParams",
    "PlantConfig", "Trajectory", "fk", "rollout", "step", "__version__",
]
