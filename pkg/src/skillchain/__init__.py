"""Kinematic tabletop simulator and compositional skill-chaining executive."""

from .executive import ExecConfig, Plan, TrialResult, last_pick_index, run_plan
from .geometry import PerturbationSpec, Pose, Twist, exp_map, log_map, relative_pose
from .surrogate import SkillModel, load_skill_models, success_probability
from .world import SceneSpec, Skill, SymbolicAction, WorldState, load_scene, verify_condition

__version__ = "0.1.0"

__all__ = [
    "ExecConfig",
    "Plan",
    "PerturbationSpec",
    "Pose",
    "SceneSpec",
    "Skill",
    "SkillModel",
    "SymbolicAction",
    "TrialResult",
    "Twist",
    "WorldState",
    "exp_map",
    "last_pick_index",
    "load_scene",
    "load_skill_models",
    "log_map",
    "relative_pose",
    "run_plan",
    "success_probability",
    "verify_condition",
]
