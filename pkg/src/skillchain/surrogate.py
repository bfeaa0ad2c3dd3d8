"""Parametric stand-in for the learned interaction policy.

A skill attempt succeeds with probability

    p = base * f_pose(err) * f_clutter(clutter, masking)

where f_pose is a logistic decay in the translation and rotation error
normalised to 1 at zero error, with the decay radius widened by the
perturbation radius the skill was trained under, and f_clutter removes a
fixed probability mass per unit clutter unless non-target objects are
masked out. On failure a failure mode is drawn and applied to the scene.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .geometry import Pose, compose, pose_error
from .reaching import approach_pose, default_offsets
from .world import (
    HOLDING_SKILLS,
    FailureMode,
    Kind,
    Skill,
    SymbolicAction,
    WorldState,
    apply_displacement_on_failure,
    clutter_level,
    drop_held,
    resting_on,
    support_height,
)

LIFT_HEIGHT = 0.08
SLOPE = 4.0

_SLOTS = (
    (0.0, 0.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0),
    (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0),
)


class SkillModelError(ValueError):
    pass


@dataclass(frozen=True)
class SkillModel:
    base_success: float = 0.9
    pose_error_scale: tuple = (0.01, 0.05)
    training_radius: tuple = (0.10, 0.5)
    clutter_penalty: float = 0.5
    failure_mode_weights: Mapping = field(default_factory=lambda: {"no_op": 1.0})
    slope: float = SLOPE
    lift_height: float = LIFT_HEIGHT
    horizon: int = 60

    def __post_init__(self):
        if not 0.0 <= self.base_success <= 1.0:
            raise SkillModelError(f"base_success must be in [0, 1], got {self.base_success}")
        if not 0.0 <= self.clutter_penalty <= 1.0:
            raise SkillModelError(f"clutter_penalty must be in [0, 1], got {self.clutter_penalty}")
        scales = (*self.pose_error_scale, *self.training_radius, self.slope)
        if len(self.pose_error_scale) != 2 or len(self.training_radius) != 2 or any(not s > 0 for s in scales):
            raise SkillModelError("pose_error_scale, training_radius and slope must be positive")
        weights = {FailureMode(k): float(v) for k, v in dict(self.failure_mode_weights).items()}
        if any(w < 0 for w in weights.values()) or abs(sum(weights.values()) - 1.0) > 1e-9:
            raise SkillModelError(f"failure_mode_weights must be non-negative and sum to 1, got {weights}")
        object.__setattr__(self, "pose_error_scale", tuple(map(float, self.pose_error_scale)))
        object.__setattr__(self, "training_radius", tuple(map(float, self.training_radius)))
        object.__setattr__(self, "failure_mode_weights", weights)

    @property
    def effective_radius(self) -> tuple:
        return tuple(max(s, r) for s, r in zip(self.pose_error_scale, self.training_radius))

    def probability(self, pose_err, clutter: float, masking_on: bool) -> float:
        return success_probability(self, pose_err, clutter, masking_on)

    def draw_success(self, p: float, rng: np.random.Generator) -> bool:
        return bool(rng.random() < p)

    def draw_failure_mode(self, rng: np.random.Generator) -> FailureMode:
        modes = list(self.failure_mode_weights)
        w = np.array([self.failure_mode_weights[m] for m in modes])
        return modes[int(rng.choice(len(modes), p=w))] if len(modes) > 1 else modes[0]

    def to_dict(self) -> dict:
        return {
            "base_success": self.base_success,
            "pose_error_scale": list(self.pose_error_scale),
            "training_radius": list(self.training_radius),
            "clutter_penalty": self.clutter_penalty,
            "failure_mode_weights": {m.value: w for m, w in self.failure_mode_weights.items()},
            "slope": self.slope,
            "lift_height": self.lift_height,
            "horizon": self.horizon,
        }


def _logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def success_probability(model: SkillModel, pose_err, clutter: float, masking_on: bool) -> float:
    if not 0.0 <= clutter <= 1.0:
        raise ValueError(f"clutter must be in [0, 1], got {clutter}")
    k = model.slope
    norm = _logistic(k)
    f_pose = 1.0
    for err, radius in zip(pose_err, model.effective_radius):
        if err < 0:
            raise ValueError("pose error must be non-negative")
        f_pose *= _logistic(k * (1.0 - err / radius)) / norm
    f_clutter = 1.0 if masking_on else 1.0 - model.clutter_penalty * clutter
    return min(1.0, max(0.0, model.base_success * f_pose * f_clutter))


class ScriptedSkillModel:
    """Test double: outcomes follow ``script`` in order, then repeat its last entry.

    Entries are ``True`` for success or a failure mode (``False`` means no_op).
    """

    def __init__(self, script, lift_height: float = LIFT_HEIGHT, horizon: int = 60):
        self.script = list(script)
        self.calls = 0
        self.lift_height = lift_height
        self.horizon = horizon
        self._pending = FailureMode.NO_OP

    def probability(self, pose_err, clutter, masking_on) -> float:
        return 1.0

    def draw_success(self, p, rng) -> bool:
        entry = self.script[min(self.calls, len(self.script) - 1)]
        self.calls += 1
        if entry is True:
            return True
        self._pending = FailureMode.NO_OP if entry is False else FailureMode(entry)
        return False

    def draw_failure_mode(self, rng) -> FailureMode:
        return self._pending


# ---------------------------------------------------------------------------
# Parameter files


def _parse_model(raw: Mapping, where: str) -> SkillModel:
    known = set(SkillModel.__dataclass_fields__)
    extra = set(raw) - known
    if extra:
        raise SkillModelError(f"{where}: unknown fields {sorted(extra)}")
    kw = dict(raw)
    for key in ("pose_error_scale", "training_radius"):
        if key in kw:
            kw[key] = tuple(kw[key])
    try:
        return SkillModel(**kw)
    except (SkillModelError, ValueError, TypeError) as exc:
        raise SkillModelError(f"{where}: {exc}") from None


def parse_skill_models(doc: Mapping, source: str = "<skill models>") -> dict:
    """Per-category SkillModel records; every category must be present."""
    models = {}
    records = doc.get("skills", doc)
    for name, raw in records.items():
        try:
            skill = Skill(name)
        except ValueError:
            raise SkillModelError(f"{source}: unknown skill category {name!r}") from None
        model = _parse_model(raw, f"{source}:{name}")
        if skill not in HOLDING_SKILLS and model.failure_mode_weights.get(FailureMode.OBJECT_DROPPED, 0.0) > 0:
            raise SkillModelError(f"{source}:{name}: object_dropped weight must be 0 for non-holding skills")
        models[skill] = model
    missing = set(Skill) - set(models)
    if missing:
        raise SkillModelError(f"{source}: missing categories {sorted(m.value for m in missing)}")
    return models


def load_skill_models(path=None) -> dict:
    if path is None:
        text = resources.files("skillchain.data").joinpath("defaults.json").read_text()
        return parse_skill_models(json.loads(text), "defaults.json")
    path = Path(path)
    return parse_skill_models(json.loads(path.read_text()), str(path))


def with_training_radius(models: Mapping, radius) -> dict:
    return {k: replace(m, training_radius=tuple(radius)) for k, m in models.items()}


# ---------------------------------------------------------------------------
# Execution


@dataclass(frozen=True)
class SkillOutcome:
    success: bool
    failure_mode: FailureMode = FailureMode.NO_OP
    pose_error_at_start: tuple = (0.0, 0.0)
    steps_consumed: int = 0
    probability: float = 0.0
    clutter: float = 0.0


def canonical_approach(state: WorldState, action: SymbolicAction, offsets=None) -> Pose:
    """Approach pose computed from the true frame-object pose."""
    offsets = offsets or default_offsets()
    frame = compose(state.pose(action.frame_object), Pose(t=action.offset))
    return approach_pose(frame, action.skill, offsets)


def execute_interaction(
    state: WorldState,
    action: SymbolicAction,
    model,
    masking_on: bool,
    rng: np.random.Generator,
    offsets=None,
) -> tuple:
    """One attempt of the local manipulation skill from the current ee pose."""
    reference = canonical_approach(state, action, offsets)
    err = pose_error(state.ee_pose, reference)
    clutter = clutter_level(state, action)
    p = model.probability(err, clutter, masking_on)
    ok = model.draw_success(p, rng)
    if ok and action.skill in HOLDING_SKILLS and state.held != action.reference_object:
        ok = False
    if ok:
        new = apply_skill_effect(state, action, reference, model.lift_height)
        return new, SkillOutcome(True, FailureMode.NO_OP, err, model.horizon, p, clutter)
    mode = model.draw_failure_mode(rng)
    if mode is FailureMode.OBJECT_DROPPED and state.held is None:
        mode = FailureMode.NO_OP
    new = apply_displacement_on_failure(state, action, mode, rng)
    return new, SkillOutcome(False, mode, err, model.horizon, p, clutter)


def apply_skill_effect(state: WorldState, action: SymbolicAction, reference: Pose, lift: float = LIFT_HEIGHT):
    ref = action.reference_object
    skill = action.skill
    if skill is Skill.PICK:
        if state.held is not None and state.held != ref:
            state = drop_held(state, None)
        if state.held == ref:
            state = state.detach()
        obj = state.pose(ref)
        top = state.aabb(ref)[1][2]
        grasp_at = Pose(reference.q, (obj.t[0], obj.t[1], float(top)))
        state = state.with_ee(grasp_at).attach(ref)
        return state.with_ee(_raised(grasp_at, lift))
    if skill in (Skill.OPEN_DRAWER, Skill.TURN_ON):
        return state.with_articulation(ref, 1.0)
    if skill is Skill.CLOSE_DRAWER:
        return state.with_articulation(ref, 0.0)

    placed = placement_pose(state, action)
    ee = state.ee_pose
    state = state.detach().with_object_pose(ref, placed)
    return state.with_ee(_raised(ee, lift))


def _raised(p: Pose, dz: float) -> Pose:
    return Pose(p.q, (p.t[0], p.t[1], p.t[2] + dz))


def placement_pose(state: WorldState, action: SymbolicAction) -> Pose:
    """Where a successful transport skill leaves the held object."""
    ref, target = action.reference_object, action.target
    he = state.spec(ref).half_extents
    upright = Pose.from_yaw(state.pose(ref).yaw)
    tpose = state.pose(target)
    lo, hi = state.aabb(target)
    if "offset" in action.params:
        goal = compose(tpose, Pose(t=action.offset)).t
        z = support_height(state, goal[0], goal[1], exclude=(ref,))
        return Pose(upright.q, (goal[0], goal[1], z + _half_height(upright, he)))
    if action.skill is Skill.STACK or action.skill is Skill.HANG:
        return Pose(upright.q, (tpose.t[0], tpose.t[1], float(hi[2]) + _half_height(upright, he)))
    kind = state.spec(target).kind
    occupants = len(resting_on(state, target) - {ref})
    sx, sy = _SLOTS[occupants % len(_SLOTS)]
    room_x = max(0.0, (hi[0] - lo[0]) / 2 - he[0] - 0.005)
    room_y = max(0.0, (hi[1] - lo[1]) / 2 - he[1] - 0.005)
    x, y = tpose.t[0] + sx * room_x, tpose.t[1] + sy * room_y
    if kind in (Kind.RECEPTACLE, Kind.DRAWER):
        z = float(lo[2]) + _half_height(upright, he)
    else:
        z = float(hi[2]) + _half_height(upright, he)
    return Pose(upright.q, (x, y, z))


def _half_height(pose: Pose, he) -> float:
    r = np.abs(pose.rotation_matrix())
    return float(r[2] @ np.asarray(he))
