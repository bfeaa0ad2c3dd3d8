"""Kinematic tabletop world: objects, attachment, predicates and skill verification."""

from __future__ import annotations

import enum
import functools
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np

from .geometry import (
    IDENTITY,
    PerturbationSpec,
    Pose,
    compose,
    inverse,
    pose_from_json,
    sample_perturbed_init,
)

# Containment / resting tolerances (m).
LATERAL_TOL = 0.01
VERTICAL_GAP = 0.015
STACK_LATERAL_TOL = 0.02
PICK_LIFT_THRESHOLD = 0.03
OPEN_THRESHOLD = 0.9
CLOSED_THRESHOLD = 0.1

CLUTTER_RADIUS = 0.25
CLUTTER_SATURATION = 5

DEFAULT_BOUNDS = ((-0.5, -0.5, 0.0), (0.5, 0.5, 0.8))

DROP_LATERAL_SIGMA = 0.03
DROP_CLEARANCE = 0.04  # min gap kept from an avoided footprint, so the next approach clears its rim
EDGE_MARGIN = 0.05  # landing points stay this far inside the workspace walls
DISPLACE_SIGMA = (0.02, 0.15)  # (m, rad yaw)
DISPLACE_TRIES = 5


class UnknownObject(KeyError):
    pass


class SceneError(ValueError):
    """Invalid scene file; carries the offending file, field path and line."""

    def __init__(self, message: str, path: str = "", field: str = "", line: Optional[int] = None):
        self.path, self.field, self.line = path, field, line
        where = path
        if line is not None:
            where += f":{line}"
        if field:
            where += f" [{field}]"
        super().__init__(f"{where}: {message}" if where else message)


class Kind(str, enum.Enum):
    RIGID = "rigid"
    RECEPTACLE = "receptacle"
    SURFACE = "surface"
    DRAWER = "articulated-drawer"
    SWITCH = "articulated-switch"

    @property
    def articulated(self) -> bool:
        return self in (Kind.DRAWER, Kind.SWITCH)


class Skill(str, enum.Enum):
    PICK = "Pick"
    PLACE = "Place"
    STACK = "Stack"
    HANG = "Hang"
    OPEN_DRAWER = "OpenDrawer"
    CLOSE_DRAWER = "CloseDrawer"
    TURN_ON = "TurnOn"


HOLDING_SKILLS = frozenset({Skill.PLACE, Skill.STACK, Skill.HANG})


class FailureMode(str, enum.Enum):
    NO_OP = "no_op"
    OBJECT_DROPPED = "object_dropped"
    OBJECT_DISPLACED = "object_displaced"


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    half_extents: tuple
    kind: Kind = Kind.RIGID
    is_distractor: bool = False
    color: tuple = (160, 160, 160)

    def __post_init__(self):
        he = tuple(float(h) for h in self.half_extents)
        if len(he) != 3 or any(not (h > 0) for h in he):
            raise ValueError(f"{self.id}: half extents must be three positive numbers, got {he}")
        object.__setattr__(self, "half_extents", he)
        object.__setattr__(self, "kind", Kind(self.kind))


@dataclass(frozen=True)
class Attachment:
    object_id: str
    grasp: Pose  # object pose in the end-effector frame


@dataclass(frozen=True)
class SymbolicAction:
    """A skill category applied to a reference object, with auxiliary parameters.

    ``params`` may hold ``target`` (receptacle/support id) and ``offset``
    (placement offset in the target frame, meters).
    """

    skill: Skill
    reference_object: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "skill", Skill(self.skill))
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        if self.skill in HOLDING_SKILLS and "target" not in self.params:
            raise ValueError(f"{self.skill.value} needs a target in params")

    @property
    def target(self) -> Optional[str]:
        return self.params.get("target")

    @property
    def offset(self) -> tuple:
        return tuple(self.params.get("offset", (0.0, 0.0, 0.0)))

    @property
    def frame_object(self) -> str:
        """Object whose frame anchors the approach: the target for transport skills."""
        return self.target if self.skill in HOLDING_SKILLS else self.reference_object

    def describe(self) -> str:
        if self.target:
            return f"{self.skill.value}({self.reference_object} -> {self.target})"
        return f"{self.skill.value}({self.reference_object})"


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot of the tabletop. Every mutation returns a new state."""

    specs: Mapping[str, ObjectSpec]
    poses: Mapping[str, Pose]
    articulation: Mapping[str, float] = field(default_factory=dict)
    ee_pose: Pose = IDENTITY
    gripper: str = "open"
    attachment: Optional[Attachment] = None
    bounds: tuple = DEFAULT_BOUNDS

    def pose(self, obj_id: str) -> Pose:
        try:
            return self.poses[obj_id]
        except KeyError:
            raise UnknownObject(obj_id) from None

    def spec(self, obj_id: str) -> ObjectSpec:
        try:
            return self.specs[obj_id]
        except KeyError:
            raise UnknownObject(obj_id) from None

    @property
    def held(self) -> Optional[str]:
        return self.attachment.object_id if self.attachment else None

    def with_object_pose(self, obj_id: str, pose: Pose) -> "WorldState":
        poses = dict(self.poses)
        poses[obj_id] = pose
        return replace(self, poses=poses)

    def with_ee(self, ee: Pose) -> "WorldState":
        """Move the end-effector, carrying any held object rigidly."""
        if self.attachment is None:
            return replace(self, ee_pose=ee)
        poses = dict(self.poses)
        poses[self.attachment.object_id] = compose(ee, self.attachment.grasp)
        return replace(self, ee_pose=ee, poses=poses)

    def with_articulation(self, obj_id: str, value: float) -> "WorldState":
        art = dict(self.articulation)
        art[obj_id] = min(1.0, max(0.0, float(value)))
        return replace(self, articulation=art)

    def attach(self, obj_id: str) -> "WorldState":
        grasp = compose(inverse(self.ee_pose), self.pose(obj_id))
        return replace(self, gripper="closed", attachment=Attachment(obj_id, grasp))

    def detach(self) -> "WorldState":
        return replace(self, gripper="open", attachment=None)

    def aabb(self, obj_id: str) -> tuple:
        """World axis-aligned bounds ``(lo, hi)`` of an object's box."""
        return aabb_of(self.pose(obj_id), self.spec(obj_id).half_extents)

    def to_json(self) -> dict:
        return {
            "objects": {
                k: {"pose": v.to_list(), **({"articulation": self.articulation[k]} if k in self.articulation else {})}
                for k, v in self.poses.items()
            },
            "ee_pose": self.ee_pose.to_list(),
            "gripper": self.gripper,
            "attachment": (
                {"object": self.attachment.object_id, "grasp": self.attachment.grasp.to_list()}
                if self.attachment else None
            ),
        }


def aabb_of(pose: Pose, half_extents) -> tuple:
    """World bounds ``(lo, hi)`` of a box; the arrays are shared and read-only."""
    return _aabb(pose, tuple(half_extents))


@functools.lru_cache(maxsize=65536)
def _aabb(pose: Pose, half_extents: tuple) -> tuple:
    r = np.abs(pose.rotation_matrix())
    ext = r @ np.asarray(half_extents)
    c = np.asarray(pose.t)
    lo, hi = c - ext, c + ext
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


# ---------------------------------------------------------------------------
# Scenes


@dataclass(frozen=True)
class SceneSpec:
    name: str
    objects: tuple  # of ObjectSpec
    initial_poses: Mapping[str, Pose]
    articulation: Mapping[str, float]
    bounds: tuple = DEFAULT_BOUNDS
    ee_home: Pose = field(default_factory=lambda: Pose((0.0, 1.0, 0.0, 0.0), (0.0, 0.0, 0.5)))

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise ValueError(f"duplicate object ids: {sorted(dupes)}")
        for o in self.objects:
            if o.id not in self.initial_poses:
                raise ValueError(f"{o.id}: missing initial pose")
            if o.kind.articulated != (o.id in self.articulation):
                raise ValueError(f"{o.id}: articulation value required iff kind is articulated")

    @property
    def specs(self) -> dict:
        return {o.id: o for o in self.objects}

    def initial_state(self) -> WorldState:
        return WorldState(
            specs=MappingProxyType(self.specs),
            poses=dict(self.initial_poses),
            articulation=dict(self.articulation),
            ee_pose=self.ee_home,
            bounds=self.bounds,
        )

    def with_objects(self, extra: list, poses: Mapping[str, Pose]) -> "SceneSpec":
        merged = dict(self.initial_poses)
        merged.update(poses)
        return replace(self, objects=self.objects + tuple(extra), initial_poses=merged)


def _line_of(text: str, needle: str) -> Optional[int]:
    idx = text.find(needle)
    if idx < 0:
        return None
    return text.count("\n", 0, idx) + 1


def parse_scene(text: str, source: str = "<scene>") -> SceneSpec:
    """Parse and validate a scene document (see docs/formats.md)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(exc.msg, source, line=exc.lineno) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("objects"), list):
        raise SceneError("scene must be an object with an 'objects' list", source, line=1)

    objects, poses, art = [], {}, {}
    seen = set()
    for i, raw in enumerate(doc["objects"]):
        fld = f"objects[{i}]"
        oid = raw.get("id") if isinstance(raw, dict) else None
        line = _line_of(text, f'"{oid}"') if oid else None
        if not isinstance(oid, str) or not oid:
            raise SceneError("object needs a string id", source, fld, line)
        if oid in seen:
            positions = [m.start() for m in re.finditer(re.escape(f'"{oid}"'), text)]
            line = text.count("\n", 0, positions[-1]) + 1 if positions else line
            raise SceneError(f"duplicate id {oid!r}", source, fld + ".id", line)
        seen.add(oid)
        try:
            spec = ObjectSpec(
                id=oid,
                half_extents=raw["half_extents"],
                kind=raw.get("kind", "rigid"),
                is_distractor=bool(raw.get("is_distractor", False)),
                color=tuple(raw.get("color", (160, 160, 160))),
            )
        except KeyError as exc:
            raise SceneError(f"missing field {exc}", source, fld, line) from None
        except ValueError as exc:
            raise SceneError(str(exc), source, fld, line) from None
        try:
            poses[oid] = pose_from_json(raw.get("pose", [1, 0, 0, 0, 0, 0, 0]))
        except (ValueError, TypeError) as exc:
            raise SceneError(f"bad pose: {exc}", source, fld + ".pose", line) from None
        if spec.kind.articulated:
            value = raw.get("articulation", 0.0)
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                raise SceneError("articulation must be in [0, 1]", source, fld + ".articulation", line)
            art[oid] = float(value)
        elif "articulation" in raw:
            raise SceneError("articulation given for non-articulated kind", source, fld + ".articulation", line)
        objects.append(spec)

    kwargs = {}
    if "bounds" in doc:
        lo, hi = doc["bounds"]
        if any(a >= b for a, b in zip(lo, hi)):
            raise SceneError("bounds must satisfy lo < hi", source, "bounds", _line_of(text, '"bounds"'))
        kwargs["bounds"] = (tuple(lo), tuple(hi))
    if "ee_home" in doc:
        kwargs["ee_home"] = pose_from_json(doc["ee_home"])
    return SceneSpec(doc.get("name", Path(source).stem), tuple(objects), poses, art, **kwargs)


def load_scene(path) -> SceneSpec:
    path = Path(path)
    return parse_scene(path.read_text(), str(path))


# ---------------------------------------------------------------------------
# Predicates


def _footprints_overlap(lo_a, hi_a, lo_b, hi_b) -> bool:
    return lo_a[0] < hi_b[0] and lo_b[0] < hi_a[0] and lo_a[1] < hi_b[1] and lo_b[1] < hi_a[1]


def is_inside(state: WorldState, obj: str, receptacle: str, tol: float = LATERAL_TOL) -> bool:
    c = state.pose(obj).t
    lo, hi = state.aabb(receptacle)
    return all(lo[k] - tol <= c[k] <= hi[k] + tol for k in range(3))


def is_on(state: WorldState, obj: str, support: str, gap: float = VERTICAL_GAP) -> bool:
    lo_o, hi_o = state.aabb(obj)
    lo_s, hi_s = state.aabb(support)
    return _footprints_overlap(lo_o, hi_o, lo_s, hi_s) and abs(lo_o[2] - hi_s[2]) < gap


def is_at(state: WorldState, obj: str, target: str, offset, tol: float = LATERAL_TOL) -> bool:
    """Centroid lies over the target's footprint shifted by ``offset`` (target frame)."""
    goal = compose(state.pose(target), Pose(t=offset)).t
    c = state.pose(obj).t
    he = state.spec(target).half_extents
    return abs(c[0] - goal[0]) <= he[0] + tol and abs(c[1] - goal[1]) <= he[1] + tol


def non_target_ids(state: WorldState, action: SymbolicAction) -> list:
    keep = {action.reference_object, action.target, state.held}
    return [k for k in state.poses if k not in keep]


def clutter_level(
    state: WorldState,
    action: SymbolicAction,
    radius: float = CLUTTER_RADIUS,
    saturation: int = CLUTTER_SATURATION,
) -> float:
    """Fraction of the saturation count of non-target objects near the frame object."""
    ref = state.pose(action.frame_object).t
    near = 0
    for k in non_target_ids(state, action):
        c = state.poses[k].t
        if math.hypot(c[0] - ref[0], c[1] - ref[1]) <= radius:
            near += 1
    return min(1.0, near / saturation)


def support_height(state: WorldState, x: float, y: float, exclude=()) -> float:
    """Top of the highest box whose footprint contains ``(x, y)``; the table is z = 0."""
    top = 0.0
    for k in state.poses:
        if k in exclude or k == state.held:
            continue
        lo, hi = state.aabb(k)
        if lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1]:
            top = max(top, float(hi[2]))
    return top


def resting_on(state: WorldState, frame_id: str) -> set:
    """Objects inside or resting on ``frame_id`` (not counting the held one)."""
    out = set()
    for k in state.poses:
        if k in (frame_id, state.held):
            continue
        if is_inside(state, k, frame_id) or is_on(state, k, frame_id):
            out.add(k)
    return out


# ---------------------------------------------------------------------------
# Perception and verification


def estimate_object_pose(
    state: WorldState,
    action: SymbolicAction,
    noise: PerturbationSpec,
    rng: Optional[np.random.Generator] = None,
) -> Pose:
    """Ground-truth pose of the action's frame object, right-multiplied by sampled noise."""
    truth = state.pose(action.frame_object)
    state.pose(action.reference_object)  # unknown reference raises here
    if noise.is_zero:
        return truth
    if rng is None:
        raise ValueError("noisy estimation needs a generator")
    return sample_perturbed_init(truth, noise, rng)


def verify_condition(before: WorldState, after: WorldState, action: SymbolicAction) -> bool:
    """Geometric success check for one skill execution. Pure in its arguments."""
    try:
        return bool(_verify(before, after, action))
    except (UnknownObject, KeyError, ValueError):
        return False


def _verify(before: WorldState, after: WorldState, action: SymbolicAction) -> bool:
    ref = action.reference_object
    skill = action.skill
    if skill is Skill.PICK:
        return (
            after.held == ref
            and after.pose(ref).t[2] - before.pose(ref).t[2] >= PICK_LIFT_THRESHOLD - 1e-12
        )
    if skill in (Skill.OPEN_DRAWER, Skill.TURN_ON):
        return after.articulation[ref] >= OPEN_THRESHOLD
    if skill is Skill.CLOSE_DRAWER:
        return after.articulation[ref] <= CLOSED_THRESHOLD

    target = action.target
    if after.held == ref:
        return False
    if skill is Skill.STACK:
        a, b = after.pose(ref).t, after.pose(target).t
        return is_on(after, ref, target) and math.hypot(a[0] - b[0], a[1] - b[1]) < STACK_LATERAL_TOL
    if skill is Skill.HANG:
        return is_on(after, ref, target)
    # Place
    if "offset" in action.params:
        lo, _ = after.aabb(ref)
        rest = support_height(after, *after.pose(ref).t[:2], exclude=(ref,))
        return is_at(after, ref, target, action.offset) and abs(lo[2] - rest) < VERTICAL_GAP
    kind = after.spec(target).kind
    if kind is Kind.DRAWER:
        return after.articulation[target] >= 0.5 and is_inside(after, ref, target)
    if kind is Kind.RECEPTACLE:
        return is_inside(after, ref, target)
    return is_on(after, ref, target)


# ---------------------------------------------------------------------------
# Failure effects


def drop_held(
    state: WorldState,
    rng: Optional[np.random.Generator],
    sigma: float = DROP_LATERAL_SIGMA,
    avoid: Optional[str] = None,
) -> WorldState:
    """Release the held object straight down with lateral noise, onto the support below.

    When ``avoid`` is given the landing point is kept off that object's footprint.
    """
    held = state.held
    if held is None:
        return state
    ee = state.ee_pose.t
    he = state.spec(held).half_extents
    x, y = ee[0], ee[1]
    if sigma > 0 and rng is not None:
        dx, dy = rng.normal(0.0, sigma, size=2)
        x, y = x + float(dx), y + float(dy)
    x, y = _clip_xy(state, x, y, he)
    if avoid is not None and avoid in state.poses:
        lo, hi = state.aabb(avoid)
        if lo[0] - he[0] <= x <= hi[0] + he[0] and lo[1] - he[1] <= y <= hi[1] + he[1]:
            # push out along the shortest exit that stays inside the workspace
            c = DROP_CLEARANCE
            exits = [
                (hi[0] + he[0] + c - x, (hi[0] + he[0] + c, y)),
                (x - (lo[0] - he[0] - c), (lo[0] - he[0] - c, y)),
                (hi[1] + he[1] + c - y, (x, hi[1] + he[1] + c)),
                (y - (lo[1] - he[1] - c), (x, lo[1] - he[1] - c)),
            ]
            inside = [e for e in exits if _clip_xy(state, *e[1], he) == e[1]] or exits
            x, y = _clip_xy(state, *min(inside, key=lambda e: e[0])[1], he)
    released = state.detach()
    pose = released.pose(held)
    rested = Pose(pose.q, (x, y, 0.0))
    footprint = aabb_of(rested, he)
    below = _support_under(released, footprint, exclude=(held,))
    z = below + float(rested.t[2] - footprint[0][2])
    return released.with_object_pose(held, Pose(pose.q, (x, y, z)))


def _clip_xy(state: WorldState, x: float, y: float, he, margin: float = EDGE_MARGIN) -> tuple:
    (x0, y0, _), (x1, y1, _) = state.bounds
    r = max(he[0], he[1]) + margin
    return (min(max(x, x0 + r), x1 - r), min(max(y, y0 + r), y1 - r))


def _support_under(state: WorldState, footprint, exclude=()) -> float:
    lo_f, hi_f = footprint
    top = 0.0
    for k in state.poses:
        if k in exclude:
            continue
        lo, hi = state.aabb(k)
        if _footprints_overlap(lo_f, hi_f, lo, hi):
            top = max(top, float(hi[2]))
    return top


def displace_object(
    state: WorldState,
    obj_id: str,
    rng: Optional[np.random.Generator],
    sigma=DISPLACE_SIGMA,
) -> WorldState:
    """Planar (x, y, yaw) perturbation of an object; contents resting on it move along."""
    s_xy, s_yaw = sigma
    if (s_xy <= 0 and s_yaw <= 0) or rng is None or obj_id == state.held:
        return state
    carried = resting_on(state, obj_id)
    moving = [obj_id, *sorted(carried)]
    pivot = state.pose(obj_id).t
    he = state.spec(obj_id).half_extents
    for _ in range(DISPLACE_TRIES):
        dx, dy = rng.normal(0.0, s_xy, size=2) if s_xy > 0 else (0.0, 0.0)
        dyaw = float(rng.normal(0.0, s_yaw)) if s_yaw > 0 else 0.0
        nx, ny = pivot[0] + float(dx), pivot[1] + float(dy)
        if _clip_xy(state, nx, ny, he) != (nx, ny):
            continue
        delta = compose(
            Pose.from_translation(nx, ny, pivot[2]),
            compose(Pose.from_yaw(dyaw), Pose.from_translation(-pivot[0], -pivot[1], -pivot[2])),
        )
        out = state
        for k in moving:
            out = out.with_object_pose(k, compose(delta, out.pose(k)))
        if not _penetrates(out, moving):
            return out
    return state


def _penetrates(state: WorldState, moved, eps: float = 1e-6) -> bool:
    others = [k for k in state.poses if k not in moved and k != state.held]
    for m in moved:
        lo_m, hi_m = state.aabb(m)
        for k in others:
            lo, hi = state.aabb(k)
            if all(lo_m[a] < hi[a] - eps and lo[a] < hi_m[a] - eps for a in range(3)):
                return True
    return False


def apply_displacement_on_failure(
    state: WorldState,
    action: SymbolicAction,
    mode: FailureMode,
    rng: Optional[np.random.Generator] = None,
    drop_sigma: float = DROP_LATERAL_SIGMA,
    displace_sigma=DISPLACE_SIGMA,
) -> WorldState:
    """Scene change caused by a failed skill.

    ``object_dropped`` releases the held object below the end-effector (kept
    off the action's target); ``object_displaced`` shoves the action's frame
    object in the plane; ``no_op`` changes nothing.
    """
    mode = FailureMode(mode)
    if mode is FailureMode.NO_OP:
        return state
    if mode is FailureMode.OBJECT_DROPPED:
        return drop_held(state, rng, drop_sigma, avoid=action.target)
    return displace_object(state, action.frame_object, rng, displace_sigma)
