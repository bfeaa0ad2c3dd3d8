"""Approach poses and collision-free end-effector transport.

The end-effector is a sphere; a held object is its axis-aligned box carried
at the grasp offset. Planning happens over end-effector translation with
orientation slerped along the path by arc length. A straight segment is
tried first, then bidirectional RRT (RRT-Connect) with shortcut smoothing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .geometry import Pose, compose, quat_distance, slerp
from .world import Skill, WorldState

FACE_DOWN = Pose((0.0, 1.0, 0.0, 0.0))  # 180 deg about world x
H_PICK = 0.10
PLACE_CLEARANCE = 0.20


class MissingOffset(KeyError):
    pass


class PlanningError(RuntimeError):
    pass


class StartInCollision(PlanningError):
    pass


class GoalInCollision(PlanningError):
    pass


class PlanningTimeout(PlanningError):
    pass


def default_offsets(h_pick: float = H_PICK, place_clearance: float = PLACE_CLEARANCE) -> dict:
    """Skill -> offset pose: face-down rotation plus a vertical clearance in the object frame."""
    up = {
        Skill.PICK: h_pick,
        Skill.PLACE: place_clearance,
        Skill.STACK: place_clearance,
        Skill.HANG: place_clearance,
        Skill.OPEN_DRAWER: h_pick,
        Skill.CLOSE_DRAWER: h_pick,
        Skill.TURN_ON: h_pick,
    }
    return {skill: Pose(FACE_DOWN.q, (0.0, 0.0, h)) for skill, h in up.items()}


def approach_pose(object_pose: Pose, skill: Skill, offsets: Mapping) -> Pose:
    try:
        offset = offsets[Skill(skill)]
    except KeyError:
        raise MissingOffset(skill) from None
    return compose(object_pose, offset)


@dataclass(frozen=True)
class PlannerConfig:
    step_size: float = 0.01
    clearance_margin: float = 0.01
    max_iterations: int = 5000
    goal_tolerance: tuple = (1e-6, 1e-6)
    ee_radius: float = 0.02
    extend_step: float = 0.06
    shortcut_rounds: int = 40

    def __post_init__(self):
        values = [self.step_size, self.clearance_margin, self.max_iterations, self.ee_radius, self.extend_step]
        if any(not v > 0 for v in values) or any(not g > 0 for g in self.goal_tolerance):
            raise ValueError("planner parameters must be strictly positive")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "PlannerConfig":
        kw = dict(raw)
        if "goal_tolerance" in kw:
            kw["goal_tolerance"] = tuple(kw["goal_tolerance"])
        return cls(**kw)


@dataclass(frozen=True)
class PlannerStats:
    iterations: int = 0
    nodes: int = 0
    wall_time: float = 0.0
    method: str = "straight"


@dataclass(frozen=True)
class PathPlan:
    waypoints: tuple
    stats: PlannerStats = field(default_factory=PlannerStats)

    def __len__(self):
        return len(self.waypoints)

    def length(self) -> float:
        w = self.waypoints
        return sum(math.dist(a.t, b.t) for a, b in zip(w, w[1:]))


# ---------------------------------------------------------------------------
# Collision model


class CollisionModel:
    """Obstacle boxes plus the end-effector sphere and held-object box in ee-relative bounds."""

    def __init__(self, state: WorldState, cfg: PlannerConfig, ignore=(), orientations=()):
        skip = set(ignore)
        if state.held:
            skip.add(state.held)
        ids = [k for k in state.poses if k not in skip]
        if ids:
            boxes = [state.aabb(k) for k in ids]
            self.lo = np.array([b[0] for b in boxes])
            self.hi = np.array([b[1] for b in boxes])
        else:
            self.lo = self.hi = np.zeros((0, 3))
        self.ids = ids
        self.radius = cfg.ee_radius
        self.margin = cfg.clearance_margin
        self.bounds = (np.asarray(state.bounds[0], dtype=float), np.asarray(state.bounds[1], dtype=float))
        self.held_rel = _held_relative_box(state, orientations or (state.ee_pose.q,))

    def points_free(self, pts: np.ndarray) -> bool:
        """All sample centers ``pts`` (K, 3) are collision-free."""
        blo, bhi = self.bounds
        if np.any(pts < blo) or np.any(pts > bhi):
            return False
        if self.held_rel is not None:
            hlo = pts + self.held_rel[0]
            if np.any(hlo[:, 2] < blo[2] - 1e-9):
                return False
        if not len(self.lo):
            return True
        # sphere vs box: distance from center to the box
        d = np.maximum(self.lo[None] - pts[:, None], 0.0) + np.maximum(pts[:, None] - self.hi[None], 0.0)
        dist2 = np.einsum("kmi,kmi->km", d, d)
        if np.any(dist2 < (self.radius + self.margin) ** 2):
            return False
        if self.held_rel is not None:
            m = self.margin
            hlo = pts[:, None] + self.held_rel[0] - m
            hhi = pts[:, None] + self.held_rel[1] + m
            overlap = np.all((hlo < self.hi[None]) & (self.lo[None] < hhi), axis=2)
            if np.any(overlap):
                return False
        return True

    def segment_free(self, a, b, step: float) -> bool:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        n = max(1, int(math.ceil(float(np.linalg.norm(b - a)) / step)))
        s = np.linspace(0.0, 1.0, n + 1)[:, None]
        return self.points_free(a + s * (b - a))


def _held_relative_box(state: WorldState, orientations) -> Optional[tuple]:
    """Bounds of the held box relative to the ee center, valid for every orientation
    on the geodesic spanned by ``orientations``."""
    if state.attachment is None:
        return None
    he = np.asarray(state.spec(state.held).half_extents)
    grasp = state.attachment.grasp
    offs, los, his = [], [], []
    for q in orientations:
        pose = compose(Pose(q), grasp)
        ext = np.abs(pose.rotation_matrix()) @ he
        o = np.asarray(pose.t)
        offs.append(o)
        los.append(o - ext)
        his.append(o + ext)
    lo = np.min(los, axis=0)
    hi = np.max(his, axis=0)
    if len(orientations) > 1:
        # arc-vs-chord slack for the rotating offset, plus box growth at mid-rotation
        ang = max(_qangle(orientations[0], q) for q in orientations[1:])
        r = max(float(np.linalg.norm(o)) for o in offs)
        slack = r * (1.0 - math.cos(0.5 * ang)) + float(np.linalg.norm(he)) * 0.5 * ang
        lo -= slack
        hi += slack
    return lo, hi


def _qangle(a, b) -> float:
    return quat_distance(a, b)


def segment_collision_free(a: Pose, b: Pose, state: WorldState, cfg: PlannerConfig, ignore=()) -> bool:
    model = CollisionModel(state, cfg, ignore, orientations=(a.q, b.q))
    return model.segment_free(a.t, b.t, cfg.step_size)


# ---------------------------------------------------------------------------
# Planning


class _Tree:
    def __init__(self, root: np.ndarray, capacity: int = 256):
        self.pts = np.empty((capacity, 3))
        self.pts[0] = root
        self.parent = [-1]
        self.n = 1

    def add(self, p: np.ndarray, parent: int) -> int:
        if self.n == len(self.pts):
            self.pts = np.concatenate([self.pts, np.empty_like(self.pts)])
        self.pts[self.n] = p
        self.parent.append(parent)
        self.n += 1
        return self.n - 1

    def nearest(self, p: np.ndarray) -> int:
        d = self.pts[: self.n] - p
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))

    def path_to_root(self, i: int) -> list:
        out = []
        while i >= 0:
            out.append(self.pts[i].copy())
            i = self.parent[i]
        return out


def _steer(model, tree, target, step, seg_step):
    """Extend ``tree`` one step toward ``target``; returns (status, index)."""
    i = tree.nearest(target)
    base = tree.pts[i]
    delta = target - base
    dist = float(np.linalg.norm(delta))
    if dist < 1e-12:
        return "reached", i
    new = target if dist <= step else base + delta * (step / dist)
    if not model.segment_free(base, new, seg_step):
        return "trapped", i
    j = tree.add(new, i)
    return ("reached" if dist <= step else "advanced"), j


def plan_path(
    state: WorldState,
    start: Pose,
    goal: Pose,
    cfg: PlannerConfig,
    rng: np.random.Generator,
    ignore=(),
) -> PathPlan:
    """Collision-free end-effector path from ``start`` to ``goal``.

    ``ignore`` names objects contact with which is intended (the skill's
    frame object and whatever rests on it).
    Raises StartInCollision, GoalInCollision or PlanningTimeout.
    """
    t0 = time.perf_counter()
    model = CollisionModel(state, cfg, ignore, orientations=(start.q, goal.q))
    a, b = np.asarray(start.t), np.asarray(goal.t)
    if not model.points_free(a[None]):
        raise StartInCollision(f"start {start.t} in collision")
    if not model.points_free(b[None]):
        raise GoalInCollision(f"goal {goal.t} in collision")
    if model.segment_free(a, b, cfg.step_size):
        return PathPlan((start, goal), PlannerStats(0, 2, time.perf_counter() - t0, "straight"))

    blo, bhi = model.bounds
    ta, tb = _Tree(a), _Tree(b)
    fwd = True
    for it in range(1, cfg.max_iterations + 1):
        sample = blo + rng.random(3) * (bhi - blo)
        status, ia = _steer(model, ta, sample, cfg.extend_step, cfg.step_size)
        if status != "trapped":
            target = ta.pts[ia].copy()
            while True:
                status_b, ib = _steer(model, tb, target, cfg.extend_step, cfg.step_size)
                if status_b != "advanced":
                    break
            if status_b == "reached":
                left = ta.path_to_root(ia)[::-1]
                right = tb.path_to_root(ib)[1:]
                pts = left + right
                if not fwd:
                    pts = pts[::-1]
                pts = _shortcut(model, pts, cfg, rng)
                wps = _with_orientations(pts, start, goal)
                stats = PlannerStats(it, ta.n + tb.n, time.perf_counter() - t0, "rrt-connect")
                return PathPlan(tuple(wps), stats)
        ta, tb = tb, ta
        fwd = not fwd
    raise PlanningTimeout(f"no path after {cfg.max_iterations} iterations")


def _shortcut(model, pts, cfg, rng):
    pts = list(pts)
    for _ in range(cfg.shortcut_rounds):
        if len(pts) <= 2:
            break
        i, j = sorted(rng.choice(len(pts), size=2, replace=False).tolist())
        if j - i < 2:
            continue
        if model.segment_free(pts[i], pts[j], cfg.step_size):
            pts = pts[: i + 1] + pts[j:]
    return pts


def _with_orientations(pts, start: Pose, goal: Pose) -> list:
    seg = [float(np.linalg.norm(q - p)) for p, q in zip(pts, pts[1:])]
    total = sum(seg)
    out = [start]
    acc = 0.0
    for k in range(1, len(pts) - 1):
        acc += seg[k - 1]
        out.append(Pose(slerp(start.q, goal.q, acc / total), pts[k]))
    out.append(goal)
    return out


def execute_path(state: WorldState, plan: PathPlan) -> WorldState:
    """Drive the end-effector through every waypoint, carrying the held object."""
    for wp in plan.waypoints[1:]:
        state = state.with_ee(wp)
    return state
