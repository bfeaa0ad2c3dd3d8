"""Sequential skill execution with verification-driven recovery.

Skill indices in plans, traces and :func:`last_pick_index` are 1-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import PerturbationSpec, Pose, compose, sample_perturbed_init
from .reaching import (
    PathPlan,
    PlannerConfig,
    PlanningError,
    StartInCollision,
    approach_pose,
    default_offsets,
    execute_path,
    plan_path,
)
from .surrogate import execute_interaction
from .world import (
    HOLDING_SKILLS,
    SceneSpec,
    Skill,
    SymbolicAction,
    WorldState,
    drop_held,
    estimate_object_pose,
    resting_on,
    verify_condition,
)


class NoPriorPick(ValueError):
    pass


class InvalidPlan(ValueError):
    pass


def involves_holding(action: SymbolicAction) -> bool:
    return action.skill in HOLDING_SKILLS


@dataclass(frozen=True)
class Plan:
    actions: tuple

    def __post_init__(self):
        actions = tuple(self.actions)
        object.__setattr__(self, "actions", actions)
        if not actions:
            raise InvalidPlan("plan is empty")
        for i, a in enumerate(actions, start=1):
            if involves_holding(a):
                try:
                    last_pick_index(actions, i)
                except NoPriorPick as exc:
                    raise InvalidPlan(str(exc)) from None

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i):
        return self.actions[i]

    def check_scene(self, state: WorldState) -> None:
        for i, a in enumerate(self.actions, start=1):
            for oid in (a.reference_object, a.target):
                if oid is not None and oid not in state.poses:
                    raise InvalidPlan(f"step {i} {a.describe()}: unknown object {oid!r}")


def last_pick_index(plan, i: int) -> int:
    """Largest 1-based ``j < i`` whose action picks the object step ``i`` transports."""
    actions = plan.actions if isinstance(plan, Plan) else tuple(plan)
    obj = actions[i - 1].reference_object
    for j in range(i - 1, 0, -1):
        a = actions[j - 1]
        if a.skill is Skill.PICK and a.reference_object == obj:
            return j
    raise NoPriorPick(f"no Pick of {obj!r} before step {i}")


@dataclass(frozen=True)
class ExecConfig:
    retry_budget_per_skill: int = 5
    global_step_budget: int = 500
    recovery_enabled: bool = True
    reaching_enabled: bool = True
    masking_enabled: bool = True
    pose_noise: PerturbationSpec = field(default_factory=PerturbationSpec.zero)
    init_perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    h_pick: float = 0.10
    place_clearance: float = 0.20
    safe_z: float = 0.45

    def __post_init__(self):
        if self.retry_budget_per_skill < 1 or self.global_step_budget < 1:
            raise ValueError("budgets must be >= 1")

    @property
    def offsets(self) -> dict:
        return default_offsets(self.h_pick, self.place_clearance)

    def to_dict(self) -> dict:
        return {
            "retry_budget_per_skill": self.retry_budget_per_skill,
            "global_step_budget": self.global_step_budget,
            "recovery_enabled": self.recovery_enabled,
            "reaching_enabled": self.reaching_enabled,
            "masking_enabled": self.masking_enabled,
            "pose_noise": list(self.pose_noise.sigma),
            "init_perturbation": list(self.init_perturbation.sigma),
            "planner": {
                "step_size": self.planner.step_size,
                "clearance_margin": self.planner.clearance_margin,
                "max_iterations": self.planner.max_iterations,
                "goal_tolerance": list(self.planner.goal_tolerance),
                "ee_radius": self.planner.ee_radius,
                "extend_step": self.planner.extend_step,
                "shortcut_rounds": self.planner.shortcut_rounds,
            },
            "h_pick": self.h_pick,
            "place_clearance": self.place_clearance,
            "safe_z": self.safe_z,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExecConfig":
        kw = dict(raw)
        for key in ("pose_noise", "init_perturbation"):
            if key in kw:
                kw[key] = PerturbationSpec(tuple(kw[key]))
        if "planner" in kw:
            kw["planner"] = PlannerConfig.from_dict(kw["planner"])
        unknown = set(kw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown exec config fields: {sorted(unknown)}")
        return cls(**kw)


@dataclass(frozen=True)
class Event:
    kind: str  # Reach | Interact | Verify | Retry | Backtrack | Abort
    index: Optional[int] = None
    ok: Optional[bool] = None
    detail: Mapping = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"event": self.kind}
        if self.index is not None:
            out["index"] = self.index
        if self.ok is not None:
            out["ok"] = self.ok
        out.update(self.detail)
        return out

    @classmethod
    def from_json(cls, raw: Mapping) -> "Event":
        raw = dict(raw)
        raw.pop("seq", None)
        kind = raw.pop("event")
        index = raw.pop("index", None)
        ok = raw.pop("ok", None)
        return cls(kind, index, ok, raw)


@dataclass(frozen=True)
class TrialResult:
    success: bool
    completed_prefix: int
    attempts: int
    trace: tuple
    plan_len: int = 0
    final_state: Optional[WorldState] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.completed_prefix > self.plan_len:
            raise ValueError("completed prefix exceeds plan length")
        if self.success and self.completed_prefix != self.plan_len:
            raise ValueError("success requires the full prefix")


def _prefix(latest: list) -> int:
    n = 0
    for ok in latest:
        if not ok:
            break
        n += 1
    return n


def run_plan(
    scene,
    plan: Plan,
    cfg: ExecConfig,
    models: Mapping,
    rng: np.random.Generator,
) -> TrialResult:
    """Execute ``plan`` from ``scene`` (a SceneSpec or WorldState).

    Per step: estimate the frame object's pose, plan and drive to its
    approach pose, run the interaction skill, verify. A failed transport
    skill backtracks to the Pick that acquired its object; any other
    failure retries in place. Terminates on success, on retry-budget or
    global event-budget exhaustion, or on the first failure when recovery
    is disabled.
    """
    state = scene.initial_state() if isinstance(scene, SceneSpec) else scene
    plan.check_scene(state)
    n = len(plan)
    offsets = cfg.offsets
    trace: list = []
    failures = [0] * (n + 1)
    latest = [False] * n
    attempts = 0
    i = 1

    def finish(success: bool) -> TrialResult:
        return TrialResult(success, _prefix(latest), attempts, tuple(trace), n, state)

    while i <= n:
        if len(trace) + 5 > cfg.global_step_budget:
            trace.append(Event("Abort", i, detail={"reason": "global_step_budget"}))
            return finish(False)
        action = plan[i - 1]

        reach_detail = {}
        if not involves_holding(action) and state.held is not None:
            reach_detail["released"] = state.held
            state = drop_held(state, rng)

        estimate = estimate_object_pose(state, action, cfg.pose_noise, rng)
        reached = True
        if cfg.reaching_enabled:
            state, reached, info = _reach(state, action, estimate, cfg, offsets, rng)
            reach_detail.update(info)
            trace.append(Event("Reach", i, reached, reach_detail))
        else:
            trace.append(Event("Reach", i, None, {"skipped": True, **reach_detail}))

        if reached:
            before = state
            state, outcome = execute_interaction(
                state, action, models[action.skill], cfg.masking_enabled, rng, offsets
            )
            attempts += 1
            trace.append(Event("Interact", i, outcome.success, {
                "skill": action.skill.value,
                "failure_mode": None if outcome.success else outcome.failure_mode.value,
                "pose_error": [round(e, 6) for e in outcome.pose_error_at_start],
                "p": round(outcome.probability, 6),
                "clutter": outcome.clutter,
            }))
            ok = verify_condition(before, state, action)
            trace.append(Event("Verify", i, ok))
        else:
            ok = False

        latest[i - 1] = ok
        if ok:
            i += 1
            continue

        failures[i] += 1
        if not cfg.recovery_enabled:
            trace.append(Event("Abort", i, detail={"reason": "recovery_disabled"}))
            return finish(False)
        if failures[i] > cfg.retry_budget_per_skill:
            trace.append(Event("Abort", i, detail={"reason": "retry_budget"}))
            return finish(False)
        if involves_holding(action) and reached:
            j = last_pick_index(plan, i)
            detail = {"to": j}
            if state.held is not None:
                detail["released"] = state.held
                state = drop_held(state, rng, avoid=action.target)
            trace.append(Event("Backtrack", i, detail=detail))
            i = j
        else:
            trace.append(Event("Retry", i))

    return finish(True)


def _reach(state: WorldState, action: SymbolicAction, estimate: Pose, cfg: ExecConfig, offsets, rng):
    frame = compose(estimate, Pose(t=action.offset))
    goal = approach_pose(frame, action.skill, offsets)
    ignore = {action.frame_object} | resting_on(state, action.frame_object)
    info = {}
    try:
        try:
            plan = plan_path(state, state.ee_pose, goal, cfg.planner, rng, ignore)
        except StartInCollision:
            ee = state.ee_pose
            state = state.with_ee(Pose(ee.q, (ee.t[0], ee.t[1], max(ee.t[2], cfg.safe_z))))
            info["retracted"] = True
            plan = plan_path(state, state.ee_pose, goal, cfg.planner, rng, ignore)
    except PlanningError as exc:
        info["error"] = type(exc).__name__
        return state, False, info
    state = execute_path(state, plan)
    state = state.with_ee(sample_perturbed_init(goal, cfg.init_perturbation, rng))
    info.update(method=plan.stats.method, waypoints=len(plan), iterations=plan.stats.iterations)
    return state, True, info


# ---------------------------------------------------------------------------
# Trace I/O


def write_trace_jsonl(result: TrialResult, path, header: Optional[Mapping] = None) -> None:
    path = Path(path)
    with path.open("w") as fh:
        if header is not None:
            fh.write(json.dumps({"event": "Trial", **header}, sort_keys=True) + "\n")
        for seq, ev in enumerate(result.trace):
            fh.write(json.dumps({"seq": seq, **ev.to_json()}, sort_keys=True) + "\n")


def read_trace_jsonl(path) -> list:
    events = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        if raw.get("event") == "Trial":
            continue
        events.append(Event.from_json(raw))
    return events


def explain(result: TrialResult, plan: Optional[Plan] = None) -> str:
    """Human-readable rendering of a trial trace."""
    status = "SUCCESS" if result.success else "FAILED"
    head = f"{status}: {result.completed_prefix}/{result.plan_len} skills, {result.attempts} attempts"
    return explain_events(result.trace, plan, head)


def explain_events(events, plan: Optional[Plan] = None, headline: str = "") -> str:
    lines = [headline] if headline else []
    for ev in events:
        name = ""
        if plan is not None and ev.index is not None and 1 <= ev.index <= len(plan):
            name = plan[ev.index - 1].describe()
        flag = {True: "ok", False: "FAIL", None: ""}[ev.ok]
        extra = ", ".join(f"{k}={v}" for k, v in ev.detail.items() if v is not None)
        idx = ev.index if ev.index is not None else "-"
        lines.append(f"  [{idx:>2}] {ev.kind:<9} {flag:<4} {name} {extra}".rstrip())
    return "\n".join(lines)
