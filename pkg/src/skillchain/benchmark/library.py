"""Skill library, task table and binding of class-level tasks to scene instances.

Library skills name object *classes* ("black_bowl"); scenes hold instances
("black_bowl_1", "black_bowl_2", or a bare "basket"). Binding walks a task's
sequence and resolves each class to a concrete id.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional

import numpy as np

from ..executive import Plan
from ..geometry import Pose, compose
from ..world import (
    HOLDING_SKILLS,
    ObjectSpec,
    SceneError,
    SceneSpec,
    Skill,
    SymbolicAction,
    aabb_of,
    parse_scene,
)

SUITES = ("LiberoLongPP", "UltraLong")
SUITE_ALIASES = {
    "long++": ("LiberoLongPP",),
    "libero-long++": ("LiberoLongPP",),
    "liberolongpp": ("LiberoLongPP",),
    "ultra": ("UltraLong",),
    "ultralong": ("UltraLong",),
    "all": SUITES,
}
EXPECTED_STEPS = (3, 3, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 9, 9, 9, 10, 10, 10, 16, 16, 16)
DISTRACTOR_COUNT = (4, 8)


class LibraryError(ValueError):
    pass


@dataclass(frozen=True)
class LibrarySkill:
    id: str
    skill: Skill
    object: str
    target: Optional[str] = None
    offset: Optional[tuple] = None
    description: str = ""


@dataclass(frozen=True)
class TaskSpec:
    id: str
    name: str
    suite: str
    variant: str
    scene: str
    sequence: tuple

    def __len__(self):
        return len(self.sequence)


@dataclass(frozen=True)
class SkillLibrary:
    skills: dict
    tasks: tuple

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    def suite(self, selector: str = "all") -> tuple:
        names = SUITE_ALIASES.get(selector.lower(), None) if selector else SUITES
        if names is None:
            if selector in SUITES:
                names = (selector,)
            else:
                raise LibraryError(f"unknown suite {selector!r}; use long++, ultra or all")
        return tuple(t for t in self.tasks if t.suite in names)


def parse_library(doc, source: str = "library.json") -> SkillLibrary:
    skills = {}
    for sid, raw in doc["skills"].items():
        try:
            skill = Skill(raw["skill"])
        except (KeyError, ValueError):
            raise LibraryError(f"{source}: skills.{sid}: bad skill category {raw.get('skill')!r}") from None
        if skill in HOLDING_SKILLS and not raw.get("target"):
            raise LibraryError(f"{source}: skills.{sid}: {skill.value} needs a target")
        offset = tuple(float(v) for v in raw["offset"]) if "offset" in raw else None
        skills[sid] = LibrarySkill(sid, skill, raw["object"], raw.get("target"), offset, raw.get("description", ""))
    tasks = []
    seen = set()
    for k, raw in enumerate(doc["tasks"]):
        tid = raw["id"]
        if tid in seen:
            raise LibraryError(f"{source}: tasks[{k}]: duplicate id {tid}")
        seen.add(tid)
        if raw["suite"] not in SUITES:
            raise LibraryError(f"{source}: tasks[{k}].suite: unknown suite {raw['suite']!r}")
        for sid in raw["sequence"]:
            if sid not in skills:
                raise LibraryError(f"{source}: tasks[{k}].sequence: unknown skill {sid}")
        tasks.append(TaskSpec(tid, raw["name"], raw["suite"], raw.get("variant", ""), raw["scene"], tuple(raw["sequence"])))
    return SkillLibrary(skills, tuple(tasks))


@lru_cache(maxsize=1)
def load_library() -> SkillLibrary:
    text = resources.files("skillchain.data").joinpath("library.json").read_text()
    return parse_library(json.loads(text))


@lru_cache(maxsize=None)
def load_builtin_scene(name: str) -> SceneSpec:
    node = resources.files("skillchain.data").joinpath("scenes", f"{name}.json")
    if not node.is_file():
        raise SceneError(f"no built-in scene {name!r}", f"scenes/{name}.json")
    return parse_scene(node.read_text(), f"scenes/{name}.json")


def instances(scene: SceneSpec, cls: str) -> list:
    pat = re.compile(rf"^{re.escape(cls)}(_\d+)?$")
    found = [o.id for o in scene.objects if pat.match(o.id) and not o.is_distractor]
    return sorted(found, key=lambda s: (len(s), s))


def bind_task(task: TaskSpec, scene: SceneSpec, library: Optional[SkillLibrary] = None) -> Plan:
    """Resolve class names to scene ids.

    Picks take the first instance not yet transported by an earlier step.
    Transport skills move the instance currently in hand. Place targets take
    the first instance not yet used as a target (falling back to the first);
    Stack targets the most recently transported instance of the target class.
    """
    library = library or load_library()
    moved: list = []
    used_targets: set = set()
    held = None
    actions = []
    for step, sid in enumerate(task.sequence, start=1):
        entry = library.skills[sid]
        pool = instances(scene, entry.object)
        if not pool:
            raise LibraryError(f"{task.id} step {step} ({sid}): scene {scene.name} has no {entry.object}")
        if entry.skill is Skill.PICK:
            fresh = [i for i in pool if i not in moved]
            held = fresh[0] if fresh else pool[0]
            actions.append(SymbolicAction(Skill.PICK, held))
        elif entry.skill in HOLDING_SKILLS:
            if held is None or held not in pool:
                raise LibraryError(f"{task.id} step {step} ({sid}): nothing of class {entry.object} in hand")
            targets = [i for i in instances(scene, entry.target) if i != held]
            if not targets:
                raise LibraryError(f"{task.id} step {step} ({sid}): scene {scene.name} has no {entry.target}")
            if entry.skill is Skill.STACK:
                prior = [m for m in moved if m in targets]
                target = prior[-1] if prior else targets[0]
            else:
                free = [t for t in targets if t not in used_targets]
                target = free[0] if free else targets[0]
            used_targets.add(target)
            params = {"target": target}
            if entry.offset is not None:
                params["offset"] = entry.offset
            actions.append(SymbolicAction(entry.skill, held, params))
            if held in moved:
                moved.remove(held)
            moved.append(held)
            held = None
        else:
            actions.append(SymbolicAction(entry.skill, pool[0]))
    return Plan(tuple(actions))


def add_distractors(scene: SceneSpec, rng: np.random.Generator, count_range=DISTRACTOR_COUNT, keepout=()) -> SceneSpec:
    """Scatter small boxes over free table space.

    ``keepout`` lists extra (x, y, radius) discs to keep clear, e.g. offset
    placement spots. Placement is rejection-sampled; a count that cannot be
    placed after many tries is silently reduced.
    """
    lo_n, hi_n = count_range
    n = int(rng.integers(lo_n, hi_n + 1))
    state = scene.initial_state()
    rects = []
    for oid in state.poses:
        lo, hi = state.aabb(oid)
        rects.append((lo[0], lo[1], hi[0], hi[1]))
    discs = list(keepout)
    (bx0, by0, _), (bx1, by1, _) = scene.bounds
    extra, poses = [], {}
    gap = 0.03
    for k in range(n):
        for _ in range(200):
            he = (float(rng.uniform(0.015, 0.03)), float(rng.uniform(0.015, 0.03)), float(rng.uniform(0.015, 0.04)))
            x = float(rng.uniform(bx0 + 0.06, bx1 - 0.06))
            y = float(rng.uniform(by0 + 0.06, by1 - 0.06))
            box = (x - he[0] - gap, y - he[1] - gap, x + he[0] + gap, y + he[1] + gap)
            if any(box[0] < r[2] and r[0] < box[2] and box[1] < r[3] and r[1] < box[3] for r in rects):
                continue
            if any((x - cx) ** 2 + (y - cy) ** 2 < (rad + max(he[:2])) ** 2 for cx, cy, rad in discs):
                continue
            oid = f"distractor_{k + 1}"
            color = tuple(int(c) for c in rng.integers(40, 230, size=3))
            extra.append(ObjectSpec(oid, he, "rigid", True, color))
            pose = Pose.from_translation(x, y, he[2])
            poses[oid] = pose
            blo, bhi = aabb_of(pose, he)
            rects.append((blo[0], blo[1], bhi[0], bhi[1]))
            break
    return scene.with_objects(extra, poses)


def offset_keepout(scene: SceneSpec, plan: Plan, radius: float = 0.08) -> list:
    """Discs around offset placement spots, so distractors never occupy them."""
    out = []
    for a in plan.actions:
        if "offset" in a.params:
            x, y, _ = compose(scene.initial_poses[a.target], Pose(t=a.offset)).t
            out.append((x, y, radius))
    return out
