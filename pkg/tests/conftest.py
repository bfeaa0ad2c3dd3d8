import numpy as np
import pytest
from hypothesis import settings

from skillchain.geometry import Pose
from skillchain.surrogate import SkillModel
from skillchain.world import FailureMode, Kind, ObjectSpec, SceneSpec, Skill

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")


def make_scene(extra=(), cube_at=(0.1, 0.0)):
    """Cube, basket and plate on an empty table, plus optional extra (spec, pose) pairs."""
    objs = [
        (ObjectSpec("cube", (0.02, 0.02, 0.02)), Pose(t=(cube_at[0], cube_at[1], 0.02))),
        (ObjectSpec("basket", (0.1, 0.1, 0.05), Kind.RECEPTACLE), Pose(t=(-0.2, 0.2, 0.05))),
        (ObjectSpec("plate", (0.08, 0.08, 0.01), Kind.SURFACE), Pose(t=(0.25, -0.2, 0.01))),
        *extra,
    ]
    return SceneSpec(
        "unit",
        tuple(o for o, _ in objs),
        {o.id: p for o, p in objs},
        {o.id: 0.0 for o, _ in objs if o.kind.articulated},
    )


def perfect_models(**overrides):
    kw = dict(base_success=1.0, failure_mode_weights={"no_op": 1.0})
    kw.update(overrides)
    return {s: SkillModel(**kw) for s in Skill}


@pytest.fixture
def scene():
    return make_scene()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class ConstantModel:
    """Test double: every attempt succeeds independently with probability ``p``."""

    lift_height = 0.08
    horizon = 60

    def __init__(self, p):
        self.p = p

    def probability(self, pose_err, clutter, masking_on):
        return self.p

    def draw_success(self, p, rng):
        return bool(rng.random() < p)

    def draw_failure_mode(self, rng):
        return FailureMode.NO_OP


def cube_row_scene(n=10):
    extra = [(ObjectSpec(f"c{k}", (0.015,) * 3), Pose(t=(-0.36 + 0.08 * k, -0.4, 0.015))) for k in range(n)]
    return make_scene(extra)


_ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; call with (number, ok, detail)."""

    def record(number, ok, detail=""):
        _ACCEPTANCE[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
