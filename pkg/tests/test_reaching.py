import numpy as np
import pytest

from oracles import held_box_path_clear, over_the_top_clear, random_obstacle_case, sphere_path_clear
from skillchain.geometry import Pose, compose
from skillchain.reaching import (
    FACE_DOWN,
    GoalInCollision,
    PathPlan,
    PlannerConfig,
    PlanningTimeout,
    StartInCollision,
    approach_pose,
    default_offsets,
    execute_path,
    plan_path,
    segment_collision_free,
)
from skillchain.world import ObjectSpec, SceneSpec, Skill

CFG = PlannerConfig()


def wall_state():
    wall = ObjectSpec("wall", (0.02, 0.4, 0.25))
    s = SceneSpec("wall", (wall,), {"wall": Pose(t=(0.0, 0.0, 0.25))}, {}).initial_state()
    return s


def test_approach_pose_is_face_down_above_object():
    obj = Pose.from_yaw(0.3, (0.1, 0.2, 0.05))
    p = approach_pose(obj, Skill.PICK, default_offsets())
    assert np.allclose(p.t, (0.1, 0.2, 0.15))
    assert np.allclose(p.matrix(), compose(obj, Pose(FACE_DOWN.q, (0, 0, 0.1))).matrix())


def test_straight_line_when_clear(rng):
    s = wall_state()
    a, b = Pose(t=(0.2, 0.1, 0.3)), Pose(t=(0.3, -0.1, 0.2))
    plan = plan_path(s, a, b, CFG, rng)
    assert plan.stats.method == "straight" and plan.waypoints == (a, b)


def test_detour_around_wall_is_valid(rng):
    s = wall_state()
    a, b = Pose(t=(-0.2, 0.0, 0.2)), Pose(t=(0.2, 0.0, 0.2))
    plan = plan_path(s, a, b, CFG, rng)
    assert plan.stats.method == "rrt-connect"
    assert plan.waypoints[0] == a and plan.waypoints[-1] == b
    boxes = [s.aabb("wall")]
    assert sphere_path_clear([w.t for w in plan.waypoints], boxes, CFG.ee_radius)
    for w0, w1 in zip(plan.waypoints, plan.waypoints[1:]):
        assert segment_collision_free(w0, w1, s, CFG)


def test_start_and_goal_collisions_raise(rng):
    s = wall_state()
    inside = Pose(t=(0.0, 0.0, 0.2))
    free = Pose(t=(0.3, 0.0, 0.2))
    with pytest.raises(StartInCollision):
        plan_path(s, inside, free, CFG, rng)
    with pytest.raises(GoalInCollision):
        plan_path(s, free, inside, CFG, rng)


def test_timeout_when_goal_is_enclosed(rng):
    # goal boxed in by four walls and a lid
    parts = {
        "n": ((0.1, 0.01, 0.1), (0.0, 0.11, 0.1)),
        "s": ((0.1, 0.01, 0.1), (0.0, -0.11, 0.1)),
        "e": ((0.01, 0.1, 0.1), (0.11, 0.0, 0.1)),
        "w": ((0.01, 0.1, 0.1), (-0.11, 0.0, 0.1)),
        "lid": ((0.12, 0.12, 0.01), (0.0, 0.0, 0.21)),
    }
    objs = tuple(ObjectSpec(k, he) for k, (he, _) in parts.items())
    s = SceneSpec("cage", objs, {k: Pose(t=c) for k, (_, c) in parts.items()}, {}).initial_state()
    with pytest.raises(PlanningTimeout):
        plan_path(s, Pose(t=(0.3, 0.3, 0.3)), Pose(t=(0.0, 0.0, 0.1)), PlannerConfig(max_iterations=300), rng)


def test_ignored_objects_are_not_obstacles(rng):
    s = wall_state()
    a, b = Pose(t=(-0.2, 0.0, 0.2)), Pose(t=(0.2, 0.0, 0.2))
    plan = plan_path(s, a, b, CFG, rng, ignore={"wall"})
    assert plan.stats.method == "straight"


def test_held_object_box_is_checked(rng):
    cube = ObjectSpec("cube", (0.03, 0.03, 0.03))
    post = ObjectSpec("post", (0.03, 0.03, 0.12))
    scene = SceneSpec("held", (cube, post), {"cube": Pose(t=(-0.25, 0, 0.03)), "post": Pose(t=(0.0, 0.0, 0.12))}, {})
    s = scene.initial_state().with_ee(Pose(FACE_DOWN.q, (-0.25, 0, 0.06))).attach("cube")
    s = s.with_ee(Pose(FACE_DOWN.q, (-0.25, 0, 0.28)))
    # the ee sphere alone clears the post top (0.24) but the hanging cube does not
    goal = Pose(FACE_DOWN.q, (0.25, 0, 0.28))
    plan = plan_path(s, s.ee_pose, goal, CFG, rng)
    assert plan.stats.method == "rrt-connect"
    rel = np.subtract(s.aabb("cube"), s.ee_pose.t)
    assert held_box_path_clear([w.t for w in plan.waypoints], rel[0], rel[1], [s.aabb("post")])
    moved = execute_path(s, plan)
    assert np.allclose(moved.pose("cube").matrix(), compose(goal, s.attachment.grasp).matrix(), atol=1e-12)


def test_single_waypoint_path_leaves_state():
    s = wall_state()
    assert execute_path(s, PathPlan((s.ee_pose,))) == s


def test_random_scenes_valid_and_deterministic():
    for seed in range(25):
        state, start, goal = random_obstacle_case(seed)
        clear = CFG.ee_radius + CFG.clearance_margin
        if not over_the_top_clear(state, start, goal, clear):
            continue
        p1 = plan_path(state, start, goal, CFG, np.random.default_rng(seed))
        p2 = plan_path(state, start, goal, CFG, np.random.default_rng(seed))
        assert p1.waypoints == p2.waypoints
        boxes = [state.aabb(k) for k in state.poses]
        assert sphere_path_clear([w.t for w in p1.waypoints], boxes, CFG.ee_radius)
