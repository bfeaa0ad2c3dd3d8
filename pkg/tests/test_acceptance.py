"""One test per acceptance criterion, at the stated tolerances and budgets."""

import json
import math
import time
from pathlib import Path

import numpy as np

from conftest import ConstantModel, cube_row_scene, make_scene, perfect_models
from oracles import chain_success, over_the_top_clear, random_obstacle_case, sphere_path_clear
from skillchain.benchmark.library import load_library
from skillchain.benchmark.linearize import PartialOrder, count_linearizations
from skillchain.benchmark.metrics import compute_metrics, trial_outcome
from skillchain.benchmark.runner import (
    SIGNIFICANCE,
    Matrix,
    ablation_configs,
    perturbation_robustness,
    run_matrix,
)
from skillchain.executive import Event, ExecConfig, Plan, last_pick_index, run_plan
from skillchain.geometry import PerturbationSpec, Pose, Twist, exp_map, log_map, compose, relative_pose, sample_perturbed_init
from skillchain.masking import EraseConfig, Image, SegMask, random_erase_background, write_ppm
from skillchain.reaching import PlannerConfig, PlanningError, plan_path
from skillchain.surrogate import ScriptedSkillModel
from skillchain.world import Skill, SymbolicAction

GOLDEN = json.loads((Path(__file__).parent / "golden" / "skill_tables.json").read_text())


def random_pose(rng):
    q = rng.normal(size=4)
    return Pose(tuple(q), tuple(rng.uniform(-2, 2, size=3)))


def test_c01_se3_round_trip(criterion):
    rng = np.random.default_rng(101)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        axis = rng.normal(size=3)
        omega = axis / np.linalg.norm(axis) * rng.uniform(0, math.pi - 0.01)
        xi = Twist(tuple(omega), tuple(rng.uniform(-1, 1, size=3)))
        worst = max(worst, float(np.max(np.abs(log_map(exp_map(xi)).as_array() - xi.as_array()))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 1.0
    criterion(1, ok, f"max |log(exp(xi)) - xi| = {worst:.2e}, {elapsed:.3f} s")
    assert ok


def test_c02_relative_pose_invariance(criterion):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(1000):
        g, a, b = random_pose(rng), random_pose(rng), random_pose(rng)
        lhs = relative_pose(compose(g, a), compose(g, b)).matrix()
        rhs = relative_pose(a, b).matrix()
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    ok = worst < 1e-12
    criterion(2, ok, f"max matrix deviation = {worst:.2e}")
    assert ok


def test_c03_perturbation_sampling(criterion):
    rng = np.random.default_rng(303)
    approach = Pose.from_axis_angle((0.2, -1.0, 0.4), 2.1, (0.1, 0.3, 0.25))
    exact = sample_perturbed_init(approach, PerturbationSpec.zero(), rng) == approach
    spec = PerturbationSpec()
    xs = np.array([
        log_map(relative_pose(approach, sample_perturbed_init(approach, spec, rng))).as_array()
        for _ in range(10_000)
    ])
    rel = xs.std(axis=0) / np.array(spec.sigma) - 1.0
    ok = exact and bool(np.all(np.abs(rel) < 0.05))
    criterion(3, ok, f"zero-sigma exact={exact}, worst std deviation {np.max(np.abs(rel)):.2%}")
    assert ok


def test_c04_linearization_counts(criterion):
    counts = {}
    t0 = time.perf_counter()
    for m in range(1, 5):
        po = PartialOrder.independent_pairs(m)
        counts[m] = (count_linearizations(po, "brute_force"), count_linearizations(po, "formula_independent_pairs"))
    elapsed = time.perf_counter() - t0
    ok = [c for c, _ in counts.values()] == [1, 6, 90, 2520] and all(a == b for a, b in counts.values()) and elapsed < 10
    criterion(4, ok, f"brute/formula {[c for c, _ in counts.values()]}, {elapsed:.2f} s")
    assert ok


def test_c05_chain_oracle(criterion):
    n, p, retries, trials = 10, 0.7, 5, 10_000
    scene = cube_row_scene(n)
    plan = Plan(tuple(SymbolicAction(Skill.PICK, f"c{k}") for k in range(n)))
    models = {s: ConstantModel(p) for s in Skill}
    t0 = time.perf_counter()
    out = {}
    for recovery in (True, False):
        cfg = ExecConfig(reaching_enabled=False, recovery_enabled=recovery, retry_budget_per_skill=retries)
        rng = np.random.default_rng(505 + recovery)
        wins = sum(run_plan(scene, plan, cfg, models, rng).success for _ in range(trials))
        want = chain_success(p, retries, n) if recovery else p**n
        sigma = math.sqrt(want * (1 - want) / trials)
        out[recovery] = (wins / trials, want, abs(wins / trials - want) <= 3 * sigma)
    elapsed = time.perf_counter() - t0
    ok = out[True][2] and out[False][2] and elapsed < 30
    criterion(5, ok, f"SR {out[True][0]:.4f} vs {out[True][1]:.5f}; no recovery {out[False][0]:.4f} vs {out[False][1]:.4f}; {elapsed:.1f} s")
    assert ok


def test_c06_backtrack_trace(criterion):
    plan = Plan((
        SymbolicAction(Skill.PICK, "cube"),
        SymbolicAction(Skill.PLACE, "cube", {"target": "basket"}),
    ))
    models = perfect_models()
    models[Skill.PLACE] = ScriptedSkillModel(["object_dropped", True])
    cfg = ExecConfig(init_perturbation=PerturbationSpec.zero())
    r = run_plan(make_scene(), plan, cfg, models, np.random.default_rng(6))
    backs = [e for e in r.trace if e.kind == "Backtrack"]
    ok = len(backs) == 1 and backs[0].detail["to"] == last_pick_index(plan, 2) == 1 and r.success
    criterion(6, ok, f"{len(backs)} backtrack(s) to step {backs[0].detail['to'] if backs else None}, success={r.success}")
    assert ok


def test_c07_ablation_ordering(criterion):
    t0 = time.perf_counter()
    report, _ = run_matrix(Matrix(tuple(ablation_configs()), "all", 24, 7))
    sr = {name: report.summary[name]["all"]["sr"] for name in report.configs()}
    order = ["full", "w/o masking", "w/o recovery", "w/o reaching"]
    ordered = all(sr[a] > sr[b] for a, b in zip(order, order[1:]))
    reach_floor = sr["w/o reaching"] < 0.01
    configs = tuple(c for c in ablation_configs() if c.name in ("full", "w/o recovery"))
    rec, _ = run_matrix(Matrix(configs, "ultra", 56, 7))
    (test,) = rec.tests
    significant = test["p"] < SIGNIFICANCE
    elapsed = time.perf_counter() - t0
    ok = ordered and reach_floor and significant and elapsed < 120
    trials = report.summary["full"]["all"]["trials"]
    criterion(7, ok, " > ".join(f"{k} {sr[k]:.3f}" for k in order)
              + f" ({trials}/config); Ultra-Long recovery z={test['z']:.1f} p={test['p']:.1e} at {test['trials'][0]}/arm; {elapsed:.0f} s")
    assert ok


def test_c08_perturbation_robustness(criterion):
    noise = PerturbationSpec()
    res = perturbation_robustness(noise, executions=10_000, seed=8)
    w, wo = res["variants"]["with perturb"], res["variants"]["w/o perturb"]
    wide = all(r >= 2 * s for r, s in zip(w["training_radius"], (noise.sigma[3], noise.sigma[0])))
    ok = wide and w["relative_drop"] < 0.05 and wo["relative_drop"] > 0.15
    criterion(8, ok, f"with perturb {w['clean']:.3f}->{w['noisy']:.3f} ({w['relative_drop']:.1%}); "
                     f"w/o perturb {wo['clean']:.3f}->{wo['noisy']:.3f} ({wo['relative_drop']:.1%})")
    assert ok


def test_c09_masking_invariants(criterion, tmp_path):
    cfg = EraseConfig()
    rng = np.random.default_rng(909)
    preserved = True
    for k in range(100):
        w, h = int(rng.integers(32, 128)), int(rng.integers(32, 128))
        img = Image(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))
        fg = rng.random((h, w)) < rng.uniform(0, 0.6)
        res = random_erase_background(img, SegMask(fg), cfg, np.random.default_rng(k))
        preserved &= bool(np.array_equal(res.image.pixels[fg], img.pixels[fg]))
    worst = 0.0
    for k in range(100):
        w, h = int(rng.integers(32, 128)), int(rng.integers(32, 128))
        res = random_erase_background(Image.filled(w, h), SegMask.empty(w, h), cfg, np.random.default_rng(k))
        worst = max(worst, abs(res.achieved_ratio - res.target_ratio))
    img = Image(rng.integers(0, 256, size=(64, 80, 3), dtype=np.uint8))
    mask = SegMask(rng.random((64, 80)) < 0.3)
    for name in ("a", "b"):
        write_ppm(tmp_path / f"{name}.ppm", random_erase_background(img, mask, cfg, np.random.default_rng(1)).image)
    same = (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
    ok = preserved and worst <= 0.02 and same
    criterion(9, ok, f"foreground preserved={preserved}, worst ratio error {worst:.4f}, byte-exact={same}")
    assert ok


def test_c10_metric_rules(criterion):
    V = lambda i, ok=True: Event("Verify", i, ok)  # noqa: E731
    cases = [
        ([V(1), V(2), V(3)], (True, 3)),
        ([V(1), V(3), V(2), V(3)], (False, 1)),          # out of order: void and halt
        ([V(1), V(2, False), V(1), V(2), V(3)], (True, 3)),  # recovered steps count
        ([V(1), V(2), V(1, False)], (False, 0)),        # latest verification rules
        ([V(1), V(2), Event("Abort", 3)], (False, 2)),
    ]
    got = [trial_outcome(t, 3) for t, _ in cases]
    m = compute_metrics([t for t, _ in cases], plan_len=3)
    ok = got == [w for _, w in cases] and m.sr == 0.4 and abs(m.ap - (3 + 1 + 3 + 0 + 2) / 15) < 1e-12
    criterion(10, ok, f"{sum(g == w for g, (_, w) in zip(got, cases))}/{len(cases)} traces, SR {m.sr:.2f} AP {m.ap:.3f}")
    assert ok


def test_c11_data_integrity(criterion):
    lib = load_library()
    skills_ok = len(lib.skills) == 22 and {k: s.description for k, s in lib.skills.items()} == GOLDEN["skills"]
    tasks_ok = len(lib.tasks) == 21 and all(
        t.id == tid and len(t) == steps and t.sequence == tuple(f"S{k}" for k in seq.split())
        for t, (tid, _, _, steps, seq) in zip(lib.tasks, GOLDEN["tasks"])
    )
    ok = skills_ok and tasks_ok
    criterion(11, ok, f"{len(lib.skills)} skills, {len(lib.tasks)} tasks vs golden tables")
    assert ok


def test_c12_planner_validity(criterion):
    cfg = PlannerConfig()
    clearance = cfg.ee_radius + cfg.clearance_margin
    returned = invalid = reachable = solved = 0
    deterministic = True
    for seed in range(100):
        state, start, goal = random_obstacle_case(seed, blocking=seed % 2 == 0)
        is_reachable = over_the_top_clear(state, start, goal, clearance)
        reachable += is_reachable
        try:
            plan = plan_path(state, start, goal, cfg, np.random.default_rng(seed))
        except PlanningError:
            continue
        returned += 1
        solved += is_reachable
        boxes = [state.aabb(k) for k in state.poses]
        invalid += not sphere_path_clear([w.t for w in plan.waypoints], boxes, cfg.ee_radius)
        again = plan_path(state, start, goal, cfg, np.random.default_rng(seed))
        deterministic &= again.waypoints == plan.waypoints
    rate = solved / reachable if reachable else 0.0
    ok = invalid == 0 and rate >= 0.99 and deterministic and reachable > 0
    criterion(12, ok, f"{returned} plans, {invalid} oracle violations, {solved}/{reachable} reachable solved, deterministic={deterministic}")
    assert ok
