"""Suite runs, the ablation matrix, significance tests and the perturbation sweep."""

from __future__ import annotations

import hashlib
import json
import math
import platform
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .. import __version__
from ..executive import ExecConfig, Plan, TrialResult, run_plan
from ..geometry import PerturbationSpec, sample_perturbed_init
from ..surrogate import (
    SkillModelError,
    apply_skill_effect,
    canonical_approach,
    execute_interaction,
    load_skill_models,
    parse_skill_models,
    with_training_radius,
)
from ..world import HOLDING_SKILLS, SceneSpec, drop_held
from .library import (
    DISTRACTOR_COUNT,
    SkillLibrary,
    TaskSpec,
    add_distractors,
    bind_task,
    load_builtin_scene,
    load_library,
    offset_keepout,
)
from .metrics import Metrics, average, compute_metrics, trial_outcome

NO_PERTURB_RADIUS = (0.001, 0.001)
SIGNIFICANCE = 0.01


class ConfigError(ValueError):
    """Bad configuration input; the CLI maps it to exit code 2."""


class InvariantViolation(RuntimeError):
    """A result broke a guaranteed property; the CLI maps it to exit code 3."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class RunConfig:
    name: str = "full"
    exec: ExecConfig = field(default_factory=ExecConfig)
    models: Optional[Mapping] = None  # None -> shipped defaults
    training_radius: Optional[tuple] = None
    distractors: tuple = DISTRACTOR_COUNT

    def skill_models(self) -> dict:
        models = dict(self.models) if self.models is not None else load_skill_models()
        if self.training_radius is not None:
            models = with_training_radius(models, self.training_radius)
        return models

    def manifest(self) -> dict:
        return {
            "exec": self.exec.to_dict(),
            "training_radius": list(self.training_radius) if self.training_radius else None,
            "distractors": list(self.distractors),
            "skill_models": {k.value: m.to_dict() for k, m in sorted(self.skill_models().items(), key=lambda kv: kv[0].value)},
        }


_RUN_KEYS = {"exec", "skill_models", "training_radius", "distractors"}


def parse_run_config(doc: Mapping, name: str = "full", base: Optional[RunConfig] = None, source: str = "<config>") -> RunConfig:
    """Overlay ``doc`` (see docs/formats.md) on ``base``."""
    base = base or RunConfig()
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{source}: config must be a JSON object")
    unknown = set(doc) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown fields {sorted(unknown)}")
    cfg = replace(base, name=name)
    if "exec" in doc:
        merged = base.exec.to_dict()
        planner = dict(merged.pop("planner"))
        raw = dict(doc["exec"])
        planner.update(raw.pop("planner", {}))
        merged.update(raw)
        merged["planner"] = planner
        try:
            cfg = replace(cfg, exec=ExecConfig.from_dict(merged))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: exec: {exc}") from None
    if "skill_models" in doc:
        spec = doc["skill_models"]
        try:
            if isinstance(spec, str):
                path = Path(source).parent / spec if source and not Path(spec).is_absolute() else Path(spec)
                models = load_skill_models(path)
            else:
                models = parse_skill_models(spec, source)
        except (OSError, json.JSONDecodeError, SkillModelError) as exc:
            raise ConfigError(f"{source}: skill_models: {exc}") from None
        cfg = replace(cfg, models=models)
    if "training_radius" in doc:
        tr = doc["training_radius"]
        if tr is not None and (len(tr) != 2 or any(not (float(v) > 0) for v in tr)):
            raise ConfigError(f"{source}: training_radius must be two positive numbers")
        cfg = replace(cfg, training_radius=None if tr is None else tuple(float(v) for v in tr))
    if "distractors" in doc:
        lo, hi = doc["distractors"]
        if not 0 <= int(lo) <= int(hi):
            raise ConfigError(f"{source}: distractors must be [min, max] with 0 <= min <= max")
        cfg = replace(cfg, distractors=(int(lo), int(hi)))
    return cfg


def load_run_config(path, name: str = "full") -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return parse_run_config(doc, name, source=str(path))


def ablation_configs(base: Optional[RunConfig] = None, include_perturb: bool = False) -> list:
    base = base or RunConfig()
    e = base.exec
    out = [
        replace(base, name="full"),
        replace(base, name="w/o masking", exec=replace(e, masking_enabled=False)),
        replace(base, name="w/o recovery", exec=replace(e, recovery_enabled=False)),
        replace(base, name="w/o reaching", exec=replace(e, reaching_enabled=False)),
    ]
    if include_perturb:
        out.append(replace(base, name="w/o perturb", training_radius=NO_PERTURB_RADIUS))
    return out


@dataclass(frozen=True)
class Matrix:
    configs: tuple
    suite: str = "all"
    trials: int = 10
    seed: int = 0


def load_matrix(path) -> Matrix:
    """Matrix file: ``{"suite", "trials", "seed", "base", "configs": {name: overlay}}``.

    ``"configs": "ablations"`` expands to the standard ablation set.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    base = parse_run_config(doc.get("base", {}), source=str(path))
    raw = doc.get("configs", "ablations")
    if raw == "ablations":
        configs = ablation_configs(base, include_perturb=bool(doc.get("include_perturb", False)))
    elif isinstance(raw, Mapping) and raw:
        configs = [parse_run_config(v, name, base, f"{path}:configs.{name}") for name, v in raw.items()]
    else:
        raise ConfigError(f"{path}: configs must be a non-empty object or \"ablations\"")
    try:
        return Matrix(tuple(configs), str(doc.get("suite", "all")), int(doc.get("trials", 10)), int(doc.get("seed", 0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Trials


def trial_seed(master_seed: int, task_id: str, trial: int) -> np.random.SeedSequence:
    """Seed of one (task, trial) cell, independent of scheduling and configuration."""
    digest = hashlib.sha256(f"{master_seed}:{task_id}:{trial}".encode()).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:16], "little"))


def trial_scene(task: TaskSpec, plan: Plan, scene: SceneSpec, cfg: RunConfig, ss: np.random.SeedSequence) -> SceneSpec:
    """LIBERO-Long++ trials get seeded distractors; Ultra-Long scenes are used as-is."""
    if task.suite != "LiberoLongPP" or cfg.distractors[1] == 0:
        return scene
    rng = np.random.default_rng(ss)
    return add_distractors(scene, rng, cfg.distractors, keepout=offset_keepout(scene, plan))


def run_trial(task: TaskSpec, cfg: RunConfig, trial: int, master_seed: int, models=None, library=None) -> TrialResult:
    library = library or load_library()
    base_scene = load_builtin_scene(task.scene)
    plan = bind_task(task, base_scene, library)
    scene_ss, exec_ss = trial_seed(master_seed, task.id, trial).spawn(2)
    scene = trial_scene(task, plan, base_scene, cfg, scene_ss)
    rng = np.random.default_rng(exec_ss)
    return run_plan(scene, plan, cfg.exec, models or cfg.skill_models(), rng)


def check_result(result: TrialResult, cfg: ExecConfig) -> None:
    ok, prefix = trial_outcome(result)
    if prefix != result.completed_prefix or ok != result.success:
        raise InvariantViolation(
            f"trace recount ({ok}, {prefix}) disagrees with executive ({result.success}, {result.completed_prefix})"
        )
    if len(result.trace) > cfg.global_step_budget:
        raise InvariantViolation(f"{len(result.trace)} events exceed the global budget {cfg.global_step_budget}")


@dataclass
class SuiteRun:
    config: RunConfig
    results: dict  # task id -> list of TrialResult
    metrics: dict  # task id -> Metrics


def run_tasks(tasks, cfg: RunConfig, trials: int, master_seed: int, library=None, keep_results: bool = False) -> SuiteRun:
    library = library or load_library()
    models = cfg.skill_models()
    results, metrics = {}, {}
    for task in tasks:
        rs = [run_trial(task, cfg, k, master_seed, models, library) for k in range(trials)]
        for r in rs:
            check_result(r, cfg.exec)
        metrics[task.id] = compute_metrics(rs)
        if metrics[task.id].sr > metrics[task.id].ap + 1e-12:
            raise InvariantViolation(f"{task.id}: SR exceeds AP")
        if keep_results:
            results[task.id] = rs
    return SuiteRun(cfg, results, metrics)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class Report:
    rows: list
    summary: dict
    manifest: dict
    tests: list = field(default_factory=list)
    perturbation: Optional[dict] = None

    def configs(self) -> list:
        seen = []
        for r in self.rows:
            if r["config"] not in seen:
                seen.append(r["config"])
        return seen

    def to_dict(self) -> dict:
        out = {"rows": self.rows, "summary": self.summary, "tests": self.tests, "manifest": self.manifest}
        if self.perturbation is not None:
            out["perturbation"] = self.perturbation
        return out

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Report":
        return cls(list(raw["rows"]), dict(raw["summary"]), dict(raw["manifest"]), list(raw.get("tests", [])), raw.get("perturbation"))


def _summary(tasks, metrics: Mapping) -> dict:
    out = {"all": _round_metrics(average(metrics))}
    for suite in sorted({t.suite for t in tasks}):
        sub = {t.id: metrics[t.id] for t in tasks if t.suite == suite}
        out[suite] = _round_metrics(average(sub))
    return out


def _round_metrics(m: Metrics) -> dict:
    return {"sr": round(m.sr, 6), "ap": round(m.ap, 6), "trials": m.trials}


def _base_manifest(suite: str, trials: int, seed: int) -> dict:
    return {
        "tool": "skillchain",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "suite": suite,
        "trials_per_task": trials,
        "master_seed": seed,
        "seed_rule": "sha256('{master}:{task}:{trial}') -> SeedSequence; spawn 0 = distractors, 1 = execution",
    }


def run_suite(
    suite: str = "all",
    cfg: Optional[RunConfig] = None,
    trials_per_task: int = 10,
    master_seed: int = 0,
    library: Optional[SkillLibrary] = None,
    keep_results: bool = False,
):
    """Run every task of ``suite``; returns (Report, SuiteRun)."""
    return run_matrix(Matrix((cfg or RunConfig(),), suite, trials_per_task, master_seed), library, keep_results)


def run_matrix(matrix: Matrix, library: Optional[SkillLibrary] = None, keep_results: bool = False):
    library = library or load_library()
    try:
        tasks = library.suite(matrix.suite)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if matrix.trials < 1:
        raise ConfigError("trials must be >= 1")
    names = [c.name for c in matrix.configs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate config names: {names}")
    rows, summary, runs = [], {}, {}
    manifest = _base_manifest(matrix.suite, matrix.trials, matrix.seed)
    manifest["configs"] = {}
    for cfg in matrix.configs:
        run = run_tasks(tasks, cfg, matrix.trials, matrix.seed, library, keep_results)
        runs[cfg.name] = run
        for t in tasks:
            m = run.metrics[t.id]
            rows.append({
                "task": t.id,
                "name": t.name,
                "suite": t.suite,
                "variant": t.variant,
                "config": cfg.name,
                "trials": m.trials,
                "plan_len": len(t),
                "sr": round(m.sr, 6),
                "ap": round(m.ap, 6),
            })
        summary[cfg.name] = _summary(tasks, run.metrics)
        manifest["configs"][cfg.name] = cfg.manifest()
    report = Report(rows, summary, manifest, recovery_tests(runs, tasks, matrix.trials))
    return report, runs


def recovery_tests(runs: Mapping, tasks, trials: int) -> list:
    """One-sided two-proportion tests of recovery on vs off, per suite present in the run."""
    on = next((r for n, r in runs.items() if n == "full"), None)
    off = next((r for n, r in runs.items() if n == "w/o recovery"), None)
    if on is None or off is None:
        return []
    out = []
    for suite in sorted({t.suite for t in tasks}):
        ids = [t.id for t in tasks if t.suite == suite]
        x1 = round(sum(on.metrics[i].sr * on.metrics[i].trials for i in ids))
        x2 = round(sum(off.metrics[i].sr * off.metrics[i].trials for i in ids))
        n1 = sum(on.metrics[i].trials for i in ids)
        n2 = sum(off.metrics[i].trials for i in ids)
        z, p = two_proportion_ztest(x1, n1, x2, n2)
        out.append({
            "name": "recovery on > off",
            "suite": suite,
            "successes": [x1, x2],
            "trials": [n1, n2],
            "z": round(z, 6),
            "p": float(f"{p:.6g}"),
            "alpha": SIGNIFICANCE,
            "significant": bool(p < SIGNIFICANCE),
        })
    return out


def two_proportion_ztest(x1: int, n1: int, x2: int, n2: int, alternative: str = "greater") -> tuple:
    """Pooled two-proportion z statistic and p-value for p1 vs p2."""
    if n1 < 1 or n2 < 1:
        raise ValueError("sample sizes must be positive")
    p1, p2 = x1 / n1, x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if se == 0:
        z = 0.0 if p1 == p2 else math.copysign(math.inf, p1 - p2)
    else:
        z = (p1 - p2) / se
    if alternative == "greater":
        p = 0.5 * math.erfc(z / math.sqrt(2))
    elif alternative == "less":
        p = 0.5 * math.erfc(-z / math.sqrt(2))
    elif alternative == "two-sided":
        p = math.erfc(abs(z) / math.sqrt(2))
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    return z, p


# ---------------------------------------------------------------------------
# Perturbation robustness (skill-level)


def nominal_steps(task: TaskSpec, library=None) -> list:
    """(state, action) pairs just before each skill when every earlier skill went to plan,
    with the end-effector exactly at the canonical approach pose."""
    library = library or load_library()
    scene = load_builtin_scene(task.scene)
    plan = bind_task(task, scene, library)
    state = scene.initial_state()
    out = []
    for action in plan.actions:
        if action.skill not in HOLDING_SKILLS and state.held is not None:
            state = drop_held(state, None)
        reference = canonical_approach(state, action)
        state = state.with_ee(reference)
        out.append((state, action))
        state = apply_skill_effect(state, action, reference)
    return out


def perturbation_robustness(
    noise: PerturbationSpec = PerturbationSpec(),
    executions: int = 10_000,
    seed: int = 0,
    training_radius=None,
    models=None,
    library=None,
) -> dict:
    """Mean atomic-skill success with and without deployment noise on the start pose,
    for skills trained with the default radius and with a near-zero one."""
    library = library or load_library()
    base = models or load_skill_models()
    variants = {
        "with perturb": base if training_radius is None else with_training_radius(base, training_radius),
        "w/o perturb": with_training_radius(base, NO_PERTURB_RADIUS),
    }
    steps = [s for t in library.tasks for s in nominal_steps(t, library)]
    result = {"noise_sigma": list(noise.sigma), "executions": executions, "seed": seed, "variants": {}}
    for name, mods in variants.items():
        row = {}
        for j, (label, spec) in enumerate((("clean", PerturbationSpec.zero()), ("noisy", noise))):
            rng = np.random.default_rng(np.random.SeedSequence([seed, j]))
            wins = 0
            for k in range(executions):
                state, action = steps[k % len(steps)]
                start = sample_perturbed_init(state.ee_pose, spec, rng)
                _, outcome = execute_interaction(state.with_ee(start), action, mods[action.skill], True, rng)
                wins += outcome.success
            row[label] = wins / executions
        row["relative_drop"] = (row["clean"] - row["noisy"]) / row["clean"] if row["clean"] > 0 else 0.0
        row["training_radius"] = list(next(iter(mods.values())).training_radius)
        result["variants"][name] = row
    return result
