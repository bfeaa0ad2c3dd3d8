"""Command-line entry point.

Exit codes: 0 clean run, 2 configuration error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .executive import Event, explain, explain_events, write_trace_jsonl
from .geometry import PerturbationSpec
from .world import SceneError

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3
SEED_ENV = "LILO_SEED"


class CliConfigError(Exception):
    pass


def _seed(value) -> int:
    if value is not None:
        return value
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


_SUITE_ORDER = ("LiberoLongPP", "UltraLong", "all")


def _print_summary(report, out=None) -> None:
    out = out or sys.stdout
    out.write("config\tsuite\tsr\tap\ttrials\n")
    names = [c for c in report.configs() if c in report.summary] or list(report.summary)
    for cfg in names:
        groups = report.summary[cfg]
        for suite in sorted(groups, key=lambda g: (_SUITE_ORDER.index(g) if g in _SUITE_ORDER else 9, g)):
            m = groups[suite]
            out.write(f"{cfg}\t{suite}\t{m['sr']:.4f}\t{m['ap']:.4f}\t{m['trials']}\n")
    for t in report.tests:
        out.write(f"# {t['name']} [{t['suite']}]: z={t['z']:.3f} p={t['p']:.3g} significant={t['significant']}\n")


def _write_traces(runs, out_dir: Path, seed: int) -> None:
    tdir = out_dir / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    for name, run in runs.items():
        slug = name.replace("/", "").replace(" ", "_")
        for task_id, results in run.results.items():
            for k, r in enumerate(results):
                header = {"task": task_id, "trial": k, "config": name, "master_seed": seed, "plan_len": r.plan_len}
                write_trace_jsonl(r, tdir / f"{slug}_{task_id}_{k:03d}.jsonl", header)


def _explain_runs(runs, library) -> None:
    from .benchmark.library import bind_task, load_builtin_scene

    for name, run in runs.items():
        for task_id, results in run.results.items():
            if not results:
                continue
            task = library.task(task_id)
            plan = bind_task(task, load_builtin_scene(task.scene), library)
            print(f"== {name} {task_id} trial 0")
            print(explain(results[0], plan))


def cmd_run(args) -> int:
    from .benchmark.library import load_library
    from .benchmark.report import parse_formats
    from .benchmark.runner import Matrix, RunConfig, load_run_config, run_matrix

    seed = _seed(args.seed)
    cfg = load_run_config(args.config) if args.config else RunConfig()
    formats = parse_formats(args.formats)
    keep = args.traces or args.explain
    report, runs = run_matrix(Matrix((cfg,), args.suite, args.trials, seed), keep_results=keep)
    return _finish(args, report, runs, formats, seed, load_library())


def cmd_ablate(args) -> int:
    from .benchmark.library import load_library
    from .benchmark.report import parse_formats
    from .benchmark.runner import Matrix, ablation_configs, load_matrix, perturbation_robustness, run_matrix

    formats = parse_formats(args.formats)
    if args.matrix:
        matrix = load_matrix(args.matrix)
    else:
        matrix = Matrix(tuple(ablation_configs(include_perturb=args.include_perturb)))
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.suite is not None:
        overrides["suite"] = args.suite
    if args.seed is not None or os.environ.get(SEED_ENV):
        overrides["seed"] = _seed(args.seed)
    matrix = replace(matrix, **overrides)
    keep = args.traces or args.explain
    report, runs = run_matrix(matrix, keep_results=keep)
    if args.perturb:
        report.perturbation = perturbation_robustness(executions=args.perturb, seed=matrix.seed)
    return _finish(args, report, runs, formats, matrix.seed, load_library())


def _finish(args, report, runs, formats, seed, library) -> int:
    from .benchmark.report import emit_report

    out = Path(args.out)
    written = emit_report(report, out, formats)
    if args.traces:
        _write_traces(runs, out, seed)
    _print_summary(report)
    if args.explain:
        _explain_runs(runs, library)
    for p in written:
        print(f"# wrote {p}")
    return EXIT_OK


def cmd_count(args) -> int:
    from .benchmark.linearize import PartialOrder, count_linearizations

    if args.pairs is not None:
        po = PartialOrder.independent_pairs(args.pairs)
    else:
        try:
            po = PartialOrder.load(args.edges)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise CliConfigError(f"{args.edges}: {exc}") from None
    modes = args.mode.split(",")
    print("mode\tnodes\tcount")
    for mode in modes:
        print(f"{mode}\t{po.n}\t{count_linearizations(po, mode)}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .benchmark.report import emit_report, load_report, parse_formats

    src = Path(args.from_dir)
    try:
        report = load_report(src)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise CliConfigError(f"{src}: cannot load report: {exc}") from None
    written = emit_report(report, Path(args.out) if args.out else src, parse_formats(args.formats))
    _print_summary(report)
    for p in written:
        print(f"# wrote {p}")
    return EXIT_OK


def cmd_mask(args) -> int:
    from .masking import EraseConfig, process_corpus

    cfg = EraseConfig()
    if args.config:
        try:
            cfg = EraseConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise CliConfigError(f"{args.config}: {exc}") from None
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise CliConfigError(f"{in_dir}: not a directory")
    manifest = process_corpus(in_dir, args.out, cfg, _seed(args.seed), args.workers)
    print("file\trects\ttarget_ratio\tachieved_ratio\terased_pixels")
    for e in manifest["images"]:
        print(f"{e['file']}\t{e['rect_count']}\t{e['target_ratio']:.4f}\t{e['achieved_ratio']:.4f}\t{e['erased_pixels']}")
    print(f"# wrote {Path(args.out) / 'manifest.json'}")
    return EXIT_OK


def cmd_perturb(args) -> int:
    from .benchmark.runner import perturbation_robustness
    from .plotting import perturbation_bars

    noise = PerturbationSpec(tuple([args.sigma_rot] * 3 + [args.sigma_trans] * 3))
    result = perturbation_robustness(noise, args.executions, _seed(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "perturbation.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    perturbation_bars(result, out / "perturbation.svg")
    print("variant\tclean\tnoisy\trelative_drop")
    for name, row in result["variants"].items():
        print(f"{name}\t{row['clean']:.4f}\t{row['noisy']:.4f}\t{row['relative_drop']:.4f}")
    print(f"# wrote {out / 'perturbation.json'}")
    print(f"# wrote {out / 'perturbation.svg'}")
    return EXIT_OK


def cmd_explain(args) -> int:
    from .benchmark.library import bind_task, load_builtin_scene, load_library

    header, events = None, []
    try:
        for line in Path(args.trace).read_text().splitlines():
            if not line.strip():
                continue
            raw = json.loads(line)
            if raw.get("event") == "Trial":
                header = raw
            else:
                events.append(Event.from_json(raw))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise CliConfigError(f"{args.trace}: {exc}") from None
    plan = None
    if header and "task" in header:
        library = load_library()
        task = library.task(header["task"])
        plan = bind_task(task, load_builtin_scene(task.scene), library)
    head = ""
    if header:
        head = f"{header.get('config', '')} {header.get('task', '')} trial {header.get('trial', '')}".strip()
    print(explain_events(events, plan, head))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillchain", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def outputs(sp, default_formats="csv,json,svg"):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--formats", default=default_formats, help="comma list of csv,json,svg")
        sp.add_argument("--traces", action="store_true", help="write one JSON-lines trace per trial")
        sp.add_argument("--explain", action="store_true", help="pretty-print the first trial of every task")

    r = sub.add_parser("run", help="run a suite under one configuration")
    r.add_argument("--suite", default="all", help="long++, ultra or all")
    r.add_argument("--config", help="run configuration JSON")
    r.add_argument("--trials", type=int, default=10)
    r.add_argument("--seed", type=int, default=None, help=f"master seed (falls back to ${SEED_ENV}, then 0)")
    outputs(r)
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("ablate", help="run an ablation matrix")
    a.add_argument("--matrix", help="matrix JSON; default is the standard ablation set")
    a.add_argument("--suite", default=None)
    a.add_argument("--trials", type=int, default=None)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--include-perturb", action="store_true", help="add the w/o perturb row to the default matrix")
    a.add_argument("--perturb", type=int, default=0, metavar="N", help="also run the skill-level perturbation sweep with N executions")
    outputs(a)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("count-linearizations", help="count orderings consistent with a precedence relation")
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--pairs", type=int, help="M independent pick-before-place pairs")
    g.add_argument("--edges", help="JSON file with nodes and edges")
    c.add_argument("--mode", default="brute_force,formula_independent_pairs", help="comma list of brute_force, formula_independent_pairs, dp")
    c.set_defaults(func=cmd_count)

    rp = sub.add_parser("report", help="re-emit report files from a saved report.json")
    rp.add_argument("--from", dest="from_dir", required=True)
    rp.add_argument("--formats", default="csv,json,svg")
    rp.add_argument("--out", default=None)
    rp.set_defaults(func=cmd_report)

    m = sub.add_parser("mask-augment", help="background-only random erasing over a PPM corpus")
    m.add_argument("--in", dest="in_dir", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--config", help="erase configuration JSON")
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--workers", type=int, default=1)
    m.set_defaults(func=cmd_mask)

    ps = sub.add_parser("perturb-sweep", help="skill success with and without start-pose noise")
    ps.add_argument("--out", required=True)
    ps.add_argument("--executions", type=int, default=10_000)
    ps.add_argument("--sigma-rot", type=float, default=0.05)
    ps.add_argument("--sigma-trans", type=float, default=0.01)
    ps.add_argument("--seed", type=int, default=None)
    ps.set_defaults(func=cmd_perturb)

    e = sub.add_parser("explain", help="pretty-print a JSON-lines trace")
    e.add_argument("trace")
    e.set_defaults(func=cmd_explain)
    return p


def main(argv=None) -> int:
    from .benchmark.library import LibraryError
    from .benchmark.linearize import NotIndependentPairs, TooLarge
    from .benchmark.runner import ConfigError, InvariantViolation
    from .masking import RasterFormatError
    from .surrogate import SkillModelError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (CliConfigError, ConfigError, SceneError, LibraryError, SkillModelError, RasterFormatError,
            TooLarge, NotIndependentPairs) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
