"""Success Rate and Average Progress under strict in-order counting.

A trial's progress is the length of the verified prefix 1..k, where each
step's status is its most recent verification. Counting halts for good at
the first verification that succeeds while its predecessor is not currently
verified; such a trial also cannot count as a success.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from ..executive import Event, TrialResult


class EmptyResults(ValueError):
    pass


@dataclass(frozen=True)
class TraceAudit:
    prefix: int
    in_order: bool
    halted_at: Optional[int] = None  # event position of the first out-of-order verification


def _as_event(e) -> Event:
    return e if isinstance(e, Event) else Event.from_json(e)


def prefix_from_trace(trace: Iterable, plan_len: int) -> TraceAudit:
    latest = [False] * plan_len
    for pos, raw in enumerate(trace):
        ev = _as_event(raw)
        if ev.kind != "Verify" or ev.index is None:
            continue
        k = ev.index
        if not 1 <= k <= plan_len:
            return TraceAudit(_prefix(latest), False, pos)
        if ev.ok and k > 1 and not latest[k - 2]:
            return TraceAudit(_prefix(latest), False, pos)
        latest[k - 1] = bool(ev.ok)
    return TraceAudit(_prefix(latest), True)


def _prefix(latest) -> int:
    n = 0
    for ok in latest:
        if not ok:
            break
        n += 1
    return n


@dataclass(frozen=True)
class Metrics:
    sr: float
    ap: float
    trials: int
    per_task: Mapping = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"sr": self.sr, "ap": self.ap, "trials": self.trials}
        if self.per_task:
            out["per_task"] = {k: v.to_dict() for k, v in self.per_task.items()}
        return out

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Metrics":
        per = {k: cls.from_dict(v) for k, v in raw.get("per_task", {}).items()}
        return cls(raw["sr"], raw["ap"], raw["trials"], per)


def trial_outcome(result, plan_len: Optional[int] = None) -> tuple:
    """(success, prefix) of one trial recounted from its trace."""
    if isinstance(result, TrialResult):
        n = plan_len or result.plan_len
        audit = prefix_from_trace(result.trace, n)
        claimed = result.success
    else:
        if plan_len is None:
            raise ValueError("plan_len is required for raw traces")
        n = plan_len
        events = [_as_event(e) for e in result]
        audit = prefix_from_trace(events, n)
        claimed = not any(e.kind == "Abort" for e in events)
    success = claimed and audit.in_order and audit.prefix == n
    return success, audit.prefix


def compute_metrics(results, plan_len: Optional[int] = None) -> Metrics:
    """SR and AP over trials of one task.

    ``results`` holds TrialResult objects or raw event sequences (imported
    traces, which then need ``plan_len``).
    """
    results = list(results)
    if not results:
        raise EmptyResults("no trials to score")
    sr = ap = 0.0
    for r in results:
        n = plan_len or r.plan_len
        ok, prefix = trial_outcome(r, n)
        sr += ok
        ap += prefix / n
    return Metrics(sr / len(results), ap / len(results), len(results))


def average(per_task: Mapping) -> Metrics:
    """Unweighted mean over tasks."""
    if not per_task:
        raise EmptyResults("no tasks to average")
    vals = list(per_task.values())
    return Metrics(
        sum(m.sr for m in vals) / len(vals),
        sum(m.ap for m in vals) / len(vals),
        sum(m.trials for m in vals),
        dict(per_task),
    )
