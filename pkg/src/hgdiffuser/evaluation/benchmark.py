"""Benchmark harness: sample-then-filter at several sizes against guided sampling.

Every (seed, object, task) cell runs each method once with the same chain
seed, so the two-stage method at n=100 sees exactly the first 100 chains of
the n=500 run. Each call is timed around grasp generation only; model loading,
constraint extraction and scoring are outside the timer. Before the timed
calls each method runs ``timing_warmup`` untimed calls on the first cell.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..constraints import GuidanceConfig, Thresholds, extract_constraints, loss_total
from ..diffusion import NoiseSchedule
from ..errors import InvalidArgument
from ..lie import GraspPose
from .baseline import guided_best, two_stage_baseline
from .quality import constraint_satisfied, force_closure

CSV_COLUMNS = [
    "method",
    "n_samples",
    "object_id",
    "task",
    "success",
    "constraint_ok",
    "force_closure_ok",
    "loss_total",
    "time_s",
    "seed",
]
TIMING_NOTE = "time_s covers grasp generation only; model loading and evaluation are excluded"


@dataclass(frozen=True)
class BenchConfig:
    ts_sizes: tuple[int, ...] = (100, 200, 500, 1000)
    guided_sizes: tuple[int, ...] = (1, 100)
    seeds: int = 20
    base_seed: int = 0
    objects: tuple[str, ...] | None = None
    objects_per_kind: int | None = 1
    timing_warmup: int = 3

    def __post_init__(self):
        object.__setattr__(self, "ts_sizes", tuple(int(n) for n in self.ts_sizes))
        object.__setattr__(self, "guided_sizes", tuple(int(n) for n in self.guided_sizes))
        if self.objects is not None:
            object.__setattr__(self, "objects", tuple(self.objects))
        if self.seeds < 1 or self.timing_warmup < 0:
            raise InvalidArgument("seeds >= 1 and timing_warmup >= 0 required")
        if any(n < 1 for n in self.ts_sizes + self.guided_sizes):
            raise InvalidArgument("sample counts must be >= 1")

    def methods(self) -> list[tuple[str, int]]:
        return [("two-stage", n) for n in self.ts_sizes] + [("guided", n) for n in self.guided_sizes]


@dataclass
class GraspRecord:
    method: str
    n_samples: int
    object_id: str
    task: str
    seed: int
    success: bool
    constraint_ok: bool
    force_closure_ok: bool
    loss_total: float
    time_s: float
    pose: GraspPose | None = None

    def row(self) -> dict:
        return {
            "method": self.method,
            "n_samples": self.n_samples,
            "object_id": self.object_id,
            "task": self.task,
            "success": int(self.success),
            "constraint_ok": int(self.constraint_ok),
            "force_closure_ok": int(self.force_closure_ok),
            "loss_total": repr(float(self.loss_total)),
            "time_s": repr(float(self.time_s)),
            "seed": self.seed,
        }


@dataclass
class EvalReport:
    """Records of one method plus aggregates recomputed from them."""

    method: str
    n_samples: int
    records: list[GraspRecord]
    environment: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return f"{self.method}@{self.n_samples}"

    def _rate(self, attr: str) -> float:
        if not self.records:
            return 0.0
        return 100.0 * sum(bool(getattr(r, attr)) for r in self.records) / len(self.records)

    @property
    def success_rate(self) -> float:
        return self._rate("success")

    @property
    def constraint_rate(self) -> float:
        return self._rate("constraint_ok")

    @property
    def force_closure_rate(self) -> float:
        return self._rate("force_closure_ok")

    @property
    def time_mean(self) -> float:
        return float(np.mean([r.time_s for r in self.records])) if self.records else math.nan

    @property
    def time_std(self) -> float:
        return float(np.std([r.time_s for r in self.records], ddof=1)) if len(self.records) > 1 else 0.0

    def per_seed_success(self) -> dict[int, float]:
        by: dict[int, list[bool]] = {}
        for r in self.records:
            by.setdefault(r.seed, []).append(r.success)
        return {s: float(np.mean(v)) for s, v in sorted(by.items())}

    def summary(self) -> dict:
        return {
            "method": self.method,
            "n_samples": self.n_samples,
            "count": len(self.records),
            "success_rate": self.success_rate,
            "constraint_rate": self.constraint_rate,
            "force_closure_rate": self.force_closure_rate,
            "time_mean_s": self.time_mean,
            "time_std_s": self.time_std,
        }


@dataclass
class Cell:
    seed_index: int
    obj: object
    task: str
    constraint: object
    seed: int


def cell_seed(base_seed: int, seed_index: int, pair_index: int) -> int:
    return int(np.random.SeedSequence([base_seed, seed_index, pair_index]).generate_state(1)[0])


def select_pairs(dataset, cfg: BenchConfig) -> list[tuple[object, str]]:
    """(object, task) pairs with a demonstration, filtered by the config."""
    pairs = []
    per_kind: dict[str, int] = {}
    for obj in dataset.objects:
        if cfg.objects is not None and obj.object_id not in cfg.objects:
            continue
        if cfg.objects is None and cfg.objects_per_kind is not None:
            if per_kind.get(obj.spec.kind, 0) >= cfg.objects_per_kind:
                continue
        tasks = sorted(t for (oid, t) in dataset.demos if oid == obj.object_id)
        if not tasks:
            continue
        per_kind[obj.spec.kind] = per_kind.get(obj.spec.kind, 0) + 1
        pairs += [(obj, t) for t in tasks]
    if not pairs:
        raise InvalidArgument("no (object, task) pairs with demonstrations selected")
    return pairs


def environment_record(cfg: BenchConfig, schedule: NoiseSchedule, guidance: GuidanceConfig, params) -> dict:
    blob = json.dumps(
        {"bench": asdict(cfg), "schedule": asdict(schedule), "guidance": asdict(guidance), "net": params.cfg.to_dict()},
        sort_keys=True,
    ).encode()
    return {
        "threads": _thread_count(),
        "base_seed": cfg.base_seed,
        "config_hash": hashlib.sha256(blob).hexdigest()[:16],
        "params_hash": hashlib.sha256(params.flat.tobytes()).hexdigest()[:16],
        "python": platform.python_version(),
        "machine": platform.machine(),
        "timing_note": TIMING_NOTE,
    }


def _thread_count() -> int:
    try:
        from threadpoolctl import threadpool_info

        counts = [i.get("num_threads", 1) for i in threadpool_info()]
        return int(max(counts)) if counts else 1
    except ImportError:  # pragma: no cover
        return int(os.environ.get("OMP_NUM_THREADS", "0") or 0)


def _generate(method: str, n: int, cell: Cell, params, schedule, guidance, gripper):
    if method == "two-stage":
        return two_stage_baseline(cell.obj.cloud, params, cell.constraint, n, schedule, cell.seed, guidance, gripper)
    return guided_best(cell.obj.cloud, params, cell.constraint, n, schedule, cell.seed, guidance, gripper)


def evaluate_pose(pose: GraspPose | None, obj, constraint, guidance: GuidanceConfig, gripper, mu: float):
    """(constraint_ok, force_closure_ok, loss_total); a missing pose fails both."""
    if pose is None:
        return False, False, math.nan
    c_ok = constraint_satisfied(pose, constraint)
    fc_ok = force_closure(pose, obj.surface, obj.gripper(gripper), mu).ok
    return c_ok, fc_ok, loss_total(pose, constraint, guidance)


def run_benchmark(dataset, params, schedule: NoiseSchedule, guidance: GuidanceConfig, cfg: BenchConfig,
                  thresholds: Thresholds | None = None,
                  progress: Callable[[str], None] | None = None) -> list[EvalReport]:
    """Run every method on every cell; one ``EvalReport`` per (method, n_samples)."""
    pairs = select_pairs(dataset, cfg)
    constraints = {
        (obj.object_id, task): extract_constraints(dataset.demos[(obj.object_id, task)], obj.cloud, thresholds=thresholds)
        for obj, task in pairs
    }
    cells = [
        Cell(s, obj, task, constraints[(obj.object_id, task)], cell_seed(cfg.base_seed, s, j))
        for s in range(cfg.seeds)
        for j, (obj, task) in enumerate(pairs)
    ]
    env = environment_record(cfg, schedule, guidance, params)
    gripper = dataset.gripper
    reports = []
    for method, n in cfg.methods():
        for _ in range(cfg.timing_warmup):
            _generate(method, n, cells[0], params, schedule, guidance, gripper)
        records = []
        for cell in cells:
            t0 = time.perf_counter()
            pose = _generate(method, n, cell, params, schedule, guidance, gripper)
            elapsed = time.perf_counter() - t0
            c_ok, fc_ok, loss = evaluate_pose(pose, cell.obj, cell.constraint, guidance, gripper, dataset.mu)
            records.append(
                GraspRecord(method, n, cell.obj.object_id, cell.task, cell.seed_index,
                            c_ok and fc_ok, c_ok, fc_ok, loss, elapsed, pose)
            )
        report = EvalReport(method, n, records, env)
        reports.append(report)
        if progress is not None:
            s = report.summary()
            progress(f"{report.label}: success {s['success_rate']:.1f}% time {s['time_mean_s']:.3f}s")
    return reports


# ---------------------------------------------------------------------------
# output and statistics
# ---------------------------------------------------------------------------


def write_csv(path, reports: list[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            for r in rep.records:
                w.writerow(r.row())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize_rows(rows: list[dict]) -> dict[tuple[str, int], dict]:
    """Aggregates recomputed from CSV rows, keyed by (method, n_samples)."""
    out: dict[tuple[str, int], dict] = {}
    for row in rows:
        key = (row["method"], int(row["n_samples"]))
        agg = out.setdefault(key, {"count": 0, "success": 0, "constraint_ok": 0, "force_closure_ok": 0, "time": []})
        agg["count"] += 1
        for col in ("success", "constraint_ok", "force_closure_ok"):
            agg[col] += int(row[col])
        agg["time"].append(float(row["time_s"]))
    return {
        k: {
            "count": a["count"],
            "success_rate": 100.0 * a["success"] / a["count"],
            "constraint_rate": 100.0 * a["constraint_ok"] / a["count"],
            "force_closure_rate": 100.0 * a["force_closure_ok"] / a["count"],
            "time_mean_s": float(np.mean(a["time"])),
        }
        for k, a in out.items()
    }


def wilcoxon_greater(a, b) -> float:
    """One-sided Wilcoxon signed-rank p-value for ``a > b`` on paired samples."""
    from scipy.stats import wilcoxon

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.all(a == b):
        return 1.0
    return float(wilcoxon(a, b, alternative="greater").pvalue)


def find_report(reports: list[EvalReport], method: str, n: int) -> EvalReport:
    for r in reports:
        if r.method == method and r.n_samples == n:
            return r
    raise KeyError(f"{method}@{n}")


def summary_json(reports: list[EvalReport], extra: dict | None = None) -> dict:
    out = {
        "timing_note": TIMING_NOTE,
        "environment": reports[0].environment if reports else {},
        "methods": [r.summary() for r in reports],
    }
    by = {(r.method, r.n_samples): r for r in reports}
    comparisons = {}
    for n_small, n_large in ((100, 500),):
        if ("two-stage", n_small) in by and ("two-stage", n_large) in by:
            small = by[("two-stage", n_small)].per_seed_success()
            large = by[("two-stage", n_large)].per_seed_success()
            seeds = sorted(set(small) & set(large))
            comparisons[f"two-stage@{n_large} > two-stage@{n_small}"] = {
                "wilcoxon_p": wilcoxon_greater([large[s] for s in seeds], [small[s] for s in seeds]),
                "seeds": len(seeds),
            }
    if ("guided", 1) in by and ("two-stage", 500) in by:
        g, ts = by[("guided", 1)], by[("two-stage", 500)]
        comparisons["time two-stage@500 / guided@1"] = ts.time_mean / g.time_mean
    out["comparisons"] = comparisons
    out.update(extra or {})
    return out


def write_summary(path, reports: list[EvalReport], extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(summary_json(reports, extra), indent=1, sort_keys=True) + "\n")
