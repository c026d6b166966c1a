"""Experiment harness: parameter sweeps, trial repetition, and table emission.

A sweep is described by a `SweepSpec` (usually loaded from JSON): a task, a
privacy budget, parameter grids, a trial count, a data source, and the
metrics to evaluate. `run_sweep` calibrates once per grid point, runs every
trial on its own derived seed, and returns one `ResultRow` per
(grid point, trial, metric). Rows are emitted as CSV or JSON with floats
printed to 9 significant digits; re-running a spec reproduces every byte
except the wall-time column.
"""

from __future__ import annotations

import concurrent.futures
import csv
import enum
import io
import itertools
import json
import math
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import metrics as metrics_mod
from .calibration import PrivacyBudget, WgmConfig, calibrate_wgm, gumbel_scale
from .dataset import (
    Dataset,
    ZipfParams,
    gen_zipf,
    hard_instance_flat,
    hard_instance_singleton,
    ingest_pairs,
)
from .mechanisms import NoiseMode, Task, meta, wgm
from .seeding import child_seed


class SweepSpecError(ValueError):
    """The sweep description is invalid or inconsistent with the task."""


class SweepTask(enum.Enum):
    SET_UNION = "set-union"
    TOP_K = "top-k"
    HITTING_SET = "hitting-set"


_TASK_METRICS = {
    SweepTask.SET_UNION: {"MM", "MM_p", "Hits", "MissedUsers"},
    SweepTask.TOP_K: {"MM_topk", "L1_topk", "MM"},
    SweepTask.HITTING_SET: {"Hits", "MissedUsers", "Opt"},
}


def parse_metric(name: str) -> tuple[str, dict]:
    """Splits a metric spec like "MM_p:0.5" into (name, params)."""
    base, _, arg = name.partition(":")
    if base == "MM_p":
        if not arg:
            raise SweepSpecError("MM_p requires a p value, e.g. 'MM_p:0.5'")
        return base, {"p": float(arg)}
    if arg:
        raise SweepSpecError(f"metric {base!r} takes no parameter")
    if base not in metrics_mod.METRIC_NAMES:
        raise SweepSpecError(f"unknown metric {name!r}")
    return base, {}


@dataclass(frozen=True)
class SweepSpec:
    """Full description of one experiment sweep."""

    task: SweepTask
    budget: PrivacyBudget
    delta0_grid: tuple[int, ...]
    k_grid: tuple[int, ...]
    trials: int
    seed: int
    data_source: dict
    metrics: tuple[str, ...]
    noise: NoiseMode = NoiseMode.CALIBRATED

    def __post_init__(self):
        if self.trials < 1:
            raise SweepSpecError(f"trials must be >= 1, got {self.trials}")
        if not self.delta0_grid:
            raise SweepSpecError("delta0_grid must not be empty")
        if self.task is not SweepTask.SET_UNION and not self.k_grid:
            raise SweepSpecError(f"{self.task.value} requires a non-empty k_grid")
        if not self.metrics:
            raise SweepSpecError("metrics must not be empty")
        allowed = _TASK_METRICS[self.task]
        for m in self.metrics:
            base, _ = parse_metric(m)
            if base not in allowed:
                raise SweepSpecError(
                    f"metric {m!r} is not valid for task {self.task.value!r}; "
                    f"allowed: {sorted(allowed)}"
                )

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SweepSpec":
        try:
            task = SweepTask(obj["task"])
            budget = PrivacyBudget(
                epsilon=float(obj["eps"]),
                delta=float(obj["delta"]),
                split=tuple(obj.get("split", (0.5, 0.5))),
            )
            spec = cls(
                task=task,
                budget=budget,
                delta0_grid=tuple(int(x) for x in obj.get("delta0_grid", ())),
                k_grid=tuple(int(x) for x in obj.get("k_grid", ())),
                trials=int(obj.get("trials", 1)),
                seed=int(obj["seed"]),
                data_source=dict(obj["data"]),
                metrics=tuple(obj["metrics"]),
                noise=NoiseMode(obj.get("noise", "calibrated")),
            )
        except KeyError as e:
            raise SweepSpecError(f"sweep spec is missing required field {e}") from e
        return spec


def load_dataset(data_source: dict) -> tuple[str, Dataset]:
    """Materializes a (dataset_id, Dataset) pair from a data-source spec.

    Supported forms:
      {"csv": path, "header": bool}      - ingest "user_id,item_id" lines
      {"zipf": {"C", "s", "n_items", "n", "seed"}}
      {"hard": {"kind": "singleton", "n"}} or {"kind": "flat", "k", "b"}
    """
    if "csv" in data_source:
        path = Path(data_source["csv"])
        with open(path, "r", encoding="utf-8") as f:
            d = ingest_pairs(f, header=bool(data_source.get("header", False)))
        return path.stem, d
    if "zipf" in data_source:
        z = data_source["zipf"]
        params = ZipfParams(C=float(z["C"]), s=float(z["s"]))
        n_items, n = int(z["n_items"]), int(z["n"])
        seed = int(z.get("seed", 0))
        d = gen_zipf(params, n_items, n, seed)
        return f"zipf_C{z['C']}_s{z['s']}_m{n_items}_n{n}", d
    if "hard" in data_source:
        h = data_source["hard"]
        if h["kind"] == "singleton":
            n = int(h["n"])
            return f"singleton_n{n}", hard_instance_singleton(n)
        if h["kind"] == "flat":
            k, b = int(h["k"]), int(h["b"])
            return f"flat_k{k}_b{b}", hard_instance_flat(k, b)
        raise SweepSpecError(f"unknown hard-instance kind {h.get('kind')!r}")
    raise SweepSpecError(f"unrecognized data source {sorted(data_source)!r}")


@dataclass(frozen=True)
class ResultRow:
    """One (grid point, trial, metric) record; field order is the CSV order."""

    task: str
    dataset_id: str
    eps: float
    delta: float
    delta0: int
    k: int | None
    sigma: float
    threshold: float
    lam: float | None
    trial: int
    seed: int
    metric_name: str
    value: float
    wall_time_ms: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"metric value must be finite, got {self.value}")


@dataclass(frozen=True)
class SummaryRow:
    """Aggregated mean and standard error for one grid point and metric."""

    task: str
    dataset_id: str
    eps: float
    delta: float
    delta0: int
    k: int | None
    metric_name: str
    mean: float
    std_error: float
    n_trials: int


def _evaluate_metric(
    d: Dataset, spec: SweepSpec, name: str, output_items, k: int | None
) -> float:
    base, params = parse_metric(name)
    if base == "MM":
        return metrics_mod.mm(d, output_items)
    if base == "MM_p":
        return metrics_mod.mm_p(d, output_items, params["p"])
    if base == "MM_topk":
        return metrics_mod.mm_topk(d, tuple(output_items), k)
    if base == "L1_topk":
        return float(metrics_mod.l1_topk(d, tuple(output_items), k))
    if base == "Hits":
        return float(metrics_mod.hits(d, output_items))
    if base == "MissedUsers":
        return float(metrics_mod.missed_users(d, output_items))
    if base == "Opt":
        return float(metrics_mod.opt_bruteforce(d, k)[0])
    raise SweepSpecError(f"unknown metric {name!r}")


def _run_grid_trial(
    spec: SweepSpec,
    d: Dataset,
    dataset_id: str,
    grid_index: int,
    delta0: int,
    k: int | None,
    cfg: WgmConfig,
    lam: float | None,
    trial: int,
) -> list[ResultRow]:
    trial_seed = child_seed(spec.seed, grid_index, trial)
    t0 = time.perf_counter()
    if spec.task is SweepTask.SET_UNION:
        released, _ = wgm(d, cfg, spec.noise, trial_seed)
        output_items: Iterable[str] = released
    else:
        task = Task.TOP_K if spec.task is SweepTask.TOP_K else Task.HITTING_SET
        out, _ = meta(
            d, spec.budget, delta0, k, task, trial_seed, mode=spec.noise,
            cfg=cfg, scale=gumbel_scale(*spec.budget.stage(1), k),
        )
        output_items = out.items
    wall_ms = (time.perf_counter() - t0) * 1e3
    rows = []
    for m in spec.metrics:
        rows.append(
            ResultRow(
                task=spec.task.value,
                dataset_id=dataset_id,
                eps=spec.budget.epsilon,
                delta=spec.budget.delta,
                delta0=delta0,
                k=k,
                sigma=cfg.sigma,
                threshold=cfg.threshold,
                lam=lam,
                trial=trial,
                seed=trial_seed,
                metric_name=m,
                value=_evaluate_metric(d, spec, m, output_items, k),
                wall_time_ms=wall_ms,
            )
        )
    return rows


def run_sweep(spec: SweepSpec, threads: int = 1) -> list[ResultRow]:
    """Runs every (grid point, trial) of the sweep and returns rows in order.

    Calibration happens once per grid point; each trial runs on the seed
    derived from (master seed, grid index, trial index). With threads > 1
    trials run concurrently, then rows are assembled in canonical order, so
    the result does not depend on scheduling.
    """
    dataset_id, d = load_dataset(spec.data_source)
    if spec.task is SweepTask.SET_UNION:
        grid: list[tuple[int, int | None]] = [(d0, None) for d0 in spec.delta0_grid]
    else:
        grid = list(itertools.product(spec.delta0_grid, spec.k_grid))

    configs: list[tuple[WgmConfig, float | None]] = []
    for delta0, k in grid:
        if spec.task is SweepTask.SET_UNION:
            cfg = calibrate_wgm(spec.budget.epsilon, spec.budget.delta, delta0)
            lam = None
        else:
            cfg = calibrate_wgm(*spec.budget.stage(0), delta0)
            lam = gumbel_scale(*spec.budget.stage(1), k).lam
        configs.append((cfg.bound_to(d.max_user_set_size), lam))

    jobs = [
        (g, delta0, k, cfg, lam, trial)
        for g, ((delta0, k), (cfg, lam)) in enumerate(zip(grid, configs))
        for trial in range(spec.trials)
    ]
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(
                pool.map(lambda j: _run_grid_trial(spec, d, dataset_id, *j), jobs)
            )
    else:
        chunks = [
            _run_grid_trial(spec, d, dataset_id, g, delta0, k, cfg, lam, trial)
            for g, delta0, k, cfg, lam, trial in jobs
        ]
    return [row for chunk in chunks for row in chunk]


def aggregate(rows: Sequence[ResultRow]) -> list[SummaryRow]:
    """Mean and standard error per (grid point, metric), grouped in row order.

    The standard error is the sample standard deviation divided by
    sqrt(trials); a single trial reports 0.
    """
    if not rows:
        raise ValueError("aggregate requires at least one row")
    groups: dict[tuple, list[float]] = {}
    order: list[tuple] = []
    for r in rows:
        key = (r.task, r.dataset_id, r.eps, r.delta, r.delta0, r.k, r.metric_name)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r.value)
    out = []
    for key in order:
        vals = np.asarray(groups[key], dtype=np.float64)
        n = vals.size
        se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        out.append(
            SummaryRow(
                task=key[0],
                dataset_id=key[1],
                eps=key[2],
                delta=key[3],
                delta0=key[4],
                k=key[5],
                metric_name=key[6],
                mean=float(vals.mean()),
                std_error=se,
                n_trials=n,
            )
        )
    return out


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".9g")
    return str(v)


def _json_scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".9g")
    if isinstance(v, int):
        return str(v)
    return json.dumps(v, ensure_ascii=False)


def render_rows(rows: Sequence[ResultRow] | Sequence[SummaryRow], fmt: str) -> str:
    """Renders rows as CSV (fixed header order) or a JSON array of objects.

    Floats are printed with 9 significant digits in both formats. An empty
    row list renders as a header-only CSV / an empty JSON array; in CSV the
    header defaults to the ResultRow columns.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    names = [f.name for f in fields(rows[0] if rows else ResultRow)]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for r in rows:
            writer.writerow([_format_cell(getattr(r, name)) for name in names])
        return buf.getvalue()
    parts = []
    for r in rows:
        inner = ", ".join(
            f"{json.dumps(name)}: {_json_scalar(getattr(r, name))}" for name in names
        )
        parts.append("  {" + inner + "}")
    return "[\n" + ",\n".join(parts) + "\n]\n" if parts else "[]\n"


def emit(
    rows: Sequence[ResultRow] | Sequence[SummaryRow],
    fmt: str,
    path,
) -> None:
    """Writes rows to a path or file-like object in the given format."""
    text = render_rows(rows, fmt)
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
