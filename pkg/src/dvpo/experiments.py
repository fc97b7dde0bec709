"""Seeded experiment execution and artifact emission.

A run directory holds ``manifest.json``, ``metrics.csv`` (one row per
iteration) and ``final_distributions.json`` (probe-state quantile vectors).
Sweeps and comparisons write one run directory per child plus a merged
table; children are keyed by (value, seed) or (algorithm, seed) and merged in
key order, never completion order.
"""
from __future__ import annotations

import ast
import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import TrainConfig, config_from_dict, config_hash, config_to_dict, resolve_path, with_value
from .distvalue import ensemble_quantiles
from .errors import ConfigError, DivergenceError
from .trainer import METRIC_COLUMNS, TrainResult, head_quantiles, train

log = logging.getLogger(__name__)

METRICS_SCHEMA = "dvpo-metrics/v1"
DISTRIBUTIONS_SCHEMA = "dvpo-distributions/v1"
SUMMARY_SCHEMA = "dvpo-sweep-summary/v1"
RUNS_SCHEMA = "dvpo-sweep-runs/v1"
COMPARE_SCHEMA = "dvpo-compare/v1"

SUMMARY_COLUMNS = ("param", "value", "n_seeds", "n_failed", "mean_final_true_return", "std_final_true_return",
                   "mean_final_corrupted_return")
RUNS_COLUMNS = ("param", "value", "seed", "status", "final_true_return", "final_corrupted_return",
                "value_lower_var", "value_upper_var", "run_dir", "error")
COMPARE_COLUMNS = ("seed", "algorithm", "status", "final_true_return", "final_corrupted_return",
                   "value_lower_var", "value_upper_var", "delta_true_return", "error")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=False) + "\n", encoding="utf-8")


def _open_csv(path: Path, schema: str, ref: str, columns: Sequence[str]):
    fh = open(path, "w", newline="", encoding="utf-8")
    fh.write(f"# schema: {schema}; manifest={ref}\r\n")
    writer = csv.writer(fh)
    writer.writerow(columns)
    return fh, writer


def read_csv(path: str | Path) -> tuple[str, list[dict[str, str]]]:
    """Return (schema comment line, rows as dicts) for an artifact CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\r\n")
        if not first.startswith("# schema:"):
            raise ValueError(f"{path}: missing schema comment row")
        return first, list(csv.DictReader(fh))


def parse_values(text: str) -> list[Any]:
    """Comma-separated literals: ``"0,0.05,0.1"`` -> ``[0, 0.05, 0.1]``.

    Items that are not Python literals are kept as strings.
    """
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            out.append(ast.literal_eval(item))
        except (ValueError, SyntaxError):
            out.append(item)
    if not out:
        raise ConfigError("value list is empty", "--values")
    return out


def check_path(cfg: TrainConfig, path: str) -> str:
    """Resolve a sweep parameter path, raising ConfigError if it names no field."""
    node: Any = config_to_dict(cfg)
    full = resolve_path(path)
    for part in full.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError("does not resolve to a config field", path)
        node = node[part]
    if isinstance(node, dict):
        raise ConfigError("names a section, not a field", path)
    return full


@dataclass
class ExperimentManifest:
    config: dict
    config_hash: str
    seeds: list[int]
    out_dir: str
    kind: str = "run"
    started: str = field(default_factory=_now)
    finished: str | None = None
    status: str = "running"
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "out_dir": self.out_dir,
            "started": self.started,
            "finished": self.finished,
            "status": self.status,
            "config": self.config,
        }
        d.update(self.extra)
        return d

    def save(self, out_dir: Path) -> None:
        _write_json(out_dir / "manifest.json", self.as_dict())


# -- single run --------------------------------------------------------------------------

def distributions_payload(result: TrainResult, ref: str) -> dict:
    """Per probe state: raw head outputs and their ensemble, with index metadata."""
    cfg = result.config
    heads = head_quantiles(result.critic, result.probe_states)
    m = cfg.critic.m if cfg.algorithm == "dvpo" else 1
    states = []
    for i, obs in enumerate(result.probe_states):
        entry = {"probe_index": i, "observation": obs.tolist(), "heads": [], "ensemble": None}
        if heads is not None:
            entry["heads"] = [{"head_index": h, "quantiles": heads[i, h].tolist()} for h in range(heads.shape[1])]
            entry["ensemble"] = ensemble_quantiles(heads[i]).tolist()
        states.append(entry)
    return {
        "schema": DISTRIBUTIONS_SCHEMA,
        "manifest": ref,
        "algorithm": cfg.algorithm,
        "m": m,
        "n_heads": 0 if heads is None else int(heads.shape[1]),
        "quantile_levels": ((np.arange(m) + 1.0) / m).tolist(),
        "probe_states": states,
    }


def run_single(cfg: TrainConfig, out_dir: str | Path) -> TrainResult:
    """Train one config and write its run directory.

    metrics.csv is written as iterations complete, so a diverged run keeps
    its history; the divergence snapshot goes to ``divergence.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref = config_hash(cfg)
    manifest = ExperimentManifest(config_to_dict(cfg), ref, [cfg.seed], str(out))
    manifest.save(out)
    fh, writer = _open_csv(out / "metrics.csv", METRICS_SCHEMA, ref, METRIC_COLUMNS)
    try:
        def emit(m):
            row = m.as_row()
            writer.writerow([row[c] for c in METRIC_COLUMNS])
            fh.flush()

        try:
            result = train(cfg, on_iteration=emit)
        except DivergenceError as exc:
            _write_json(out / "divergence.json", {"manifest": ref, "message": str(exc), "snapshot": exc.snapshot})
            manifest.status, manifest.finished = "diverged", _now()
            manifest.save(out)
            raise
    finally:
        fh.close()
    _write_json(out / "final_distributions.json", distributions_payload(result, ref))
    manifest.status, manifest.finished = "ok", _now()
    manifest.extra = {"final_true_return": result.final_true_return()}
    manifest.save(out)
    return result


def run_experiment(cfg: TrainConfig, out_dir: str | Path, seeds: Sequence[int] | None = None) -> list[TrainResult]:
    """One run per seed. A single seed writes straight into ``out_dir``;
    several seeds get ``seed-<n>/`` subdirectories under a top-level manifest."""
    seeds = list(seeds) if seeds else [cfg.seed]
    if len(seeds) == 1:
        return [run_single(replace(cfg, seed=seeds[0]), out_dir)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ExperimentManifest(config_to_dict(cfg), config_hash(cfg), seeds, str(out), kind="multi-seed")
    manifest.save(out)
    results = [run_single(replace(cfg, seed=s), out / f"seed-{s}") for s in seeds]
    manifest.status, manifest.finished = "ok", _now()
    manifest.save(out)
    return results


# -- children for sweeps and comparisons -------------------------------------------------

def _child(cfg_dict: dict, out_dir: str) -> dict:
    """Run one child; never raises, so a failure is just a row."""
    try:
        cfg = config_from_dict(cfg_dict)
        result = run_single(cfg, out_dir)
        last = result.metrics[-1] if result.metrics else None
        return {
            "status": "ok",
            "final_true_return": result.final_true_return(),
            "final_corrupted_return": last.mean_corrupted_return if last else float("nan"),
            "value_lower_var": last.value_lower_var if last else float("nan"),
            "value_upper_var": last.value_upper_var if last else float("nan"),
            "error": "",
        }
    except DivergenceError as exc:
        status, msg = "diverged", str(exc)
    except ConfigError as exc:
        status, msg = "config_error", str(exc)
    except Exception as exc:  # noqa: BLE001 - recorded, the sweep continues
        status, msg = "error", f"{type(exc).__name__}: {exc}"
    log.warning("child %s failed: %s", out_dir, msg)
    nan = float("nan")
    return {"status": status, "final_true_return": nan, "final_corrupted_return": nan,
            "value_lower_var": nan, "value_upper_var": nan, "error": msg}


def _run_children(jobs: list[tuple[Any, dict, str]], n_workers: int) -> dict[Any, dict]:
    if n_workers <= 1 or len(jobs) <= 1:
        return {key: _child(d, o) for key, d, o in jobs}
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = {key: pool.submit(_child, d, o) for key, d, o in jobs}
        return {key: f.result() for key, f in futures.items()}


def _fmt_value(v: Any) -> str:
    return json.dumps(v) if not isinstance(v, str) else v


def _slug(v: Any) -> str:
    return _fmt_value(v).replace("/", "_").replace(" ", "")


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    seeds: tuple

    def __post_init__(self):
        if not self.values:
            raise ConfigError("value list is empty", "--values")
        if not self.seeds:
            raise ConfigError("need at least one seed", "--seed")


def run_sweep(base: TrainConfig, spec: SweepSpec, out_dir: str | Path, n_workers: int = 1) -> list[dict]:
    """One child per (value, seed); writes summary.csv and runs.csv.

    Returns the summary rows. Values that make an invalid config are
    recorded as failed children.
    """
    full = check_path(base, spec.param)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref = config_hash(base)
    manifest = ExperimentManifest(config_to_dict(base), ref, list(spec.seeds), str(out), kind="sweep",
                                  extra={"param": full, "values": list(spec.values)})
    manifest.save(out)

    jobs = []
    pre_failed = {}
    for v in spec.values:
        for s in spec.seeds:
            key = (_fmt_value(v), s)
            child_dir = str(out / f"{full}={_slug(v)}" / f"seed-{s}")
            try:
                cfg = replace(with_value(base, full, v), seed=s)
            except ConfigError as exc:
                nan = float("nan")
                pre_failed[key] = {"status": "config_error", "final_true_return": nan, "final_corrupted_return": nan,
                                   "value_lower_var": nan, "value_upper_var": nan, "error": str(exc), "dir": ""}
                continue
            jobs.append((key, config_to_dict(cfg), child_dir))
    results = _run_children(jobs, n_workers)
    dirs = {key: d for key, _, d in jobs}

    fh, writer = _open_csv(out / "runs.csv", RUNS_SCHEMA, ref, RUNS_COLUMNS)
    with fh:
        for v in spec.values:
            for s in spec.seeds:
                key = (_fmt_value(v), s)
                r = results.get(key) or pre_failed[key]
                writer.writerow([full, key[0], s, r["status"], r["final_true_return"], r["final_corrupted_return"],
                                 r["value_lower_var"], r["value_upper_var"], dirs.get(key, ""), r["error"]])

    summary = []
    fh, writer = _open_csv(out / "summary.csv", SUMMARY_SCHEMA, ref, SUMMARY_COLUMNS)
    with fh:
        for v in spec.values:
            rows = [results.get((_fmt_value(v), s)) or pre_failed[(_fmt_value(v), s)] for s in spec.seeds]
            ok = [r for r in rows if r["status"] == "ok"]
            finals = np.array([r["final_true_return"] for r in ok])
            corrupted = np.array([r["final_corrupted_return"] for r in ok])
            row = {
                "param": full,
                "value": _fmt_value(v),
                "n_seeds": len(rows),
                "n_failed": len(rows) - len(ok),
                "mean_final_true_return": float(finals.mean()) if ok else float("nan"),
                "std_final_true_return": float(finals.std()) if ok else float("nan"),
                "mean_final_corrupted_return": float(corrupted.mean()) if ok else float("nan"),
            }
            summary.append(row)
            writer.writerow([row[c] for c in SUMMARY_COLUMNS])

    manifest.status, manifest.finished = "ok", _now()
    manifest.extra["n_failed"] = sum(r["n_failed"] for r in summary)
    manifest.save(out)
    return summary


def compare_algorithms(base: TrainConfig, algorithms: Sequence[str], seeds: Sequence[int], out_dir: str | Path,
                       n_workers: int = 1) -> list[dict]:
    """Paired comparison: every algorithm sees the same seeds (and hence the
    same reward-noise draws). Deltas are against the first algorithm.

    Writes compare.csv with one row per (seed, algorithm) followed by one
    ``mean`` row per algorithm; returns the same rows.
    """
    if len(algorithms) < 2:
        raise ConfigError("need at least two algorithms to compare", "--algo")
    if not seeds:
        raise ConfigError("need at least one seed", "--seed")
    for a in algorithms:
        replace(base, algorithm=a)  # validates the name and algorithm-specific constraints
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref = config_hash(base)
    manifest = ExperimentManifest(config_to_dict(base), ref, list(seeds), str(out), kind="compare",
                                  extra={"algorithms": list(algorithms)})
    manifest.save(out)

    jobs = []
    for i, a in enumerate(algorithms):
        for s in seeds:
            cfg = replace(base, algorithm=a, seed=s)
            jobs.append(((i, s), config_to_dict(cfg), str(out / f"{i}-{a}" / f"seed-{s}")))
    results = _run_children(jobs, n_workers)

    rows = []
    for s in seeds:
        ref_ret = results[(0, s)]["final_true_return"]
        for i, a in enumerate(algorithms):
            r = results[(i, s)]
            rows.append({"seed": s, "algorithm": a, **{k: r[k] for k in r if k != "error"},
                         "delta_true_return": r["final_true_return"] - ref_ret, "error": r["error"]})
    per_seed = list(rows)
    for i, a in enumerate(algorithms):
        mine = per_seed[i::len(algorithms)]
        ok = [r for r in mine if r["status"] == "ok"]

        def mean(key):
            return float(np.mean([r[key] for r in ok])) if ok else float("nan")

        rows.append({"seed": "mean", "algorithm": a, "status": f"{len(ok)}/{len(mine)} ok",
                     "final_true_return": mean("final_true_return"),
                     "final_corrupted_return": mean("final_corrupted_return"),
                     "value_lower_var": mean("value_lower_var"), "value_upper_var": mean("value_upper_var"),
                     "delta_true_return": mean("delta_true_return"), "error": ""})

    fh, writer = _open_csv(out / "compare.csv", COMPARE_SCHEMA, ref, COMPARE_COLUMNS)
    with fh:
        for r in rows:
            writer.writerow([r[c] for c in COMPARE_COLUMNS])
    manifest.status, manifest.finished = "ok", _now()
    manifest.save(out)
    return rows


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
