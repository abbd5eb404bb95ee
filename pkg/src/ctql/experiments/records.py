"""Run records and deterministic file output for experiment drivers."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

_CSV_FLOAT = "%.17g"


@dataclass
class RunRecord:
    """Outcome of one replication of an experiment."""

    algo: str
    mode: str
    replication: int
    master_seed: int
    status: str = "ok"  # "ok" or "NA"
    divergence_step: Optional[int] = None
    final_params: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    trace: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "algo": self.algo,
            "mode": self.mode,
            "replication": self.replication,
            "master_seed": self.master_seed,
            "status": self.status,
            "divergence_step": self.divergence_step,
            "final_params": {k: _json_float(v) for k, v in sorted(self.final_params.items())},
            "metrics": {k: _json_float(v) for k, v in sorted(self.metrics.items())},
        }


def _json_float(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def aggregate_metrics(records: Sequence[RunRecord]) -> dict:
    """Mean of each metric over the replications that finished, folded in
    replication order so the result does not depend on scheduling."""
    ok = [r for r in sorted(records, key=lambda r: r.replication) if r.status == "ok"]
    out = {"replications": len(records), "completed": len(ok),
           "diverged": len(records) - len(ok)}
    if not ok:
        return out
    keys = sorted(ok[0].metrics)
    means = {}
    for key in keys:
        total = 0.0
        count = 0
        for rec in ok:
            v = float(rec.metrics.get(key, float("nan")))
            if math.isfinite(v):
                total += v
                count += 1
        means[key] = _json_float(total / count) if count else "nan"
    out["metric_means"] = means
    return out


def write_trace_csv(path, trace: dict) -> None:
    """Columns in sorted key order except a leading step/time column."""
    if not trace:
        return
    keys = list(trace.keys())
    lead = [k for k in ("step", "j", "t") if k in keys]
    rest = sorted(k for k in keys if k not in lead)
    cols = lead + rest
    n = len(trace[cols[0]])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i in range(n):
            writer.writerow([_CSV_FLOAT % float(trace[c][i]) for c in cols])


def write_summary(out_dir, config: dict, records: Sequence[RunRecord],
                  extra: Optional[dict] = None) -> str:
    """summary.json plus per-replication trace files under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "config": {k: _json_float(v) if isinstance(v, (int, float, np.floating, np.integer)) else v
                   for k, v in sorted(config.items())},
        "replications": [r.to_dict() for r in sorted(records, key=lambda r: r.replication)],
        "aggregate": aggregate_metrics(records),
    }
    if extra:
        payload.update(extra)
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for rec in records:
        if rec.trace:
            reward_keys = [k for k in rec.trace if k.startswith("reward")]
            param_keys = [k for k in rec.trace if not k.startswith("reward")]
            lead = [k for k in ("step", "j", "t") if k in rec.trace]
            write_trace_csv(os.path.join(out_dir, f"trace_{rec.replication}.csv"),
                            {k: rec.trace[k] for k in param_keys})
            if reward_keys:
                write_trace_csv(os.path.join(out_dir, f"rewards_{rec.replication}.csv"),
                                {k: rec.trace[k] for k in lead + reward_keys})
    return path


def config_dict(cfg) -> dict:
    """Flatten a config dataclass to JSON-friendly scalars."""
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if callable(v):
            out[f.name] = getattr(v, "__name__", "callable")
        elif dataclasses.is_dataclass(v):
            out.update({f"{f.name}.{k}": vv for k, vv in config_dict(v).items()})
        else:
            out[f.name] = v
    return out
