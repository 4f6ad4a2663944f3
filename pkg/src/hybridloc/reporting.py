"""Sweep tables and per-cycle trace files."""

from __future__ import annotations

import csv
import json
import math

import numpy as np

SWEEP_HEADER = ("axis_value", "rmse_m", "mean_crb", "trials", "seed")


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([_fmt(r.value), _fmt(r.rmse), _fmt(r.mean_crb), r.trials, r.seed])


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return [
            {"axis_value": float(r["axis_value"]), "rmse_m": float(r["rmse_m"]),
             "mean_crb": float(r["mean_crb"]), "trials": int(r["trials"]), "seed": int(r["seed"])}
            for r in reader
        ]


# --- JSON lines ---------------------------------------------------------------
# Floats are written with 17 significant digits so a reload is bit-exact;
# complex numbers become [re, im] pairs.

def _plain(obj):
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _encode(obj) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        if math.isfinite(obj):
            return format(obj, ".17g")
        return json.dumps(obj)          # NaN / Infinity, as the json module reads them
    if isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(k) + ":" + _encode(v) for k, v in obj.items()) + "}"
    if isinstance(obj, list):
        return "[" + ",".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return _encode(_plain(obj))


def record_to_dict(record, trial_seed: int | None = None) -> dict:
    estimates = [
        [{"ris": e.ris_id, "region": e.region.value, "params": list(e.params),
          "coefficient": e.coefficient, "support": list(e.support),
          "residual_norm": e.residual_norm} for e in per_user]
        for per_user in record.estimates
    ]
    return {
        "trial_seed": trial_seed,
        "cycle": record.cycle,
        "samples": record.samples,
        "estimates": estimates,
        "fused": record.fused,
        "selection": None if record.selection is None else [list(s) for s in record.selection],
        "phases": record.phases,
        "next_phases": record.next_phases,
        "crb": record.crb,
    }


def write_trace(path, trials) -> int:
    """One JSON line per cycle record of every trial; returns the line count."""
    n = 0
    with open(path, "w") as fh:
        for t in trials:
            for rec in t.records:
                fh.write(dumps(record_to_dict(rec, t.seed)) + "\n")
                n += 1
    return n


def _complex_array(x):
    if x is None:
        return None
    a = np.asarray(x, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def read_trace(path) -> list[dict]:
    """Reload a trace; complex fields come back as complex arrays."""
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            for key in ("samples", "phases", "next_phases"):
                d[key] = _complex_array(d[key])
            d["fused"] = np.asarray(d["fused"], dtype=float)
            d["crb"] = np.asarray(d["crb"], dtype=float)
            for per_user in d["estimates"]:
                for e in per_user:
                    re, im = e["coefficient"]
                    e["coefficient"] = complex(re, im)
            out.append(d)
    return out
