"""Self-describing JSON summaries and CSV detail files."""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

import numpy as np
import scipy

from .. import __version__


def versions():
    return {"fracflat": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj):
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def summary(config, calibration_version, results, passed):
    """Report body: resolved config, its hash, calibration and module versions, results."""
    return {"config": config.resolved(), "config_sha256": config.sha256(),
            "calibration_version": calibration_version, "versions": versions(),
            "kind": config.kind, "seed": config.seed, "passed": bool(passed), "results": results}
