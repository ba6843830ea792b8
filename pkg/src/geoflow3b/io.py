"""Output helpers: round-trip CSV, canonical JSON and the run manifest.

Every file except ``manifest.json`` is a pure function of the resolved
configuration, so reruns can be compared by checksum. Timestamps live only
in the manifest.
"""
import datetime as _dt
import hashlib
import json
import os
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__

__all__ = ["to_jsonable", "canonical_json", "config_hash", "sha256_file", "atomic_write",
           "write_csv", "write_json", "read_csv", "RunDirectory"]

CSV_FORMAT = "%.17g"


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays, fractions and tuples to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, Fraction):
        return {"numerator": obj.numerator, "denominator": obj.denominator, "value": float(obj)}
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def canonical_json(obj):
    """Sorted-key, fixed-separator JSON text (floats in shortest round-trip form)."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(config):
    """SHA-256 of the canonical JSON of a configuration."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def sha256_file(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(chunk), b""):
            h.update(block)
    return h.hexdigest()


def atomic_write(path, data):
    """Write text or bytes to ``path`` via a temporary file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(columns, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size == 0:
        rows = rows.reshape(0, len(columns))
    if rows.shape[1] != len(columns):
        raise ValueError(f"{len(columns)} column names for {rows.shape[1]} columns")
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(CSV_FORMAT % v for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, columns, rows):
    """CSV with a header line and 17 significant digits per value."""
    return atomic_write(path, _csv_text(list(columns), rows))


def write_json(path, obj):
    return atomic_write(path, canonical_json(obj))


def read_csv(path):
    """Inverse of :func:`write_csv`: ``(columns, array)``."""
    with open(path) as f:
        columns = f.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return columns, data.reshape(-1, len(columns))


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class RunDirectory:
    """Output directory with a single writer and an inventory for the manifest.

    Parameters
    ----------
    root : path-like
    command : str
    config : dict
        Resolved configuration (seed filled in); hashed into the manifest.
    """

    def __init__(self, root, command, config):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config = config
        self.started = _now()
        self.files = {}

    def path(self, name):
        return self.root / name

    def _register(self, name, description, columns=None):
        entry = {"description": description}
        if columns is not None:
            entry["columns"] = list(columns)
        self.files[name] = entry

    def csv(self, name, columns, rows, description=""):
        write_csv(self.path(name), columns, rows)
        self._register(name, description, columns)

    def json(self, name, obj, description=""):
        write_json(self.path(name), obj)
        self._register(name, description)

    def finish(self, diagnostics, status="ok", exit_code=0):
        """Write ``manifest.json`` listing every file with size and SHA-256."""
        inventory = []
        for name in sorted(self.files):
            p = self.path(name)
            inventory.append({"path": name, "sha256": sha256_file(p), "bytes": p.stat().st_size,
                              **self.files[name]})
        manifest = {"artifact": "geoflow3b", "version": __version__, "command": self.command,
                    "config_hash": config_hash(self.config), "started": self.started,
                    "finished": _now(), "status": status, "exit_code": exit_code,
                    "files": inventory, "diagnostics": diagnostics}
        write_json(self.path("manifest.json"), manifest)
        return manifest
