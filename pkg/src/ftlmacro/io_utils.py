"""CSV/JSON output helpers: comment headers, canonical hashing, plot scripts.

Every artifact carries '#'-prefixed header lines (scenario hash, tool
version, metadata) so outputs are self-describing and diffable.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__


def canonical_hash(obj) -> str:
    """sha256 of a canonical JSON rendering (sorted keys, repr'd floats)."""

    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if hasattr(o, "__dict__"):
            return {"__class__": type(o).__name__, **o.__dict__}
        return repr(o)

    payload = json.dumps(obj, sort_keys=True, default=default, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def header_lines(meta, scenario_hash: str | None = None):
    lines = [f"ftlmacro_version={__version__}"]
    if scenario_hash is not None:
        lines.append(f"scenario_hash={scenario_hash}")
    lines.extend(meta)
    return lines


def write_csv(path, meta, columns, rows, scenario_hash: str | None = None):
    """Write CSV with '#' header comments, a column line, and repr'd floats.

    repr keeps full double precision so reruns are byte-identical.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines(meta, scenario_hash):
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_json(path, payload, scenario_hash: str | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"ftlmacro_version": __version__}
    if scenario_hash is not None:
        body["scenario_hash"] = scenario_hash
    body.update(payload)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)!r}")


def write_gnuplot_script(path, csv_path, title, xlabel, ylabel, plot_lines,
                         extra=(), scenario_hash: str | None = None):
    """Emit a gnuplot script referencing a CSV (never binary images)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {line}" for line in header_lines([], scenario_hash)]
    lines += [
        "set datafile separator ','",
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set key outside",
        *extra,
        f"csv = '{Path(csv_path).name}'",
        "plot " + ", \\\n     ".join(plot_lines),
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
