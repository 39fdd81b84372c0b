"""Plain-text and JSON artifacts written by runs.

Every file starts with a stamp line naming the format, its version, the
config hash that produced it and the code version::

    # wignerfrag-<kind> <format version> config=<hash> code=<version>
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DensityGrid
from .classical import Configuration
from .torus import TorusCell

FORMAT_VERSION = 1


def stamp_line(kind: str, config_hash: str = "none") -> str:
    return f"# wignerfrag-{kind} {FORMAT_VERSION} config={config_hash} code={__version__}"


def parse_stamp(line: str, kind: str) -> dict:
    parts = line.lstrip("#").split()
    if not parts or parts[0] != f"wignerfrag-{kind}":
        raise ValueError(f"not a {kind} file: {line.strip()!r}")
    version = int(parts[1])
    if version > FORMAT_VERSION:
        raise ValueError(f"{kind} format version {version} is newer than supported {FORMAT_VERSION}")
    fields = dict(p.split("=", 1) for p in parts[2:])
    return {"version": version, **fields}


def write_positions(path, config: Configuration, cell: TorusCell, config_hash: str = "none") -> Path:
    path = Path(path)
    energy = config.energy if config.energy is not None else math.nan
    lines = [
        stamp_line("positions", config_hash),
        "# N lx ly energy",
        f"# {config.n} {cell.lx:.17g} {cell.ly:.17g} {energy:.17g}",
        "index,x,y",
    ]
    lines += [f"{i},{x:.17g},{y:.17g}" for i, (x, y) in enumerate(config.positions)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_positions(path):
    """Returns ``(Configuration, TorusCell, stamp)``."""
    lines = Path(path).read_text().splitlines()
    stamp = parse_stamp(lines[0], "positions")
    n, lx, ly, energy = lines[2].lstrip("#").split()
    rows = np.array([[float(v) for v in ln.split(",")[1:]] for ln in lines[4:] if ln.strip()])
    if len(rows) != int(n):
        raise ValueError(f"positions file lists {len(rows)} rows, header says {n}")
    energy = float(energy)
    cell = TorusCell(float(lx), float(ly), int(n))
    return Configuration(rows, None if math.isnan(energy) else energy), cell, stamp


def write_density(path, density: DensityGrid, n_electrons: int, config_hash: str = "none") -> Path:
    path = Path(path)
    mx, my = density.shape
    cell = density.cell
    with path.open("w") as fh:
        fh.write(stamp_line("density", config_hash) + "\n")
        fh.write("# mx my lx ly N\n")
        fh.write(f"# {mx} {my} {cell.lx:.17g} {cell.ly:.17g} {n_electrons}\n")
        np.savetxt(fh, density.values, fmt="%.17g")
    return path


def read_density(path):
    """Returns ``(DensityGrid, n_electrons, stamp)``."""
    path = Path(path)
    with path.open() as fh:
        stamp = parse_stamp(fh.readline(), "density")
        fh.readline()
        mx, my, lx, ly, n = fh.readline().lstrip("#").split()
        values = np.loadtxt(fh, ndmin=2)
    if values.shape != (int(mx), int(my)):
        raise ValueError(f"density block has shape {values.shape}, header says {mx}x{my}")
    cell = TorusCell(float(lx), float(ly), int(n))
    return DensityGrid(values, cell), int(n), stamp


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, kind: str, payload: dict, config_hash: str = "none") -> Path:
    path = Path(path)
    doc = {"format": f"wignerfrag-{kind}", "version": FORMAT_VERSION, "config_hash": config_hash,
           "code_version": __version__, **_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return path


def read_json(path, kind: str) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != f"wignerfrag-{kind}":
        raise ValueError(f"{path} is not a {kind} document")
    if doc.get("version", 0) > FORMAT_VERSION:
        raise ValueError(f"{kind} document version {doc['version']} is newer than supported")
    return doc
