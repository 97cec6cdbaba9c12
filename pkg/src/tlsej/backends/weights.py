"""
Neutral weight-manifest format and pretrained-encoder import.

A manifest is a directory holding ``index.txt`` (``name<TAB>dtype<TAB>shape``
per line, shape as comma-separated integers, empty for scalars) and one
little-endian flat ``<name>.bin`` per array. A name map is a two-column
``external_name<TAB>internal_name`` text file.
"""

from __future__ import annotations

import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import ParseError, PretrainedLoadError, ShapeError

log = logging.getLogger(__name__)

_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "int64": "<i8",
    "int32": "<i4",
}


def _dtype_name(arr):
    name = np.dtype(arr.dtype).name
    if name not in _DTYPES:
        raise ValueError(f"unsupported dtype {name}")
    return name


def _check_name(name):
    if not name or "/" in name or "\\" in name or "\t" in name or "\n" in name or name.startswith("."):
        raise ValueError(f"manifest entry name {name!r} cannot be used as a file name")


def write_manifest(path, arrays):
    """Write ``{name: array}`` atomically (temp directory, then rename)."""
    for name in arrays:
        _check_name(name)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        lines = []
        for name, arr in arrays.items():
            if isinstance(arr, torch.Tensor):
                arr = arr.detach().cpu().numpy()
            arr = np.asarray(arr)
            dt = _dtype_name(arr)
            lines.append(f"{name}\t{dt}\t{','.join(str(s) for s in arr.shape)}\n")
            (tmp / f"{name}.bin").write_bytes(np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes())
        (tmp / "index.txt").write_text("".join(lines), encoding="utf-8")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def read_manifest(path):
    """Read a manifest directory into an ordered ``{name: np.ndarray}``."""
    path = Path(path)
    index = path / "index.txt"
    arrays = {}
    with open(index, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ParseError(index, lineno, f"expected 3 tab-separated columns, got {len(cols)}")
            name, dt, shape = cols
            if dt not in _DTYPES:
                raise ParseError(index, lineno, f"unsupported dtype {dt!r}")
            shape = tuple(int(s) for s in shape.split(",")) if shape else ()
            data = np.frombuffer((path / f"{name}.bin").read_bytes(), dtype=_DTYPES[dt])
            if data.size != int(np.prod(shape)):
                raise ParseError(index, lineno, f"{name}: {data.size} values on disk, shape {shape} needs {int(np.prod(shape))}")
            arrays[name] = data.reshape(shape).astype(np.dtype(dt))
    return arrays


def read_name_map(path):
    path = Path(path)
    mapping = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError(path, lineno, f"expected external<TAB>internal, got {len(cols)} columns")
            mapping[cols[0]] = cols[1]
    return mapping


def write_name_map(path, mapping):
    with open(path, "w", encoding="utf-8") as f:
        for ext, internal in mapping.items():
            f.write(f"{ext}\t{internal}\n")


def export_state(module, prefix=""):
    """State-dict entries (parameters and buffers) whose names start with ``prefix``."""
    return {k: v.detach().cpu().clone() for k, v in module.state_dict().items() if k.startswith(prefix)}


def export_manifest(module, path, prefix="", name_map=None):
    """Write ``module``'s state under ``prefix`` as a manifest.

    ``name_map`` (external -> internal) renames entries to their external names.
    """
    state = export_state(module, prefix)
    if name_map:
        inverse = {v: k for k, v in name_map.items()}
        state = {inverse.get(k, k): v for k, v in state.items()}
    return write_manifest(path, state)


@dataclass
class LoadReport:
    loaded: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # manifest names with no target
    missing: list = field(default_factory=list)  # expected targets absent from the manifest

    def summary(self):
        return f"loaded {len(self.loaded)}, skipped {len(self.skipped)}, missing {len(self.missing)}"


def load_pretrained(manifest, model, name_map=None, prefix="encoder.", allow_partial=False):
    """
    Overwrite ``model``'s parameters under ``prefix`` from a weight manifest.

    Parameters
    ----------
    manifest : path or dict
        Manifest directory, or an already-read ``{name: array}``.
    model : torch.nn.Module
    name_map : dict or path, optional
        External manifest name -> internal state-dict name. Unmapped names
        are used as-is.
    prefix : str
        Only state entries with this prefix are expected; the rest (pooling,
        embedding, classifier) keep their initialisation.
    allow_partial : bool
        Load what is present even when expected entries are missing.

    Returns
    -------
    LoadReport

    Raises
    ------
    ShapeError
        A mapped array's shape differs from its target; names the parameter.
    PretrainedLoadError
        Expected entries are missing and ``allow_partial`` is false.
    """
    arrays = read_manifest(manifest) if isinstance(manifest, (str, os.PathLike)) else dict(manifest)
    if isinstance(name_map, (str, os.PathLike)):
        name_map = read_name_map(name_map)
    name_map = name_map or {}
    state = model.state_dict()
    expected = [k for k in state if k.startswith(prefix)]

    report = LoadReport()
    updates = {}
    for ext, arr in arrays.items():
        internal = name_map.get(ext, ext)
        if internal not in state or not internal.startswith(prefix):
            report.skipped.append(ext)
            continue
        target = state[internal]
        if tuple(arr.shape) != tuple(target.shape):
            raise ShapeError(
                f"parameter {internal} (manifest name {ext}): shape {tuple(arr.shape)} "
                f"does not match model shape {tuple(target.shape)}"
            )
        updates[internal] = torch.from_numpy(np.array(arr)).to(target.dtype)
    report.missing = [k for k in expected if k not in updates]
    report.loaded = [k for k in expected if k in updates]
    if report.missing and not allow_partial:
        raise PretrainedLoadError(
            f"{len(report.missing)} expected parameters missing from manifest, e.g. {report.missing[:5]}"
        )
    with torch.no_grad():
        for k, v in updates.items():
            state[k].copy_(v)
    log.info("pretrained import: %s", report.summary())
    return report
