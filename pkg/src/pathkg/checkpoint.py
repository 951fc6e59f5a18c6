"""Checkpoint directories: a ``key=value`` manifest plus one binary file per parameter family.

Array files hold a 16-byte header (``b"PK"``, format byte, ndim byte, three
little-endian uint32 dims with unused dims set to 0) followed by row-major
little-endian float32 data.  Parameters are kept in float64 while training,
so saving rounds them to float32; a loaded checkpoint re-saves byte-for-byte.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .config import Config
from .errors import IncompatibleCheckpointError
from .model import EncoderParams, ModelParams

FORMAT_VERSION = 1
MAGIC = b"PK"
HEADER = struct.Struct("<2sBB3I")
MANIFEST = "manifest.txt"
CONFIG_FILE = "config.cfg"
FILES = {
    "entity": "entity.bin",
    "relation": "relation.bin",
    "types": "types.bin",
    "projection": "projection.bin",
    "W_h": "w_h.bin",
    "W_i": "w_i.bin",
}


def write_array(path, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if not 1 <= arr.ndim <= 3:
        raise ValueError("only 1-3 dimensional arrays are supported")
    dims = list(arr.shape) + [0] * (3 - arr.ndim)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, arr.ndim, *dims))
        f.write(arr.tobytes(order="C"))
    os.replace(tmp, path)


def read_array(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(HEADER.size)
        if len(header) != HEADER.size:
            raise IncompatibleCheckpointError(f"{path}: truncated header")
        magic, version, ndim, *dims = HEADER.unpack(header)
        if magic != MAGIC or version != FORMAT_VERSION or not 1 <= ndim <= 3:
            raise IncompatibleCheckpointError(f"{path}: not a version-{FORMAT_VERSION} array file")
        shape = tuple(dims[:ndim])
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise IncompatibleCheckpointError(f"{path}: expected {shape}, found {data.size} values")
    return data.reshape(shape).astype(np.float64)


def save_checkpoint(params: ModelParams, cfg: Config, path, extra: dict | None = None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, arr in params.families().items():
        write_array(path / FILES[name], arr)
    manifest = {
        "format_version": FORMAT_VERSION,
        "k": params.k,
        "num_entities": params.entity.shape[0],
        "num_relations": params.relation.shape[0],
        "num_types": 0 if params.types is None else params.types.shape[0],
        "converter": params.converter,
        "norm": cfg.norm,
        "seed": cfg.seed,
    }
    manifest.update(extra or {})
    (path / MANIFEST).write_text("".join(f"{k}={v}\n" for k, v in manifest.items()), encoding="utf-8")
    cfg.save(path / CONFIG_FILE)


def read_manifest(path) -> dict[str, str]:
    text = (Path(path) / MANIFEST).read_text(encoding="utf-8")
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


def load_checkpoint(path, k: int | None = None, num_entities: int | None = None,
                    num_relations: int | None = None, num_types: int | None = None) -> ModelParams:
    """Load parameters, checking the manifest against whatever live sizes are given."""
    path = Path(path)
    manifest = read_manifest(path)
    if int(manifest.get("format_version", -1)) != FORMAT_VERSION:
        raise IncompatibleCheckpointError(f"{path}: unsupported format {manifest.get('format_version')}")
    expected = {"k": k, "num_entities": num_entities, "num_relations": num_relations, "num_types": num_types}
    for key, live in expected.items():
        if live is not None and int(manifest[key]) != live:
            raise IncompatibleCheckpointError(
                f"{path}: checkpoint has {key}={manifest[key]} but the session has {key}={live}")
    converter = manifest["converter"]
    arrays = {}
    for name, fname in FILES.items():
        fpath = path / fname
        if name == "types" and converter != "ec1" or name == "projection" and converter != "ec2":
            continue
        if not fpath.exists():
            raise FileNotFoundError(f"checkpoint file missing: {fpath}")
        arrays[name] = read_array(fpath)
    params = ModelParams(
        entity=arrays["entity"],
        relation=arrays["relation"],
        encoder=EncoderParams(arrays["W_h"], arrays["W_i"]),
        converter=converter,
        types=arrays.get("types"),
        projection=arrays.get("projection"),
    )
    kk = int(manifest["k"])
    shapes_ok = (params.entity.shape == (int(manifest["num_entities"]), kk)
                 and params.relation.shape == (int(manifest["num_relations"]), kk)
                 and params.encoder.W_h.shape == (kk, kk) and params.encoder.W_i.shape == (kk, kk))
    if not shapes_ok:
        raise IncompatibleCheckpointError(f"{path}: array shapes disagree with the manifest")
    return params


def load_checkpoint_config(path) -> Config:
    return Config.load(Path(path) / CONFIG_FILE)
