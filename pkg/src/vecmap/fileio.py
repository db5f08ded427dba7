"""On-disk formats: scene files, dataset manifests, predictions,
checkpoints.  Binary layouts are documented in docs/FORMATS.md; all
multi-byte integers are little-endian, all payload arrays are C-order.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from .config import RunConfig, config_from_dict
from .maptypes import MapElement, VectorMap
from .scenes import Scene

SCENE_MAGIC = b"VMSC"
CKPT_MAGIC = b"VMCK"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Corrupt or incompatible file content."""


def _write_block(f, magic: bytes, header: dict, arrays: list) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    f.write(magic)
    f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
    f.write(blob)
    for arr in arrays:
        f.write(np.ascontiguousarray(arr).tobytes())


def _read_block(f, magic: bytes, path) -> dict:
    head = f.read(4)
    if head != magic:
        raise FormatError(f"{path}: bad magic {head!r}, expected {magic!r}")
    version, hlen = struct.unpack("<II", f.read(8))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        return json.loads(f.read(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt header: {e}") from e


def _read_array(f, spec: dict, path) -> np.ndarray:
    dtype = np.dtype(spec["dtype"])
    shape = tuple(int(s) for s in spec["shape"])
    count = int(np.prod(shape)) if shape else 1
    raw = f.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise FormatError(f"{path}: truncated payload for {spec['name']}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------- scenes


def write_scene(path, scene: Scene) -> None:
    arrays = [scene.cam, scene.lidar, scene.gt_flow]
    header = {
        "scene_id": scene.scene_id,
        "seed": int(scene.seed),
        "elements": [
            {"category": e.category, "points": e.points.tolist()} for e in scene.gt_map.elements
        ],
        "arrays": [
            {"name": n, "shape": list(a.shape), "dtype": str(a.dtype)}
            for n, a in zip(("cam", "lidar", "gt_flow"), arrays)
        ],
    }
    with open(path, "wb") as f:
        _write_block(f, SCENE_MAGIC, header, arrays)


def read_scene(path) -> Scene:
    with open(path, "rb") as f:
        header = _read_block(f, SCENE_MAGIC, path)
        got = {}
        for spec in header["arrays"]:
            got[spec["name"]] = _read_array(f, spec, path)
    missing = {"cam", "lidar", "gt_flow"} - set(got)
    if missing:
        raise FormatError(f"{path}: missing arrays {sorted(missing)}")
    elements = [
        MapElement(e["category"], np.asarray(e["points"], dtype=np.float64))
        for e in header["elements"]
    ]
    return Scene(
        scene_id=header["scene_id"],
        gt_map=VectorMap(elements=elements),
        cam=got["cam"],
        lidar=got["lidar"],
        gt_flow=got["gt_flow"],
        seed=int(header["seed"]),
    )


# --------------------------------------------------------------- datasets


class DatasetIndex:
    """Lazy view over a dataset directory written by make_dataset."""

    def __init__(self, root: str, manifest: dict):
        self.root = root
        self.manifest = manifest
        self.config = config_from_dict(manifest["config"])

    def entries(self, split: str | None = None) -> list:
        rows = self.manifest["scenes"]
        if split is None:
            return rows
        return [r for r in rows if r["split"] == split]

    def load(self, entry: dict) -> Scene:
        return read_scene(os.path.join(self.root, entry["file"]))

    def scenes(self, split: str | None = None):
        for entry in self.entries(split):
            yield self.load(entry)


def write_manifest(root, cfg: RunConfig, master_seed: int, rows: list) -> None:
    manifest = {
        "version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "master_seed": int(master_seed),
        "scenes": rows,
    }
    with open(os.path.join(root, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def open_dataset(root) -> DatasetIndex:
    path = os.path.join(root, "manifest.json")
    try:
        with open(path) as f:
            manifest = json.load(f)
    except OSError as e:
        raise FormatError(f"not a dataset directory (no readable manifest): {root}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: corrupt manifest: {e}") from e
    if manifest.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported manifest version")
    return DatasetIndex(root, manifest)


# ------------------------------------------------------------ predictions


def write_predictions(path, scene_id: str, preds: list) -> None:
    doc = {
        "scene_id": scene_id,
        "elements": [
            {
                "category": p.category,
                "confidence": float(p.confidence),
                "points": np.asarray(p.points, dtype=np.float64).tolist(),
                "slot": int(p.slot),
            }
            for p in preds
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_predictions(path) -> tuple[str, list]:
    from .maptypes import Prediction

    with open(path) as f:
        doc = json.load(f)
    preds = [
        Prediction(
            category=e["category"],
            points=np.asarray(e["points"], dtype=np.float64),
            confidence=float(e["confidence"]),
            slot=int(e.get("slot", -1)),
        )
        for e in doc["elements"]
    ]
    return doc["scene_id"], preds


# ------------------------------------------------------------ checkpoints


def save_checkpoint(path, state: dict, model_hash: str, meta: dict | None = None) -> None:
    names = sorted(state)
    header = {
        "model_hash": model_hash,
        "meta": meta or {},
        "params": [
            {"name": n, "shape": list(state[n].shape), "dtype": str(state[n].dtype)}
            for n in names
        ],
    }
    with open(path, "wb") as f:
        _write_block(f, CKPT_MAGIC, header, [state[n] for n in names])


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns (state dict, header).  Callers must check model_hash."""
    with open(path, "rb") as f:
        header = _read_block(f, CKPT_MAGIC, path)
        state = {}
        for spec in header["params"]:
            state[spec["name"]] = _read_array(f, spec, path)
    return state, header
