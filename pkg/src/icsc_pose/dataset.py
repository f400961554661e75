"""Dataset synthesis and the manifest.jsonl on-disk format.

A dataset directory holds `manifest.jsonl` (one header line, then one record
line per image) and `images/NNNNNN.png`. Every float in the manifest is
written with 9 decimal places, and pose values are rounded to 9 decimals
*before* rendering, so a parsed label is bit-identical to the pose the image
was rendered from.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, Pose
from .renderer import (
    Bounds,
    RandomizationSpec,
    SceneGeometry,
    center_hit_in_view,
    label_pose,
    render,
    sample_spec,
)
from .texture import _GOLDEN, _mix

MANIFEST_NAME = "manifest.jsonl"
IMAGE_DIR = "images"
MANIFEST_VERSION = 1
MAX_RESAMPLE = 100


def per_image_seed(global_seed: int, index: int) -> int:
    """Decorrelated 64-bit stream seed for one image, stable across runs."""
    h = _mix(np.uint64(global_seed & 0xFFFFFFFFFFFFFFFF))
    with np.errstate(over="ignore"):
        return int(_mix(h + np.uint64(index) * _GOLDEN))


@dataclass
class DatasetRecord:
    index: int
    filename: str
    position: np.ndarray
    quaternion: np.ndarray
    pan_deg: float
    tilt_deg: float
    seed: int
    spec: RandomizationSpec

    @property
    def pose(self) -> Pose:
        return Pose(self.position.copy(), self.quaternion.copy())


def _jsonf(obj) -> str:
    """JSON text with every float at exactly 9 decimal places."""
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (float, np.floating)):
        return f"{float(obj):.9f}"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_jsonf(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_jsonf(v)}" for k, v in obj.items()) + "}"
    if obj is None:
        return "null"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _record_dict(rec: DatasetRecord) -> dict:
    return {
        "index": rec.index,
        "filename": rec.filename,
        "position": list(rec.position),
        "quaternion": list(rec.quaternion),
        "pan_deg": rec.pan_deg,
        "tilt_deg": rec.tilt_deg,
        "seed": rec.seed,
        "spec": rec.spec.to_dict(),
    }


def _record_from_dict(d: dict) -> DatasetRecord:
    return DatasetRecord(
        index=int(d["index"]),
        filename=d["filename"],
        position=np.asarray(d["position"], dtype=np.float64),
        quaternion=np.asarray(d["quaternion"], dtype=np.float64),
        pan_deg=float(d["pan_deg"]),
        tilt_deg=float(d["tilt_deg"]),
        seed=int(d["seed"]),
        spec=RandomizationSpec.from_dict(d["spec"]),
    )


def _one_image(args):
    out_dir, index, global_seed, bounds, intr, geo = args
    rng = np.random.default_rng(per_image_seed(global_seed, index))
    spec = None
    for _ in range(MAX_RESAMPLE):
        candidate = sample_spec(rng, bounds)
        _, ok = center_hit_in_view(label_pose(candidate), geo)
        if ok:
            spec = candidate
            break
    if spec is None:
        raise RuntimeError(
            f"image {index}: no valid camera draw in {MAX_RESAMPLE} attempts; "
            "bounds do not keep the fuselage under the image center")
    img, pose = render(spec, intr, geo)
    filename = os.path.join(IMAGE_DIR, f"{index:06d}.png")
    Image.fromarray(img).save(os.path.join(out_dir, filename))
    return DatasetRecord(index, filename, pose.position, pose.orientation,
                         spec.pan_deg, spec.tilt_deg,
                         per_image_seed(global_seed, index), spec)


def generate_dataset(out_dir: str, count: int, seed: int,
                     bounds: Bounds | None = None,
                     intr: CameraIntrinsics | None = None,
                     geo: SceneGeometry | None = None,
                     jobs: int = 1, split: int | None = None) -> list[DatasetRecord]:
    """Render `count` images plus manifest into `out_dir`.

    Output is a pure function of (count, seed, bounds, intr, geo, split); the
    jobs count only changes wall time. `split` marks the first N records as
    the training portion, the rest as validation.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if split is not None and not 0 < split < count:
        raise ValueError(f"split must lie strictly inside (0, {count})")
    bounds = bounds if bounds is not None else Bounds()
    intr = intr if intr is not None else CameraIntrinsics()
    geo = geo if geo is not None else SceneGeometry()
    os.makedirs(os.path.join(out_dir, IMAGE_DIR), exist_ok=True)

    tasks = [(out_dir, i, seed, bounds, intr, geo) for i in range(count)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_one_image, tasks, chunksize=8))
    else:
        records = [_one_image(t) for t in tasks]

    header = {
        "kind": "pose-dataset",
        "version": MANIFEST_VERSION,
        "count": count,
        "split": split,
        "seed": seed,
        "intrinsics": {
            "horizontal_fov": intr.horizontal_fov,
            "aspect": intr.aspect,
            "resolution": list(intr.resolution),
        },
        "scene": {
            "r0": geo.cylinder.r0,
            "h0": geo.cylinder.h0,
            "visible_length": geo.visible_length,
            "visible_center_y": geo.visible_center_y,
            "wall_x": geo.wall_x,
        },
        "bounds": bounds.to_dict(),
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        fh.write(_jsonf(header) + "\n")
        for rec in records:
            fh.write(_jsonf(_record_dict(rec)) + "\n")
    return records


def read_manifest(dataset_dir: str):
    """Parse manifest.jsonl; returns (header dict, records in index order)."""
    path = os.path.join(dataset_dir, MANIFEST_NAME)
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("kind") != "pose-dataset":
        raise ValueError(f"{path}: not a dataset manifest")
    records = [_record_from_dict(json.loads(ln)) for ln in lines[1:]]
    if len(records) != header["count"]:
        raise ValueError(f"{path}: header promises {header['count']} records, "
                         f"found {len(records)}")
    for i, rec in enumerate(records):
        if rec.index != i:
            raise ValueError(f"{path}: record {i} has index {rec.index}")
    return header, records


def load_image(path: str, input_size: int) -> np.ndarray:
    """PNG -> float32 (3, S, S) in [-1, 1], bilinear-resized to S x S."""
    with Image.open(path) as im:
        im = im.convert("RGB").resize((input_size, input_size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32)
    return (arr / 127.5 - 1.0).transpose(2, 0, 1)


def load_split(dataset_dir: str, input_size: int, subset: str = "all"):
    """Images and labels of a dataset directory, ready for the network.

    `subset` is "all", or "train"/"val" to take the records before/after the
    manifest's split marker. Returns (images float32 (N, 3, S, S), poses
    float64 (N, 7)).
    """
    header, records = read_manifest(dataset_dir)
    if subset != "all":
        if subset not in ("train", "val"):
            raise ValueError(f"unknown subset {subset!r}")
        split = header.get("split")
        if split is None:
            raise ValueError(f"{dataset_dir}: manifest has no split marker")
        records = records[:split] if subset == "train" else records[split:]
    images = np.stack([
        load_image(os.path.join(dataset_dir, rec.filename), input_size)
        for rec in records])
    poses = np.stack([np.concatenate([rec.position, rec.quaternion])
                      for rec in records])
    return images, poses
