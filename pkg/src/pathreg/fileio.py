"""File formats: path CSV, transform JSON, and phantom JSON.

Path CSV: header ``t,x,y,z`` (t optional, seconds) or ``x,y,z``; one sample
per row, millimeters, ordered. Transform JSON: row-major 3x3 rotation,
3-vector translation, plus frame tags. Phantom JSON: branch list with ids,
parent links, per-point radii, and centerline coordinates.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path as FsPath

import numpy as np

from .errors import InvalidArgument
from .geometry import Frame, Path3, RigidTransform
from .simulation import Branch, PhantomModel


def write_path_csv(path: Path3, file) -> None:
    file = FsPath(file)
    with file.open("w", newline="") as handle:
        writer = csv.writer(handle)
        if path.timestamps is not None:
            writer.writerow(["t", "x", "y", "z"])
            for t, p in zip(path.timestamps, path.points):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in p])
        else:
            writer.writerow(["x", "y", "z"])
            for p in path.points:
                writer.writerow([repr(float(v)) for v in p])


def read_path_csv(file, frame: Frame = Frame.EM) -> Path3:
    file = FsPath(file)
    with file.open(newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise InvalidArgument(f"{file}: empty path file")
    header = [c.strip().lower() for c in rows[0]]
    if header == ["t", "x", "y", "z"]:
        has_time = True
    elif header == ["x", "y", "z"]:
        has_time = False
    else:
        raise InvalidArgument(f"{file}: expected header 't,x,y,z' or 'x,y,z', got {rows[0]}")
    body = [r for r in rows[1:] if r]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise InvalidArgument(f"{file}: non-numeric value ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InvalidArgument(f"{file}: rows do not match the header")
    if has_time:
        return Path3(data[:, 1:], frame=frame, timestamps=data[:, 0])
    return Path3(data, frame=frame)


def transform_to_dict(
    transform: RigidTransform,
    frame_from: Frame = Frame.EM,
    frame_to: Frame = Frame.INTRAOP,
) -> dict:
    return {
        "rotation": transform.rotation.tolist(),
        "translation": transform.translation.tolist(),
        "frame_from": frame_from.value,
        "frame_to": frame_to.value,
    }


def write_transform_json(
    transform: RigidTransform,
    file,
    frame_from: Frame = Frame.EM,
    frame_to: Frame = Frame.INTRAOP,
) -> None:
    FsPath(file).write_text(
        json.dumps(transform_to_dict(transform, frame_from, frame_to), indent=2, sort_keys=True)
        + "\n"
    )


def read_transform_json(file) -> tuple[RigidTransform, Frame, Frame]:
    data = json.loads(FsPath(file).read_text())
    try:
        transform = RigidTransform(
            np.asarray(data["rotation"], dtype=np.float64),
            np.asarray(data["translation"], dtype=np.float64),
        )
        frame_from = Frame(data.get("frame_from", Frame.EM.value))
        frame_to = Frame(data.get("frame_to", Frame.INTRAOP.value))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"{file}: not a valid transform file ({exc})") from exc
    return transform, frame_from, frame_to


def phantom_to_dict(phantom: PhantomModel) -> dict:
    return {
        "inlet_index": phantom.inlet_index,
        "branches": [
            {
                "id": b.id,
                "parent": b.parent_id,
                "junction_index": b.junction_index,
                "radii_mm": [float(r) for r in b.radii],
                "centerline": b.centerline.points.tolist(),
            }
            for b in phantom.branches
        ],
    }


def write_phantom_json(phantom: PhantomModel, file) -> None:
    FsPath(file).write_text(json.dumps(phantom_to_dict(phantom), indent=2, sort_keys=True) + "\n")


def phantom_from_dict(data: dict) -> PhantomModel:
    try:
        branches = tuple(
            Branch(
                id=int(entry["id"]),
                centerline=Path3(
                    np.asarray(entry["centerline"], dtype=np.float64), frame=Frame.PREOP
                ),
                radii=np.asarray(entry["radii_mm"], dtype=np.float64),
                parent_id=None if entry["parent"] is None else int(entry["parent"]),
                junction_index=(
                    None if entry["junction_index"] is None else int(entry["junction_index"])
                ),
            )
            for entry in data["branches"]
        )
        return PhantomModel(branches=branches, inlet_index=int(data.get("inlet_index", 0)))
    except (KeyError, TypeError) as exc:
        raise InvalidArgument(f"not a valid phantom document ({exc})") from exc


def read_phantom_json(file) -> PhantomModel:
    return phantom_from_dict(json.loads(FsPath(file).read_text()))
