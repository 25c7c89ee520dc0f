"""Run artifacts: schedule CSV, per-epoch metrics JSONL, config echo and binary checkpoints.

Checkpoint layout: the magic bytes ``STN1`` followed by records until EOF,
each record being a u32 name length, the UTF-8 name, a u32 rank, one u64 per
dimension and the float64 data, all little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .trainer import ScheduleLog

MAGIC = b"STN1"
SCHEDULE_FILE = "schedule.csv"
METRICS_FILE = "metrics.jsonl"
CONFIG_FILE = "config.json"
CHECKPOINT_FILE = "checkpoint.stn"


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, tensors: dict) -> None:
    """Write ``name -> array`` (Tensors are accepted) in insertion order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, value in tensors.items():
            arr = np.asarray(getattr(value, "data", value), dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    out = {}
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated record at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return out


def write_schedule(path, schedule: ScheduleLog) -> None:
    Path(path).write_text(schedule.to_csv())


def read_schedule(path) -> ScheduleLog:
    return ScheduleLog.from_csv(Path(path).read_text())


def write_metrics(path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_metrics(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_config(path, config: dict) -> None:
    Path(path).write_text(json.dumps(config, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "__dict__"):
        return vars(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_run(out_dir, schedule: ScheduleLog | None, metrics: list[dict], config: dict,
             tensors: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if schedule is not None:
        write_schedule(out / SCHEDULE_FILE, schedule)
    write_metrics(out / METRICS_FILE, metrics)
    write_config(out / CONFIG_FILE, config)
    if tensors:
        write_checkpoint(out / CHECKPOINT_FILE, tensors)
    return out
