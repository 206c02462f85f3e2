"""On-disk formats: dataset lines, checkpoints, train logs, reports.

Every writer is byte-deterministic for fixed inputs: keys are sorted and
floats use their shortest round-trip representation, so a value read back is
bit-identical to the one written.
"""

import json
import os
from pathlib import Path

import numpy as np

from .detector import DetectorParams
from .simworld import DatasetSplit, Scene, oracle_truth
from .trainer import TrainLog, TrainState

CHECKPOINT_FORMAT = "semidet-checkpoint"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """A file does not match the expected format."""


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _write_text(path, text):
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


# dataset ------------------------------------------------------------------

def scene_record(scene):
    boxes, classes = oracle_truth(scene)
    return {
        "id": scene.id,
        "w": scene.grid_w,
        "h": scene.grid_h,
        "features": scene.features.ravel().tolist(),
        "boxes": [[*map(float, b), int(c)] for b, c in zip(boxes, classes)],
        "labeled": scene.labeled,
    }


def scene_from_record(rec):
    try:
        w, h = int(rec["w"]), int(rec["h"])
        feats = np.asarray(rec["features"], dtype=np.float64)
        if feats.size % (w * h):
            raise FormatError(f"scene {rec['id']}: feature count {feats.size} not a multiple of {w * h}")
        boxes = np.asarray([b[:4] for b in rec["boxes"]], dtype=np.float64).reshape(-1, 4)
        classes = np.asarray([b[4] for b in rec["boxes"]], dtype=np.int64)
        return Scene(rec["id"], w, h, feats.reshape(w * h, -1), boxes, classes, bool(rec["labeled"]))
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"malformed scene record: {exc}") from None


def heldout_path(path):
    """Held-out evaluation scenes live next to the dataset file."""
    path = Path(path)
    return path.with_name(path.stem + ".test" + path.suffix)


def write_scenes(scenes, path):
    _write_text(path, "".join(_dumps(scene_record(s)) + "\n" for s in scenes))


def read_scenes(path):
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            scenes.append(scene_from_record(rec))
    return scenes


def write_dataset(split, path):
    """Training pool (labeled and unlabeled, ordered by id) plus the test sibling file."""
    write_scenes(sorted(split.labeled + split.unlabeled, key=lambda s: s.id), path)
    write_scenes(split.test or [], heldout_path(path))


def read_dataset(path, seed=0):
    scenes = read_scenes(path)
    tp = heldout_path(path)
    test = read_scenes(tp) if tp.exists() else []
    return DatasetSplit(
        labeled=[s for s in scenes if s.labeled],
        unlabeled=[s for s in scenes if not s.labeled],
        seed=int(seed),
        test=test,
    )


# checkpoints --------------------------------------------------------------

def checkpoint_record(state, cfg_hash, stage, log=None):
    rec = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg_hash,
        "iteration": int(state.iteration),
        "stage": stage,
        "class_count": state.student.class_count,
        "feature_dim": state.student.feature_dim,
        "theta_s": state.student.flat().tolist(),
        "theta_t": None if state.teacher is None else state.teacher.flat().tolist(),
    }
    if log is not None:
        rec["log"] = {"records": log.records, "snapshots": log.snapshots}
    return rec


def write_checkpoint(path, state, cfg_hash, stage, log=None):
    _write_text(path, _dumps(checkpoint_record(state, cfg_hash, stage, log)) + "\n")


def read_checkpoint(path, expected_hash=None):
    """Returns ``(state, log, record)``; ``log`` is None when the file carries none."""
    with open(path, encoding="utf-8") as fh:
        try:
            rec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    if rec.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a checkpoint")
    if rec.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {rec.get('version')!r}")
    if expected_hash is not None and rec["config_hash"] != expected_hash:
        raise FormatError(f"{path}: config hash {rec['config_hash']} does not match {expected_hash}")
    c, f = rec["class_count"], rec["feature_dim"]
    student = DetectorParams.from_flat(rec["theta_s"], c, f)
    teacher = None if rec["theta_t"] is None else DetectorParams.from_flat(rec["theta_t"], c, f)
    log = None
    if "log" in rec:
        log = TrainLog(list(rec["log"]["records"]), list(rec["log"]["snapshots"]))
    return TrainState(student, teacher, rec["iteration"]), log, rec


# logs and reports ---------------------------------------------------------

def write_trainlog(path, log, cfg_hash):
    """Header line, then one line per evaluation snapshot."""
    head = {"kind": "header", "label": log.label, "config_hash": cfg_hash, "iterations": len(log.records)}
    lines = [head] + [{"kind": "snapshot", **s} for s in log.snapshots]
    _write_text(path, "".join(_dumps(x) + "\n" for x in lines))


def write_steps(path, log):
    _write_text(path, "".join(_dumps(r) + "\n" for r in log.records))


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path, obj):
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


__all__ = [
    "FormatError", "read_checkpoint", "read_dataset", "read_jsonl", "read_scenes", "scene_from_record",
    "scene_record", "heldout_path", "write_checkpoint", "write_dataset", "write_json", "write_scenes",
    "write_steps", "write_trainlog",
]
