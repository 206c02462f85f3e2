import json

import numpy as np
import pytest

from semidet import storage
from semidet.detector import DetectorParams
from semidet.simworld import build_dataset, oracle_truth
from semidet.trainer import TrainLog, TrainState

from conftest import small_world


def test_dataset_round_trip_is_bit_exact(tmp_path):
    split = build_dataset(small_world())
    storage.write_dataset(split, tmp_path / "d.jsonl")
    back = storage.read_dataset(tmp_path / "d.jsonl")
    assert [s.id for s in back.labeled] == [s.id for s in split.labeled]
    assert [s.id for s in back.unlabeled] == [s.id for s in split.unlabeled]
    for a, b in zip(split.labeled + split.unlabeled + split.test, back.labeled + back.unlabeled + back.test):
        assert np.array_equal(a.features, b.features)
        assert a.labeled == b.labeled
        for x, y in zip(oracle_truth(a), oracle_truth(b)):
            assert np.array_equal(x, y)


def test_writes_are_byte_identical(tmp_path):
    split = build_dataset(small_world())
    storage.write_dataset(split, tmp_path / "a.jsonl")
    storage.write_dataset(split, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.test.jsonl").read_bytes() == (tmp_path / "b.test.jsonl").read_bytes()


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    s = DetectorParams(rng.normal(size=(12, 16)), rng.normal(size=12))
    t = DetectorParams(rng.normal(size=(12, 16)), rng.normal(size=12))
    log = TrainLog([{"iteration": 0, "stage": "burn_in", "loss": 0.1}], [])
    storage.write_checkpoint(tmp_path / "c.json", TrainState(s, t, 5), "abc", "mutual", log)
    state, log2, rec = storage.read_checkpoint(tmp_path / "c.json", expected_hash="abc")
    assert state.iteration == 5 and rec["stage"] == "mutual"
    assert np.array_equal(state.student.W, s.W) and np.array_equal(state.teacher.b, t.b)
    assert log2.records == log.records


def test_checkpoint_without_teacher(tmp_path):
    s = DetectorParams.zeros(2, 16)
    storage.write_checkpoint(tmp_path / "c.json", TrainState(s, None, 0), "h", "burn_in")
    state, log, _ = storage.read_checkpoint(tmp_path / "c.json")
    assert state.teacher is None and log is None


def test_checkpoint_hash_mismatch_and_garbage(tmp_path):
    storage.write_checkpoint(tmp_path / "c.json", TrainState(DetectorParams.zeros(2, 16), None, 0), "h", "burn_in")
    with pytest.raises(storage.FormatError, match="does not match"):
        storage.read_checkpoint(tmp_path / "c.json", expected_hash="other")
    (tmp_path / "g.json").write_text("{not json")
    with pytest.raises(storage.FormatError):
        storage.read_checkpoint(tmp_path / "g.json")
    (tmp_path / "o.json").write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(storage.FormatError, match="not a checkpoint"):
        storage.read_checkpoint(tmp_path / "o.json")


def test_malformed_scene_lines(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"id": 0, "w": 2, "h": 2, "features": [1, 2, 3], "boxes": [], "labeled": true}\n')
    with pytest.raises(storage.FormatError, match="not a multiple"):
        storage.read_scenes(p)
    p.write_text("{oops\n")
    with pytest.raises(storage.FormatError, match=":1:"):
        storage.read_scenes(p)
    p.write_text('{"id": 0}\n')
    with pytest.raises(storage.FormatError, match="malformed"):
        storage.read_scenes(p)


def test_heldout_path():
    assert storage.heldout_path("runs/data.jsonl").name == "data.test.jsonl"
