import json

import numpy as np
import pytest

from analysis.errors import InvalidArgument, SnapshotFormatError
from analysis.snapshot_io import SnapshotSet, read_snapshots, sidecar_path, write_snapshots


def test_write_format_and_read_back(tmp_path):
    shots = np.array([[[1, 0, 1], [0, 1, 0]], [[0, 0, 0], [1, 1, 1]]], dtype=np.uint8)
    path = write_snapshots(tmp_path / "a.txt", SnapshotSet(3, 2, shots, {"delta_over_omega": np.float64(2.5)}))
    assert path.read_text() == "3 2 2\n101010\n000111\n"
    assert json.loads(sidecar_path(path).read_text()) == {"delta_over_omega": 2.5}

    back = read_snapshots(path)
    assert (back.width, back.height, back.n_shots) == (3, 2, 2)
    np.testing.assert_array_equal(back.shots, shots)
    assert back.meta == {"delta_over_omega": 2.5}


def test_missing_sidecar_gives_empty_meta(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("2 1 1\n10\n")
    assert read_snapshots(p).meta == {}


@pytest.mark.parametrize("text,offset", [
    ("2 x 1\n10\n", 0),
    ("2 2 1\n1021\n", 8),
    ("2 2 1\n101\n", 6),
    ("2 2 2\n1010\n", 11),
    ("2 2 1\n1010\n1111\n", 11),
    ("0 2 1\n\n", 0),
])
def test_malformed_files_name_the_offset(tmp_path, text, offset):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    with pytest.raises(SnapshotFormatError) as exc:
        read_snapshots(p)
    assert exc.value.offset == offset
    assert exc.value.exit_code == 4
    assert str(p) in str(exc.value)


def test_missing_file(tmp_path):
    with pytest.raises(SnapshotFormatError):
        read_snapshots(tmp_path / "nope.txt")


def test_bad_sidecar(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("1 1 1\n1\n")
    sidecar_path(p).write_text("{not json")
    with pytest.raises(SnapshotFormatError):
        read_snapshots(p)


def test_zero_shot_file(tmp_path):
    p = write_snapshots(tmp_path / "empty.txt", SnapshotSet(2, 2, np.zeros((0, 2, 2))))
    back = read_snapshots(p)
    assert back.n_shots == 0
    assert back.shots.shape == (0, 2, 2)


def test_snapshot_set_validation():
    with pytest.raises(InvalidArgument):
        SnapshotSet(3, 2, np.zeros((1, 3, 2)))
    with pytest.raises(InvalidArgument):
        SnapshotSet(2, 2, np.full((1, 2, 2), 2))
    one = SnapshotSet(2, 2, np.ones((2, 2)))
    assert one.n_shots == 1
    sub = one.subset(np.array([False]), note="x")
    assert sub.n_shots == 0 and sub.meta == {"note": "x"}
