import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gazeattn.data_model import (
    DataFormatError,
    DatasetRecord,
    Fixation,
    FixationSequence,
    GazeMap,
    ImageVolume,
    SegmentationMask,
    read_fixations,
    read_gaze_map,
    read_mask,
    read_volume,
    write_fixations,
    write_gaze_map,
    write_mask,
    write_volume,
)


def test_zero_volume_payload_is_32_bytes(tmp_path):
    vol = ImageVolume(np.zeros((1, 2, 2, 2)))
    hdr = write_volume(vol, tmp_path / "v")
    raw = tmp_path / "v.raw"
    assert hdr.name == "v.hdr.json"
    assert raw.read_bytes() == bytes(32)


def test_random_volume_round_trip_bitwise(tmp_path, rng):
    data = rng.standard_normal((4, 8, 8, 8)).astype(np.float32)
    write_volume(ImageVolume(data), tmp_path / "v")
    header = json.loads((tmp_path / "v.hdr.json").read_text())
    assert header["shape"] == [4, 8, 8, 8]
    assert header["dtype"] == "float32" and header["byte_order"] == "little"
    assert (tmp_path / "v.raw").stat().st_size == 4 * 8 * 8 * 8 * 4 == 8192
    back = read_volume(tmp_path / "v.hdr.json")
    assert back.data.tobytes() == data.tobytes()
    assert back.channels == 4 and back.shape == (8, 8, 8)


def test_truncated_payload_rejected(tmp_path, rng):
    write_volume(ImageVolume(rng.standard_normal((1, 2, 2, 2))), tmp_path / "v")
    raw = tmp_path / "v.raw"
    raw.write_bytes(raw.read_bytes()[:-4])
    with pytest.raises(DataFormatError, match="payload length"):
        read_volume(tmp_path / "v")


def test_overlong_payload_rejected(tmp_path):
    write_volume(ImageVolume(np.zeros((1, 2, 2, 2))), tmp_path / "v")
    (tmp_path / "v.raw").write_bytes(bytes(33))
    with pytest.raises(DataFormatError, match="33"):
        read_volume(tmp_path / "v")


def test_nan_payload_and_unknown_dtype_rejected(tmp_path):
    write_volume(ImageVolume(np.zeros((1, 2, 2, 2))), tmp_path / "v")
    bad = np.zeros(8, dtype="<f4")
    bad[3] = np.nan
    (tmp_path / "v.raw").write_bytes(bad.tobytes())
    with pytest.raises(DataFormatError, match="NaN"):
        read_volume(tmp_path / "v")
    header = json.loads((tmp_path / "v.hdr.json").read_text())
    header["dtype"] = "float16"
    (tmp_path / "v.hdr.json").write_text(json.dumps(header))
    with pytest.raises(DataFormatError, match="dtype"):
        read_volume(tmp_path / "v")


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        write_volume(ImageVolume(np.zeros((1, 1, 1, 1))), blocker / "sub" / "v")


def test_type_invariants():
    with pytest.raises(DataFormatError):
        ImageVolume(np.zeros((2, 2, 2)))
    with pytest.raises(DataFormatError):
        ImageVolume(np.full((1, 1, 2, 2), np.nan))
    with pytest.raises(DataFormatError):
        SegmentationMask(np.full((1, 1, 2, 2), 1.5))
    with pytest.raises(DataFormatError):
        GazeMap(np.full((1, 2, 2), -0.1))
    vol = ImageVolume(np.zeros((1, 1, 4, 4)))
    assert vol.is_2d
    with pytest.raises(DataFormatError):
        DatasetRecord("r", vol)
    with pytest.raises(DataFormatError, match="mask shape"):
        DatasetRecord("r", vol, mask=SegmentationMask(np.zeros((1, 1, 2, 2))))
    with pytest.raises(DataFormatError, match="gaze map"):
        DatasetRecord("r", vol, labels=[0, 1], gaze_map=GazeMap(np.zeros((1, 3, 3))))
    DatasetRecord("r", vol, labels=[0, 1], gaze_map=GazeMap(np.zeros((1, 2, 2))))


def test_arrays_are_immutable():
    vol = ImageVolume(np.zeros((1, 1, 2, 2)))
    with pytest.raises(ValueError):
        vol.data[0, 0, 0, 0] = 1


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(0, 1, width=32)))
def test_round_trip_property(tmp_path_factory, data):
    d = tmp_path_factory.mktemp("rt")
    write_mask(SegmentationMask(data), d / "m")
    assert read_mask(d / "m").data.tobytes() == data.tobytes()
    write_gaze_map(GazeMap(data[0]), d / "g")
    assert read_gaze_map(d / "g").data.tobytes() == data[0].tobytes()
    write_volume(ImageVolume(data), d / "v")
    assert read_volume(d / "v").data.tobytes() == data.tobytes()


def _write_csv(path, rows, header="t,x,y,z,duration"):
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows))
    return path


def test_fixations_header_only(tmp_path):
    assert len(read_fixations(_write_csv(tmp_path / "f.csv", []))) == 0


def test_fixations_two_rows_in_order(tmp_path):
    seq = read_fixations(_write_csv(tmp_path / "f.csv", ["0,1,2,3,50", "100,4,5,6,50"]))
    assert [s.t for s in seq] == [0, 100]
    assert seq[1].x == 4 and seq[1].y == 5 and seq[1].z == 6


def test_fixations_monotonicity_error_names_row_2(tmp_path):
    with pytest.raises(DataFormatError, match="row 2"):
        read_fixations(_write_csv(tmp_path / "f.csv", ["100,1,1,1,0", "50,1,1,1,0"]))


def test_fixations_malformed_and_out_of_bounds(tmp_path):
    with pytest.raises(DataFormatError, match="malformed row 1"):
        read_fixations(_write_csv(tmp_path / "a.csv", ["0,abc,1,1,0"]))
    with pytest.raises(DataFormatError, match="row 2"):
        read_fixations(_write_csv(tmp_path / "b.csv", ["0,1,1,1,0", "10,9,1,1,0"]), shape=(8, 8, 8))


def test_fixations_2d_without_z(tmp_path):
    seq = read_fixations(_write_csv(tmp_path / "f.csv", ["0,3,4,10"], header="t,x,y,duration"), shape=(1, 8, 8))
    assert seq[0].z == 0


def test_fixation_round_trip(tmp_path):
    seq = FixationSequence((Fixation(0.0, 1.5, 2.25, 3.0, 120.0), Fixation(200.0, 0.1, 0.2, 0.3, 80.0)))
    write_fixations(seq, tmp_path / "f.csv")
    assert read_fixations(tmp_path / "f.csv") == seq
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "t,x,y,z,duration"


def test_sequence_invariants():
    with pytest.raises(DataFormatError):
        FixationSequence((Fixation(0, 0, 0, 0, 1), Fixation(0, 0, 0, 0, 1)))
    with pytest.raises(DataFormatError):
        FixationSequence((Fixation(0, 0, 0, 0, -1),))


def test_write_refuses_non_finite(tmp_path):
    from gazeattn.data_model import write_array

    with pytest.raises(DataFormatError):
        write_array(np.array([1.0, np.inf]), tmp_path / "a")
