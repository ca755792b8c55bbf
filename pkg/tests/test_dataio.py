import json

import numpy as np
import pytest

from rsslab.dataio import (
    ModelArtifact,
    Recording,
    artifact_bytes,
    convert_recording,
    load_model,
    parse_artifact,
    read_dataset,
    read_recording,
    save_model,
    write_recording,
)
from rsslab.errors import CorruptArtifact, ParseError, SchemaError, ValidationError
from rsslab.models import cnn_forward, init_cnn
from rsslab.models.cnn import CnnModel


def make_rec(n=100, seed=0, name="r"):
    rng = np.random.default_rng(seed)
    rss = rng.normal(-60, 8, size=(n, 3))
    rss[rng.uniform(size=rss.shape) < 0.05] = np.nan
    return Recording(name, "A", ("AP1", "AP2", "AP3"), np.arange(n) / 10.0 + rng.uniform(0, 1e-3, n),
                     rng.uniform(0, 6, size=(n, 2)), rss, meta={"seed": seed})


def test_recording_round_trip(tmp_path):
    rec = make_rec()
    write_recording(rec, tmp_path / "r.csv")
    back = read_recording(tmp_path / "r.csv")
    assert back == rec
    assert back.receiver_id == "A" and back.meta == {"seed": 0}
    np.testing.assert_array_equal(np.isnan(back.rss), np.isnan(rec.rss))


def test_missing_written_as_empty(tmp_path):
    rec = Recording("m", "A", ("AP1",), [0.0, 0.1], [[0, 0], [1, 1]], [[np.nan], [-50.0]])
    write_recording(rec, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,rss_AP1"
    assert lines[1].endswith(",")


def test_nonmonotonic_timestamps(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,x,y,rss_AP1\n0.0,0,0,-50\n0.2,0,0,-50\n0.1,0,0,-50\n")
    with pytest.raises(ParseError) as e:
        read_recording(p)
    assert e.value.row == 4
    assert "row 4" in str(e.value) and "0.1" in str(e.value)


def test_bad_value_location(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,x,y,rss_AP1\n0.0,0,abc,-50\n")
    with pytest.raises(ParseError) as e:
        read_recording(p)
    assert (e.value.row, e.value.column) == (2, 3)


@pytest.mark.parametrize("header", ["t,x,rss_AP1", "time,x,y,rss_AP1", "t,x,y", "t,x,y,AP1"])
def test_header_schema(tmp_path, header):
    p = tmp_path / "h.csv"
    p.write_text(header + "\n")
    with pytest.raises(SchemaError):
        read_recording(p)


def test_reads_883_rows(tmp_path):
    p = tmp_path / "exp5.csv"
    rows = ["t,x,y,rss_AP1,rss_AP2,rss_AP3"] + [f"{i / 10},1.0,2.0,-50,-60,-70" for i in range(883)]
    p.write_text("\n".join(rows) + "\n")
    rec = read_recording(p)
    assert len(rec) == 883 and rec.ap_ids == ("AP1", "AP2", "AP3")


def test_recording_invariants():
    with pytest.raises(ValidationError):
        Recording("r", "A", ("a",), [0.0, 0.0], [[0, 0], [0, 0]], [[1.0], [1.0]])
    with pytest.raises(ValidationError):
        Recording("r", "A", ("a",), [0.0], [[np.nan, 0]], [[1.0]])
    with pytest.raises(ValidationError):
        Recording("r", "A", ("a",), [0.0], [[0, 0]], [[np.inf]])


def test_read_dataset(tmp_path):
    for i in range(3):
        write_recording(make_rec(20, i, f"exp{i}"), tmp_path / f"exp{i}.csv")
    recs = read_dataset(tmp_path)
    assert [r.name for r in recs] == ["exp0", "exp1", "exp2"]
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "nope")


def test_convert(tmp_path):
    src = tmp_path / "foreign.csv"
    src.write_text("ms,posy,posx,r2,r1\n200,2,1,-60,NA\n100,4,3,-61,-40\n")
    mapping = {"t": "ms", "x": "posx", "y": "posy", "rss": {"AP1": "r1", "AP2": "r2"},
               "t_scale": 0.001, "missing": ["NA"], "sort": True}
    rec = convert_recording(src, mapping, tmp_path / "out.csv", name="conv")
    np.testing.assert_allclose(rec.t, [0.1, 0.2])
    np.testing.assert_array_equal(rec.xy, [[3, 4], [1, 2]])
    assert np.isnan(rec.rss[1, 0]) and rec.rss[0, 0] == -40
    assert read_recording(tmp_path / "out.csv") == rec
    with pytest.raises(SchemaError):
        convert_recording(src, {**mapping, "bogus": 1})
    with pytest.raises(SchemaError):
        convert_recording(src, {**mapping, "x": "nope"})


def cnn_artifact(seed=0):
    m = init_cnn(3, seed)
    return m, ModelArtifact("cnn", {"window_len": 50}, m.payload(),
                            {"rss_mean": [1.0, 2.0, 3.0], "rss_std": [1.0, 1.0, 1.0], "pos_min": [0, 0], "pos_max": [4, 6]})


def test_model_round_trip(tmp_path):
    m, art = cnn_artifact()
    save_model(art, tmp_path / "m.rsslab")
    back = load_model(tmp_path / "m.rsslab")
    assert back.kind == "cnn" and back.hyperparameters == {"window_len": 50}
    for k, v in art.payload.items():
        assert back.payload[k].dtype == v.dtype
        np.testing.assert_array_equal(back.payload[k], v)
    probe = np.random.default_rng(0).normal(size=(4, 3, 50))
    np.testing.assert_array_equal(cnn_forward(CnnModel.from_payload(back.payload), probe), cnn_forward(m, probe))


def test_artifact_bytes_deterministic():
    assert artifact_bytes(cnn_artifact()[1]) == artifact_bytes(cnn_artifact()[1])


def test_truncated_artifact(tmp_path):
    data = artifact_bytes(cnn_artifact()[1])
    with pytest.raises(CorruptArtifact):
        parse_artifact(data[: len(data) // 2])
    with pytest.raises(CorruptArtifact):
        parse_artifact(b"")


def test_every_single_bit_flip_detected():
    _, art = cnn_artifact()
    art.payload = {"W1": art.payload["W1"][:1, :1, :2]}  # keep the sweep short
    data = bytearray(artifact_bytes(art))
    for i in range(len(data)):
        for bit in range(8):
            data[i] ^= 1 << bit
            with pytest.raises((CorruptArtifact, SchemaError)):
                parse_artifact(bytes(data))
            data[i] ^= 1 << bit
    parse_artifact(bytes(data))


def test_unknown_schema_version():
    _, art = cnn_artifact()
    art.schema_version = 99
    with pytest.raises(SchemaError):
        parse_artifact(artifact_bytes(art))


def test_artifact_validation():
    with pytest.raises(SchemaError):
        ModelArtifact("svm", {}, {}, {})
    with pytest.raises(ValidationError):
        ModelArtifact("knn", {}, {}, {"rss_mean": [float("nan")]})


def test_header_is_json():
    data = artifact_bytes(cnn_artifact()[1])
    header = json.loads(data.split(b"\n")[0])
    assert header["kind"] == "cnn" and header["schema_version"] == 1
