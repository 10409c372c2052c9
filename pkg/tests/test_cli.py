import json

import numpy as np
import pytest

from vlccp.cli import main
from vlccp.config import ConfigError, load_config, resolve_config, save_config
from vlccp.cpm import message_to_dict, random_message


def write_message(path, n, **change):
    data = message_to_dict(random_message(np.random.default_rng(n), n))
    for key, value in change.items():
        data["objects"][0][key] = value
    path.write_text(json.dumps(data))
    return path


def test_encode_two_objects(tmp_path, capsys):
    assert main(["encode", str(write_message(tmp_path / "m.json", 2))]) == 0
    hex_line, size, law = capsys.readouterr().out.splitlines()
    assert len(bytes.fromhex(hex_line)) == 53
    assert size == "420 bits (padded 424)"
    assert law.endswith("= 420")


def test_encode_zero_objects(tmp_path, capsys):
    assert main(["encode", str(write_message(tmp_path / "m.json", 0))]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(bytes.fromhex(out[0])) == 34
    assert out[1] == "272 bits (padded 272)"


def test_encode_out_of_range_names_field(tmp_path, capsys):
    assert main(["encode", str(write_message(tmp_path / "m.json", 1, vx=99999))]) != 0
    err = capsys.readouterr().err
    assert "objects[0].vx" in err and "-16384" in err and "16383" in err


def test_encode_malformed_file(tmp_path, capsys):
    (tmp_path / "m.json").write_text("{not json")
    assert main(["encode", str(tmp_path / "m.json")]) != 0


def test_decode_round_trip_and_tamper(tmp_path, capsys):
    path = write_message(tmp_path / "m.json", 2)
    main(["encode", str(path)])
    hex_line = capsys.readouterr().out.splitlines()[0]
    assert main(["decode", hex_line]) == 0
    assert json.loads(capsys.readouterr().out) == json.loads(path.read_text())
    flipped = f"{int(hex_line[0], 16) ^ 8:x}" + hex_line[1:]
    assert main(["decode", flipped]) != 0
    assert "MAC" in capsys.readouterr().err
    assert main(["inspect", flipped]) == 1


def test_unknown_preset_lists_choices(capsys):
    assert main(["run", "--preset", "moon-base"]) != 0
    err = capsys.readouterr().err
    for name in ("indoor-stationary", "outdoor-range", "outdoor-driving"):
        assert name in err


def test_run_twice_identical_and_rerun_from_header(tmp_path, capsys):
    args = ["run", "--preset", "outdoor-range", "--packets", "2", "--noise", "0",
            "--dump-frames", "2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "outdoor-range.csv").read_text()
    b = (tmp_path / "b" / "outdoor-range.csv").read_text()
    assert a.replace(str(tmp_path / "a"), "") == b.replace(str(tmp_path / "b"), "")
    assert len(list((tmp_path / "a" / "frames").glob("*.pgm"))) == 2
    rows = [l.split(",") for l in a.splitlines() if l.startswith("outdoor-range")]
    assert len(rows) == 5 and all(r[7] == "0" and r[9] == "0.0" for r in rows)
    assert main(["run", "--config", str(tmp_path / "a" / "outdoor-range.csv")]) == 0
    assert (tmp_path / "a" / "outdoor-range.csv").read_text() == a


def test_sweep_axes(tmp_path, capsys):
    assert main(["sweep", "--preset", "indoor-stationary", "--fps", "250", "500",
                 "--out", str(tmp_path)]) == 0
    rows = [l for l in capsys.readouterr().out.splitlines() if l.startswith("indoor")]
    assert [r.split(",")[1] for r in rows] == ["250.0", "500.0"]


def test_calibration_failure_exit(tmp_path, capsys):
    code = main(["calibrate", "--packets", "2", "--sigma-max", "0", "--out", str(tmp_path)])
    assert code == 4
    assert "calibration failed" in capsys.readouterr().err


def test_config_round_trip(tmp_path):
    cfg = resolve_config("outdoor-driving", seed=9, noise_sigma=12.5, camera={"f_number": 8.0})
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == cfg
    assert back.camera["f_number"] == 8.0 and back.camera["focal_length"] == 0.1
    assert back.noise_sigma == 12.5


def test_config_rejects_unknown_keys(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"preset": "outdoor-range", "colour": 3}))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")
