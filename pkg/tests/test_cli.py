import json

import numpy as np
import pytest

from invisitrack.cli import main, parse_sigmas


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--scene", "grid13x15", "--frames", "3", "--noise-px", "0.5", "--seed", "4",
                 "--out", str(out)]) == 0
    return out


def test_synth_layout(dataset):
    scene = json.loads((dataset / "scene.json").read_text())
    assert scene["n_frames"] == 3 and len(scene["uv_camera_ids"]) == 33 and len(scene["reference_camera_ids"]) == 9
    assert sorted(p.name for p in (dataset / "frames").iterdir()) == ["0000.json", "0001.json", "0002.json"]
    assert (dataset / "template.obj").exists() and (dataset / "bindings.json").exists()
    assert len((dataset / "gt" / "uv.jsonl").read_text().splitlines()) == 3


def test_fit_and_eval(dataset, tmp_path, capsys):
    fit_dir = tmp_path / "fit"
    assert main(["fit", "--data", str(dataset), "--frame", "1", "--out", str(fit_dir)]) == 0
    report = json.loads((fit_dir / "report.json").read_text())
    assert report["converged"] and "wall_time_s" not in report
    assert main(["eval", "--data", str(dataset), "--fitted", str(fit_dir / "sequence.jsonl"),
                 "--out", str(tmp_path / "ev")]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["marker_rms_mm"] < 1.0
    rows = (tmp_path / "ev" / "marker_error.csv").read_text().splitlines()
    assert rows[0] == "frame,mean,rms,max" and rows[-1].startswith("AGGREGATE")


def test_track_writes_labels_and_flow(dataset, tmp_path):
    track_dir = tmp_path / "track"
    assert main(["track", "--data", str(dataset), "--out", str(track_dir)]) == 0
    labels = sorted((track_dir / "labels").glob("*.json"))
    assert len(labels) == 3 * 9
    d = json.loads(labels[0].read_text())
    assert d["interpolated"] and {"marker_id", "u", "v", "visible"} <= set(d["labels"][0])
    assert main(["eval", "--data", str(dataset), "--fitted", str(track_dir / "sequence.jsonl"),
                 "--out", str(tmp_path / "ev")]) == 0
    flow = (tmp_path / "ev" / "flow_error.csv").read_text().splitlines()
    assert flow[0] == "frame,aepe,mse,n"
    # only frame pairs whose labels were both time-aligned are scored
    assert [r.split(",")[0] for r in flow[1:]] == ["0", "AGGREGATE"]
    assert float(flow[-1].split(",")[1]) < 1.0


def test_curve_from_ground_truth(tmp_path):
    out = tmp_path / "curve.csv"
    assert main(["curve", "--delays", "4", "--sigmas", "0..8", "--frames", "3", "--use-gt", "--noise-px", "0",
                 "--out", str(out)]) == 0
    rows = [line.split(",") for line in out.read_text().splitlines()[1:]]
    dist = {float(s): float(v) for _, s, v in rows}
    assert min(dist, key=dist.get) == 4.0 and dist[4.0] < 1e-6


def test_detect_on_rendered_images(tmp_path):
    assert main(["synth", "--scene", "rope10", "--frames", "1", "--raster", "--out", str(tmp_path / "d")]) == 0
    images = sorted((tmp_path / "d" / "images").glob("*.png"))
    assert len(images) == 33
    assert main(["detect", str(images[0]), "--dye", "uv_red", "--out", str(tmp_path / "det")]) == 0
    dets = json.loads((tmp_path / "det" / "detections.json").read_text())
    assert len(dets) == 10 and {d["dye"] for d in dets} == {"uv_red"}


@pytest.mark.parametrize("argv", [[], ["bogus"], ["synth"], ["synth", "--out", "x", "--frames", "many"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "UsageError"


def test_domain_error_exits_1(tmp_path, capsys):
    assert main(["fit", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1
    assert "error" in json.loads(capsys.readouterr().err)


def test_config_file_overrides_fit(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_outer": 2}))
    assert main(["fit", "--data", str(dataset), "--config", str(cfg), "--out", str(tmp_path / "f")]) == 0
    report = json.loads((tmp_path / "f" / "report.json").read_text())
    assert report["config"]["max_outer"] == 2 and len(report["iterations"]) <= 2


@pytest.mark.parametrize("text, expected", [("0..3", [0, 1, 2, 3]), ("1..2:0.5", [1, 1.5, 2]), ("4, 1", [4, 1])])
def test_parse_sigmas(text, expected):
    np.testing.assert_allclose(parse_sigmas(text), expected)
