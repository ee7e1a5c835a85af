import os

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from vioflight.cli import main
from vioflight.trajectory import Trajectory, generate_square, read_trajectory, write_trajectory


@pytest.fixture
def square_file(tmp_path):
    path = tmp_path / "gt.tum"
    write_trajectory(path, generate_square(20, 1))
    return path


def _csv_row(text):
    header, row = text.strip().splitlines()[:2]
    return dict(zip(header.split(","), row.split(",")))


def test_eval_self(square_file, capsys, tmp_path):
    before = square_file.read_bytes()
    per = tmp_path / "per.csv"
    png = tmp_path / "eval.png"
    assert main(["eval", str(square_file), str(square_file), "--per-sample", str(per), "--plot", str(png)]) == 0
    row = _csv_row(capsys.readouterr().out)
    assert float(row["ate"]) < 1e-12 and float(row["rpe"]) < 1e-12
    assert row["lateral_only"] == "1"
    assert per.read_text().startswith("kind,t,error\n")
    assert png.stat().st_size > 0
    assert square_file.read_bytes() == before


def test_eval_rigid_copy(square_file, tmp_path, capsys):
    gt = read_trajectory(square_file)
    R = Rotation.from_euler("xyz", [0.3, -0.2, 1.0]).as_matrix()
    moved = Trajectory(gt.t, gt.p @ R.T + [5, 6, 7], gt.q)
    est = tmp_path / "est.tum"
    write_trajectory(est, moved)
    assert main(["eval", str(square_file), str(est), "--align", "rigid", "--no-lateral-only"]) == 0
    assert float(_csv_row(capsys.readouterr().out)["ate"]) <= 1e-9


def test_eval_drift(square_file, tmp_path, capsys):
    gt = read_trajectory(square_file)
    est = tmp_path / "drift.tum"
    write_trajectory(est, Trajectory(gt.t, gt.p + np.outer(gt.t, [0.1, 0, 0]), gt.q))
    assert main(["eval", str(square_file), str(est), "--delta", "1.0"]) == 0
    assert float(_csv_row(capsys.readouterr().out)["rpe"]) == pytest.approx(0.1, rel=0.05)


def test_eval_errors(square_file, tmp_path, capsys):
    assert main(["eval", str(tmp_path / "missing.tum"), str(square_file)]) == 1
    bad = tmp_path / "bad.tum"
    bad.write_text("0 1 2\n")
    assert main(["eval", str(square_file), str(bad)]) == 1
    assert "line 1" in capsys.readouterr().err
    line = tmp_path / "line.tum"
    write_trajectory(line, Trajectory(np.arange(20) * 0.2, np.outer(np.arange(20), [1, 0, 0])))
    assert main(["eval", str(line), str(line), "--align", "rigid"]) == 1


def test_shape(square_file, tmp_path, capsys):
    out = tmp_path / "shaped.tum"
    report = tmp_path / "report.csv"
    assert main(["shape", str(square_file), str(out), "--report", str(report), "--plot", str(tmp_path / "s.png")]) == 0
    row = _csv_row(capsys.readouterr().out)
    assert row["converged"] == "1" and int(row["inserted_samples"]) > 0
    assert report.read_text().startswith("iterations,")
    again = tmp_path / "again.tum"
    assert main(["shape", str(out), str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


def test_shape_forced_nonconvergence(square_file, tmp_path):
    assert main(["shape", str(square_file), str(tmp_path / "x.tum"), "--a-max", "1e-6", "--max-iter", "1"]) == 2


def test_camgeo(capsys, tmp_path):
    assert main(["camgeo", "--pitch", "90", "--fps", "30", "60", "90"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    header = lines[0].split(",")
    px = [float(line.split(",")[header.index("px_per_frame")]) for line in lines[1:]]
    assert px[0] == pytest.approx(17.4, abs=0.05)
    assert px[1] == pytest.approx(px[0] / 2, rel=1e-12) and px[2] == pytest.approx(px[0] / 3, rel=1e-12)
    out = tmp_path / "sweep.csv"
    assert main(["camgeo", "--out", str(out), "--plot", str(tmp_path / "c.png")]) == 0
    rows = out.read_text().strip().splitlines()
    assert len(rows) == 1 + 4 * 3
    assert main(["camgeo", "--pitch", "120"]) == 1


def test_simulate_fault_config(tmp_path, capsys):
    cfg = tmp_path / "fault.toml"
    cfg.write_text("[simulate]\nduration = 15.0\n\n[simulate.sensor]\nbias_ramp = [0.5, 0.0, 0.0]\nbias_start = 10.0\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "runs"), "--plot"]) == 2
    run = tmp_path / "runs" / "run"
    events = (run / "events.csv").read_text().splitlines()
    assert sum(",landing," in e for e in events) == 1
    assert (run / "config.toml").read_text() == cfg.read_text()
    assert (run / "flight.png").exists()
    for name in ("truth.tum", "estimate.tum", "reference.tum", "metrics.csv", "per_sample.csv", "resolved_config.json"):
        assert (run / name).stat().st_size > 0


def test_simulate_grid(tmp_path, capsys):
    cfg = tmp_path / "grid.toml"
    cfg.write_text("[simulate]\nduration = 25.0\n")
    assert main(["simulate", "--config", str(cfg), "--grid", "--out", str(tmp_path / "g")]) == 0
    dirs = sorted(d for d in os.listdir(tmp_path / "g") if (tmp_path / "g" / d).is_dir())
    assert dirs == ["o00_v1", "o00_v2", "o00_v5", "o90_v1", "o90_v2", "o90_v5"]
    summary = (tmp_path / "g" / "summary.csv").read_text().splitlines()
    assert summary[0] == "run,camera_orientation,velocity,ate,rpe,ate_3d,rpe_3d,landings"
    assert len(summary) == 7


def test_simulate_seed_override(tmp_path):
    cfg = tmp_path / "n.toml"
    cfg.write_text("[simulate]\nduration = 4.0\n\n[simulate.sensor]\nposition_std = 0.05\nvelocity_std = 0.1\n")
    for seed, name in ((1, "a"), (2, "b")):
        main(["simulate", "--config", str(cfg), "--seed", str(seed), "--out", str(tmp_path / name)])
    assert (tmp_path / "a/run/vio.csv").read_bytes() != (tmp_path / "b/run/vio.csv").read_bytes()


def test_invalid_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[simulate]\ncamera_orientation = 45\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1


def test_config_after_subcommand(tmp_path, square_file, capsys):
    cfg = tmp_path / "e.toml"
    cfg.write_text('[eval]\nalign = "yaw2d"\n')
    assert main(["--config", str(cfg), "eval", str(square_file), str(square_file)]) == 0
    assert _csv_row(capsys.readouterr().out)["align"] == "yaw2d"
    assert main(["eval", str(square_file), str(square_file), "--config", str(cfg)]) == 0
    assert _csv_row(capsys.readouterr().out)["align"] == "yaw2d"
