"""File formats, config loading, the power-law fitter, and the CLI surface."""

import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from fuselag import cli, config, io
from fuselag.estimators import PowerLawFitter
from fuselag.scenario import generate_scenario
from fuselag.types import (FeatureMap, PoseSE2, ProposalBox, ValidationError)


def test_scenario_json_round_trip(tmp_path):
    s = generate_scenario(5, n_frames=4)
    path = tmp_path / "scene.json"
    io.save_scenario(s, path)
    again = io.load_scenario(path)
    assert again.to_dict() == s.to_dict()


def test_scenario_schema_version_checked(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(ValidationError):
        io.load_scenario(path)


def test_detections_round_trip(tmp_path):
    boxes = [ProposalBox(x=1.0, y=-2.0, z=1.5, length=4.2, width=1.9,
                         height=1.6, yaw=0.3, score=0.81,
                         source_index=(0, 7, 12))]
    path = tmp_path / "det.json"
    io.save_detections(boxes, path)
    again = io.load_detections(path)
    assert again == boxes


def test_feature_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    features = [
        FeatureMap(agent_id=i, timestamp=3, pose=PoseSE2(0.5 * i, -1.0, 0.2),
                   data=rng.normal(size=(2, 5, 4)).astype(np.float32),
                   resolution=0.4)
        for i in range(3)
    ]
    path = tmp_path / "features.bin"
    io.save_features(features, path)
    again = io.load_features(path)
    assert len(again) == 3
    for a, b in zip(again, features):
        assert a.agent_id == b.agent_id
        assert a.timestamp == b.timestamp
        assert a.pose == b.pose
        assert a.resolution == b.resolution
        np.testing.assert_array_equal(a.data, b.data.astype(np.float64))


def test_feature_container_rejects_corruption(tmp_path):
    rng = np.random.default_rng(1)
    f = FeatureMap(agent_id=0, timestamp=0, pose=PoseSE2(0, 0, 0),
                   data=rng.normal(size=(1, 3, 3)), resolution=0.4)
    path = tmp_path / "features.bin"
    io.save_features([f], path)
    raw = path.read_bytes()

    (tmp_path / "magic.bin").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ValidationError):
        io.load_features(tmp_path / "magic.bin")

    (tmp_path / "version.bin").write_bytes(raw[:4] + b"\x63\x00" + raw[6:])
    with pytest.raises(ValidationError):
        io.load_features(tmp_path / "version.bin")

    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValidationError):
        io.load_features(tmp_path / "short.bin")


def test_config_defaults():
    cfg = config.load_config(None)
    assert cfg.post.confidence_threshold == 0.2
    assert cfg.post.iou_threshold == 0.15
    assert cfg.post.max_keep == 1000
    assert cfg.attack.steps == 10
    assert cfg.asr_threshold_seconds == 1.5


def test_config_partial_override_and_round_trip(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({
        "attack": {"steps": 4, "tau": 0.3},
        "post": {"max_keep": 250},
    }))
    cfg = config.load_config(path)
    assert cfg.attack.steps == 4
    assert cfg.attack.tau == 0.3
    assert cfg.attack.step_size == 0.1  # untouched default
    assert cfg.post.max_keep == 250

    out = tmp_path / "saved.yaml"
    config.save_config(cfg, out)
    again = config.load_config(out)
    assert again.to_dict() == cfg.to_dict()


def test_config_rejects_unknown_keys_and_versions(tmp_path):
    with pytest.raises(ValidationError):
        config.config_from_dict({"attack": {"stepz": 3}})
    with pytest.raises(ValidationError):
        config.config_from_dict({"posts": {}})
    with pytest.raises(ValidationError):
        config.config_from_dict({"schema_version": 2})
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert config.load_config(empty).to_dict() == \
        config.ExperimentConfig().to_dict()


def test_power_law_fitter_recovers_exact_law():
    sizes = [100, 200, 400, 800]
    costs = [0.5 * s ** 2 for s in sizes]
    fitter = PowerLawFitter().fit(sizes, costs)
    assert fitter.exponent_ == pytest.approx(2.0, abs=1e-9)
    assert fitter.coefficient_ == pytest.approx(0.5, rel=1e-9)
    np.testing.assert_allclose(fitter.predict([1600]), [0.5 * 1600 ** 2],
                               rtol=1e-9)
    assert fitter.score(sizes, costs) == pytest.approx(1.0)


def test_power_law_fitter_validation():
    with pytest.raises(ValidationError):
        PowerLawFitter().fit([1, 2], [1, 2])
    with pytest.raises(ValidationError):
        PowerLawFitter().fit([1, 2, 3], [1, -1, 2])
    with pytest.raises(ValidationError):
        PowerLawFitter().predict([10])


@pytest.fixture()
def runner():
    return CliRunner()


def _gen(runner, tmp_path, frames=4):
    path = tmp_path / "scene.json"
    result = runner.invoke(cli.main, ["gen", "--seed", "11", "--frames",
                                      str(frames), "--out", str(path)])
    assert result.exit_code == 0, result.output
    return path


def test_cli_gen_is_byte_identical(runner, tmp_path):
    a = _gen(runner, tmp_path)
    content = a.read_bytes()
    a.unlink()
    b = _gen(runner, tmp_path)
    assert b.read_bytes() == content


def test_cli_gen_default_matches_committed_golden_file(runner, tmp_path):
    out = tmp_path / "scene.json"
    result = runner.invoke(cli.main, ["gen", "--out", str(out)])
    assert result.exit_code == 0, result.output
    golden = Path(__file__).parent / "data" / "scenario_seed42.json"
    assert out.read_bytes() == golden.read_bytes()


def test_cli_gen_rejects_single_agent(runner, tmp_path):
    result = runner.invoke(cli.main, ["gen", "--agents", "1", "--out",
                                      str(tmp_path / "x.json")])
    assert result.exit_code != 0
    assert "at least 2 agents" in result.output


def test_cli_report_dir_env(runner, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.REPORT_DIR_ENV, str(tmp_path / "reports"))
    result = runner.invoke(cli.main, ["gen", "--frames", "2", "--out",
                                      "scene.json"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "reports" / "scene.json").exists()


def test_cli_attack_bench_roundtrip(runner, tmp_path):
    scene = _gen(runner, tmp_path, frames=4)
    report = tmp_path / "report.json"
    csv_path = tmp_path / "frames.csv"
    result = runner.invoke(cli.main, ["attack", "--scenario", str(scene),
                                      "--out", str(report),
                                      "--csv", str(csv_path)])
    assert result.exit_code == 0, result.output
    assert "mean RoI-L" in result.output
    data = json.loads(report.read_text())
    assert data["label"] == "cp-freezer"
    assert len(data["frames"]) == 3
    assert data["aggregates"]["mean_roi_p"] > 0
    assert csv_path.exists()

    svg_dir = tmp_path / "charts"
    result = runner.invoke(cli.main, ["bench", "--report", str(report),
                                      "--svg", str(svg_dir)])
    assert result.exit_code == 0, result.output
    assert (svg_dir / "latency_boxplot.svg").exists()
    assert (svg_dir / "asr_curve.svg").exists()
    assert (svg_dir / "summary.csv").read_text().startswith("label,")


def test_cli_ablate_smoke(runner, tmp_path):
    scene = _gen(runner, tmp_path, frames=3)
    prefix = tmp_path / "ablation"
    result = runner.invoke(cli.main, [
        "ablate", "--scenario", str(scene), "--confidence", "0.2",
        "--iou", "0.15", "--max-keep", "1000", "--max-keep", "125",
        "--repeats", "1", "--out", str(prefix)])
    assert result.exit_code == 0, result.output
    csv_text = (tmp_path / "ablation.csv").read_text().splitlines()
    assert len(csv_text) == 3
    assert (tmp_path / "ablation_roi_l.svg").exists()
    assert (tmp_path / "ablation_roi_p.svg").exists()


def test_cli_defend_smoke(runner, tmp_path):
    scene = _gen(runner, tmp_path, frames=4)
    out = tmp_path / "defense.json"
    result = runner.invoke(cli.main, ["defend", "--scenario", str(scene),
                                      "--iterations", "4", "--out", str(out)])
    assert result.exit_code == 0, result.output
    data = json.loads(out.read_text())
    assert data["iterations"] == 4
    assert len(data["per_iteration"]) == 4
    assert data["amplification"] > 1.0
    assert data["defended_ap"] >= 0.9 * data["benign_ap"]


def test_cli_attack_rejects_unknown_config_key(runner, tmp_path):
    scene = _gen(runner, tmp_path, frames=2)
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"attack": {"nonsense": 1}}))
    result = runner.invoke(cli.main, ["attack", "--scenario", str(scene),
                                      "--config", str(bad),
                                      "--out", str(tmp_path / "r.json")])
    assert result.exit_code != 0
    assert "unknown config keys" in result.output
