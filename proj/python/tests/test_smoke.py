import json
import math
import os
import subprocess

import numpy as np
import pytest

import qdgs


def test_archive_insert_and_threshold():
    spec = qdgs.MeasureSpec.uniform(2, -1.0, 1.0, 100)
    assert qdgs.cell_index(np.array([0.0, 0.0]), spec) == [50, 50]
    assert qdgs.cell_index(np.array([1.2, 0.0]), spec) == [99, 50]

    archive = qdgs.Archive(spec)
    delta, accepted = archive.insert(np.zeros(6), 0.5, np.array([0.0, 0.0]))
    assert accepted and delta == 0.5
    assert archive.threshold([50, 50]) == pytest.approx(0.01, abs=1e-12)
    assert archive.stats()["coverage"] == pytest.approx(1e-4)

    with pytest.raises(qdgs.EvaluationRejected):
        archive.insert(np.zeros(6), 0.5, np.array([math.nan, 0.0]))


def test_emitter_arithmetic():
    theta = qdgs.branch(np.zeros(2), np.array([1.0, 0.0]), np.array([[0.0], [1.0]]), np.array([-2.0, 3.0]))
    np.testing.assert_allclose(theta, [2.0, 3.0])
    assert qdgs.log_rank_weights(2) == [1.0]
    out = qdgs.ranked_ascent(np.zeros(2), [np.array([1.0, 0.0]), np.array([0.0, 1.0])], [1.0, 3.0])
    np.testing.assert_allclose(out, [0.0, 0.5])


def test_scoring_helpers():
    np.testing.assert_allclose(qdgs.normalized(np.array([3.0, 4.0])), [0.6, 0.8])
    assert qdgs.composite_objective(0.5, 0.9, 0.25) == pytest.approx(0.0, abs=1e-12)
    assert qdgs.reg_penalty_from_distance(1.5, 2.0) == pytest.approx(0.25)
    grad = qdgs.fd_gradient(lambda t: float(t @ t), np.array([1.0, 2.0]), 1e-4)
    np.testing.assert_allclose(grad, [2.0, 4.0], atol=1e-6)
    chi6 = math.sqrt(2) * math.gamma(3.5) / math.gamma(3.0)
    assert qdgs.calibrate_standard_normal(6, 20000, 1) == pytest.approx(chi6, abs=0.03)


def test_shapes_domain():
    params = qdgs.shapes.decode(np.zeros(6))
    assert params["color"] == pytest.approx(0.5)
    assert params["shape"] == pytest.approx(0.5)

    square = qdgs.shapes.render(color=1.0, shape=1.0, resolution=64)
    assert square.shape == (64, 64, 3)
    assert qdgs.shapes.probe_redness(square) > 0.5
    assert qdgs.shapes.probe_squareness(square) == pytest.approx(0.5, abs=0.05)
    triangle = qdgs.shapes.render(color=0.0, shape=0.0, resolution=64)
    assert qdgs.shapes.probe_redness(triangle) < -0.5
    assert qdgs.shapes.probe_squareness(triangle) == pytest.approx(-0.5, abs=0.05)
    assert qdgs.shapes.probe_quality(square) > 0.8

    assert qdgs.shapes.label_from_m2(0.5) == "square"
    assert qdgs.shapes.label_from_m2(-0.005) == "ambiguous"
    assert qdgs.shapes.label_from_m2(-0.011) == "triangle"
    assert len(qdgs.shapes.sample_real_groups(0.9, 20, 3)) == 20


def test_runs_and_metrics():
    run = qdgs.run_qdgs_shapes(iterations=3, lam=4, seed=2)
    assert run["evaluations"] == 3 * 5
    assert len(run["log"]) == 3
    assert run["occupied"] >= 1

    f, m = qdgs.run_random_shapes(50, seed=4)
    assert f.shape == (50,) and m.shape == (50, 2)
    density = qdgs.density_map(m, 10)
    assert density.sum() == pytest.approx(1.0)

    variants = qdgs.augment_variants(np.zeros(2), np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1.0)
    assert len(variants) == 9
    assert qdgs.disparate_impact([0.9, 0.8, 0.85, 0.95]) == pytest.approx(0.8 / 0.95)
    assert qdgs.disparate_impact([1.0, None, 1.0, None]) == 1.0


@pytest.mark.skipif(not os.environ.get("QDGS_CLI"), reason="QDGS_CLI not set")
def test_cli_calibrate_and_exit_codes(tmp_path):
    cli = os.environ["QDGS_CLI"]
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"scoring": {"calibration_samples": 500, "bias_samples": 2000}}))
    out = tmp_path / "out"
    done = subprocess.run([cli, "--config", str(config), "--out", str(out), "calibrate"], capture_output=True)
    assert done.returncode == 0, done.stderr
    cal = json.loads((out / "calibration.json").read_text())
    assert cal["delta_reg"] > 0

    missing = subprocess.run([cli, "--config", str(tmp_path / "nope.json"), "calibrate"], capture_output=True)
    assert missing.returncode == 2
    empty = subprocess.run([cli, "--out", str(tmp_path / "empty"), "report"], capture_output=True)
    assert empty.returncode == 3
