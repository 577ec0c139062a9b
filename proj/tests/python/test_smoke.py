import math

import pytest

import metadetector as md


def test_mmd_one_dimensional_case():
    # Two copies of 0 against two copies of 1: only cross pairs are at d^2 = 1.
    x, y = [[0.0], [0.0]], [[1.0], [1.0]]
    bank = md.median_bandwidths(x, y)
    assert len(bank) == 7
    expect = 2.0 - 2.0 * sum(math.exp(-1.0 / (2.0 * s)) for s in bank) / 7.0
    assert md.mmd_squared(x, y) == pytest.approx(expect, abs=1e-12)
    with pytest.raises(md.DataError):
        md.mmd_squared([[0.0]], [[1.0]])
    assert md.mmd_squared([[0.0], [2.0]], [[0.0], [2.0]]) == pytest.approx(0.0, abs=1e-12)


def test_weights_and_metrics():
    w = md.compute_weights([0.25, 0.9], True)
    assert w == [0.75, pytest.approx(0.1)]
    assert md.compute_weights([0.25, 0.9], False) == [1.0, 1.0]
    m = md.metrics([0, 0, 1, 0, 1, 1, 1, 1, 1, 1], [0, 0, 0, 1, 1, 1, 1, 1, 1, 1])
    assert m["accuracy"] == pytest.approx(0.8)
    assert m["n_evaluated"] == 10


def test_default_config():
    cfg = md.default_config()
    assert cfg["lambda"] == 1.0 and cfg["mu"] == 1.0 and cfg["d_star"] == 0.8


def test_cli_pipeline(tmp_path):
    out = md.cli("synth", "--seed", 1, "--out", tmp_path, "--n-source", 80,
                 "--n-target", 80, "--post-length", 8)
    assert out["n_source"] == 80
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"batch_size": 40, "embedding_dim": 8, "num_filters": 4, "max_window": 3}')
    md.cli("train", "--source", out["source"], "--target", out["target"], "--config", cfg,
           "--out", tmp_path / "m.json", "--epochs", 2)
    rep = md.cli("eval", "--checkpoint", tmp_path / "m.json", "--target", out["target_eval"])
    assert rep["n_evaluated"] == 80
    code, _, err = md.run_cli(["eval", "--checkpoint", str(tmp_path / "missing.json"),
                               "--target", out["target_eval"]])
    assert code == 2 and err
