import json
import os

import numpy as np
import pytest
import yaml

from msmvqsm.cli import main
from msmvqsm.io import load_volume, save_volume
from msmvqsm.volume import MaskVolume, ScalarVolume, VoxelGrid


def write_config(path, out_dir):
    cfg = {
        "seed": 3,
        "output_dir": out_dir,
        "phantom": {"dims": [24, 24, 24], "spacing_mm": [2.0, 2.0, 2.0]},
        "acquisition": {"n_echoes": 5, "snr": 50.0},
        "bfr": [{"method": "pdf", "iters": 15}],
        "msmv": {"enabled": True, "r1_mm": 6.0, "i_max": 2},
        "inversion": {"variants": ["medi"], "outer_iters": 2, "cg_iters": 10,
                      "r1_mm": 6.0},
        "pairs": [["pdf", "medi"]],
        "metrics": {"roi_region_indices": [6, 7, 8, 9]},
    }
    with open(path, "w") as f:
        yaml.safe_dump(cfg, f)
    return cfg


def test_validate_ok(tmp_path, capsys):
    cfg_path = str(tmp_path / "cfg.yaml")
    write_config(cfg_path, str(tmp_path / "out"))
    assert main(["validate", "--config", cfg_path]) == 0


def test_validate_reports_violations(tmp_path, capsys):
    cfg_path = str(tmp_path / "cfg.yaml")
    cfg = write_config(cfg_path, str(tmp_path / "out"))
    cfg["msmv"]["alpha"] = 5.0
    with open(cfg_path, "w") as f:
        yaml.safe_dump(cfg, f)
    assert main(["validate", "--config", cfg_path]) == 2
    assert "alpha" in capsys.readouterr().err


def test_simulate_then_fit(tmp_path):
    cfg_path = str(tmp_path / "cfg.yaml")
    write_config(cfg_path, str(tmp_path / "out"))
    sim_dir = str(tmp_path / "sim")
    assert main(["simulate", "--config", cfg_path, "--out", sim_dir]) == 0
    assert os.path.exists(os.path.join(sim_dir, "mgre.nii"))
    fit_dir = str(tmp_path / "fit")
    assert main(["fit", "--mgre", os.path.join(sim_dir, "mgre.nii"),
                 "--mask", os.path.join(sim_dir, "mask_brain.nii"),
                 "--out", fit_dir]) == 0
    assert os.path.exists(os.path.join(fit_dir, "b_total_est.nii"))
    assert os.path.exists(os.path.join(fit_dir, "r2star_est.nii"))


def test_msmv_subcommand(tmp_path):
    g = VoxelGrid((24, 24, 24), (2.0, 2.0, 2.0))
    x, y, z = np.meshgrid(*[np.arange(24) - 11.5] * 3, indexing="ij")
    mask = x**2 + y**2 + z**2 <= 9**2
    rng = np.random.default_rng(0)
    field = 0.05 * rng.standard_normal(g.dims) * mask
    save_volume(ScalarVolume(g, field, "Hz"), str(tmp_path / "b_local.nii"))
    save_volume(MaskVolume(g, mask), str(tmp_path / "mask.nii"))
    save_volume(ScalarVolume(g, 20.0 * mask, "1/s"), str(tmp_path / "r2s.nii"))
    out = str(tmp_path / "msmv")
    rc = main(["msmv", "--field", str(tmp_path / "b_local.nii"),
               "--mask", str(tmp_path / "mask.nii"),
               "--r2star", str(tmp_path / "r2s.nii"),
               "--r1", "6", "--tmin", "0.3", "--imax", "5", "--alpha", "1e-6",
               "--out", out])
    assert rc == 0
    with open(os.path.join(out, "trace.json")) as f:
        trace = json.load(f)
    assert trace["threshold_hz"] >= 0.3
    b = load_volume(os.path.join(out, "b_msmv.nii"))
    assert (b.data[~mask] == 0).all()


def test_metrics_subcommand(tmp_path):
    g = VoxelGrid((12, 12, 12), (1.0, 1.0, 1.0))
    rng = np.random.default_rng(1)
    truth = rng.standard_normal(g.dims) * 0.05
    recon = truth + 0.01 * rng.standard_normal(g.dims)
    gray = np.zeros(g.dims, bool)
    gray[2:10, 2:10, 2:10] = True
    save_volume(ScalarVolume(g, truth, "ppm"), str(tmp_path / "truth.nii"))
    save_volume(ScalarVolume(g, recon, "ppm"), str(tmp_path / "a.nii"))
    save_volume(ScalarVolume(g, truth * 1.1, "ppm"), str(tmp_path / "b.nii"))
    save_volume(MaskVolume(g, gray), str(tmp_path / "gray.nii"))
    roi_paths = []
    for i in range(5):
        m = np.zeros(g.dims, bool)
        m[2 * i : 2 * i + 2, 0:2, 0:2] = True
        p = str(tmp_path / f"roi{i}.nii")
        save_volume(MaskVolume(g, m), p)
        roi_paths.append(p)
    manifest = {
        "truth": str(tmp_path / "truth.nii"),
        "gray_mask": str(tmp_path / "gray.nii"),
        "roi_masks": roi_paths,
        "methods": [
            {"name": "one", "chi": str(tmp_path / "a.nii")},
            {"name": "two", "chi": str(tmp_path / "b.nii")},
        ],
    }
    man_path = str(tmp_path / "metrics.yaml")
    with open(man_path, "w") as f:
        yaml.safe_dump(manifest, f)
    out = str(tmp_path / "metrics_out")
    assert main(["metrics", "--manifest", man_path, "--out", out]) == 0
    report = open(os.path.join(out, "report.csv")).read()
    assert "shadow_score_ppm2,one" in report
    assert "roi_regression" in report
    assert "bland_altman_ppm,one vs two" in report


def test_bfr_external_roundtrip(tmp_path):
    g = VoxelGrid((16, 16, 16), (1.0, 1.0, 1.0))
    rng = np.random.default_rng(2)
    field = rng.standard_normal(g.dims)
    mask = np.ones(g.dims, bool)
    save_volume(ScalarVolume(g, field, "Hz"), str(tmp_path / "ext.nii"))
    save_volume(ScalarVolume(g, field, "Hz"), str(tmp_path / "b.nii"))
    save_volume(MaskVolume(g, mask), str(tmp_path / "m.nii"))
    out = str(tmp_path / "bfr")
    rc = main(["bfr", "--field", str(tmp_path / "b.nii"),
               "--mask", str(tmp_path / "m.nii"), "--bfr", "external",
               "--bfr-input", str(tmp_path / "ext.nii"), "--out", out])
    assert rc == 0
    back = load_volume(os.path.join(out, "b_local.nii"))
    assert np.allclose(back.data, field, atol=1e-6)


def test_bfr_external_requires_input(tmp_path):
    g = VoxelGrid((8, 8, 8), (1.0, 1.0, 1.0))
    save_volume(ScalarVolume(g, np.zeros(g.dims), "Hz"), str(tmp_path / "b.nii"))
    save_volume(MaskVolume(g, np.ones(g.dims, bool)), str(tmp_path / "m.nii"))
    rc = main(["bfr", "--field", str(tmp_path / "b.nii"),
               "--mask", str(tmp_path / "m.nii"), "--bfr", "external",
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_init_config_and_pipeline_exit_codes(tmp_path):
    cfg_out = str(tmp_path / "default.yaml")
    assert main(["init-config", "--out", cfg_out]) == 0
    assert main(["validate", "--config", cfg_out]) == 0
    missing = str(tmp_path / "nope.yaml")
    with pytest.raises(FileNotFoundError):
        main(["validate", "--config", missing])
