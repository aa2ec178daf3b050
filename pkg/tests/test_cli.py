import json
import os

import numpy as np
import pytest

from featmim.cli import main
from featmim.imageio import read_pnm, write_ppm
from featmim.synth import synthetic_image
from featmim.tensor import read_tvec, write_tvec


@pytest.fixture()
def image_dir(tmp_path):
    d = tmp_path / "images"
    d.mkdir()
    for i in range(4):
        write_ppm(d / f"img{i}.ppm", synthetic_image(32, 3, seed=i))
    return d


def write_config(tmp_path, **overrides):
    doc = {
        "train": {"total_epochs": 2.0, "warmup_epochs": 1.0, "base_lr": 0.02,
                  "batch_size": 4, "seed": 0},
    }
    doc.update(overrides)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return p


def test_pretrain_end_to_end(tmp_path, image_dir):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    code = main(["pretrain", "--config", str(cfg), "--images", str(image_dir),
                 "--out", str(out)])
    assert code == 0
    assert (out / "metrics.csv").exists()
    assert (out / "ckpt_2.bin").exists()
    assert (out / "config.json").exists()


def test_pretrain_determinism(tmp_path, image_dir):
    cfg = write_config(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["pretrain", "--config", str(cfg), "--images", str(image_dir),
                     "--out", str(out)]) == 0
        outs.append((out / "metrics.csv").read_bytes())
    assert outs[0] == outs[1]


def test_pretrain_mask_seed_changes_run(tmp_path, image_dir):
    cfg = write_config(tmp_path)
    csvs = []
    for name, seed in (("a", "0"), ("b", "1")):
        out = tmp_path / name
        assert main(["pretrain", "--config", str(cfg), "--images", str(image_dir),
                     "--out", str(out), "--mask-seed", seed]) == 0
        csvs.append((out / "metrics.csv").read_bytes())
    assert csvs[0] != csvs[1]


def test_invalid_config_exits_2_without_side_effects(tmp_path, image_dir):
    cfg = write_config(tmp_path, mask={"mask_ratio": 0.99})
    out = tmp_path / "run"
    code = main(["pretrain", "--config", str(cfg), "--images", str(image_dir),
                 "--out", str(out)])
    assert code == 2
    assert not out.exists()


def test_missing_images_exits_3(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    code = main(["pretrain", "--images", str(empty), "--out", str(tmp_path / "run")])
    assert code == 3


def test_nonexistent_images_dir_exits_3(tmp_path):
    code = main(["pretrain", "--images", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "run")])
    assert code == 3


def test_missing_feature_file_exits_3(tmp_path):
    code = main(["heatmap", "--features", str(tmp_path / "nope.tvec"),
                 "--query", "0", "--out", str(tmp_path / "m.pgm")])
    assert code == 3


def test_dump_features_and_diversity(tmp_path, image_dir):
    feats = tmp_path / "feats"
    code = main(["dump-features", "--images", str(image_dir), "--out", str(feats),
                 "--seed", "7"])
    assert code == 0
    manifest = json.loads((feats / "manifest.json").read_text())
    assert len(manifest["entries"]) == 4

    report_path = tmp_path / "report.json"
    code = main(["diversity", "--features", str(feats), "--out", str(report_path)])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["n"] == 4
    assert report["k"] == 16
    assert 0.0 <= report["diver"] <= 1.0
    assert len(report["per_sample"]) == 4


def test_dump_features_deterministic(tmp_path, image_dir):
    blobs = []
    for name in ("a", "b"):
        feats = tmp_path / name
        assert main(["dump-features", "--images", str(image_dir), "--out", str(feats),
                     "--seed", "3"]) == 0
        blobs.append((feats / "img0.tvec").read_bytes())
    assert blobs[0] == blobs[1]


def test_heatmap_command(tmp_path, image_dir):
    feats = tmp_path / "feats"
    assert main(["dump-features", "--images", str(image_dir), "--out", str(feats)]) == 0
    out = tmp_path / "map.pgm"
    code = main(["heatmap", "--features", str(feats / "img0.tvec"),
                 "--query", "5", "--out", str(out)])
    assert code == 0
    img = read_pnm(out)
    assert img.shape == (1, 4, 4)
    sidecar = json.loads((tmp_path / "map.pgm.json").read_text())
    assert sidecar["query_index"] == 5


def test_heatmap_zero_norm_exits_4(tmp_path):
    bad = tmp_path / "bad.tvec"
    tokens = np.ones((4, 3), dtype=np.float32)
    tokens[2] = 0.0
    write_tvec(bad, tokens)
    code = main(["heatmap", "--features", str(bad), "--query", "0",
                 "--out", str(tmp_path / "m.pgm")])
    assert code == 4


def test_heatmap_non_square_exits_3(tmp_path):
    bad = tmp_path / "bad.tvec"
    write_tvec(bad, np.ones((3, 2), dtype=np.float32))
    code = main(["heatmap", "--features", str(bad), "--query", "0",
                 "--out", str(tmp_path / "m.pgm")])
    assert code == 3


def test_pca_command(tmp_path, image_dir):
    feats = tmp_path / "feats"
    assert main(["dump-features", "--images", str(image_dir), "--out", str(feats)]) == 0
    out = tmp_path / "emb.tvec"
    code = main(["pca", "--features", str(feats), "--components", "4",
                 "--out", str(out)])
    assert code == 0
    emb = read_tvec(out)
    assert emb.shape == (4 * 16, 4)
    meta = json.loads((tmp_path / "emb.tvec.json").read_text())
    assert len(meta["explained_variance"]) == 4


def test_pca_bad_components_exits_2(tmp_path, image_dir):
    feats = tmp_path / "feats"
    assert main(["dump-features", "--images", str(image_dir), "--out", str(feats)]) == 0
    code = main(["pca", "--features", str(feats), "--components", "999",
                 "--out", str(tmp_path / "emb.tvec")])
    assert code == 2


def test_grad_check_command(tmp_path):
    report_path = tmp_path / "report.json"
    code = main(["grad-check", "--out", str(report_path)])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["max_rel_err"] < 1e-4
    assert report["n_parameters"] > 0


def test_ablate_lambda_command(tmp_path, image_dir):
    cfg = write_config(tmp_path)
    out = tmp_path / "sweep"
    code = main(["ablate-lambda", "--config", str(cfg), "--images", str(image_dir),
                 "--out", str(out), "--lambdas", "0,0.5,1"])
    assert code == 0
    rows = (out / "ablation.csv").read_text().splitlines()
    assert rows[0] == "lambda,final_L_patch,final_L_global,final_L_total"
    assert len(rows) == 4
    for sub in ("lam_0", "lam_0.5", "lam_1"):
        assert (out / sub / "metrics.csv").exists()


def test_ablate_lambda_single_value_exits_2(tmp_path, image_dir):
    code = main(["ablate-lambda", "--images", str(image_dir),
                 "--out", str(tmp_path / "sweep"), "--lambdas", "0.5"])
    assert code == 2


def test_threads_flag_validated(tmp_path, image_dir):
    code = main(["pretrain", "--images", str(image_dir),
                 "--out", str(tmp_path / "run"), "--threads", "0"])
    assert code == 2


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
