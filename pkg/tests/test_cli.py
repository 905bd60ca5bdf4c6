import json
import subprocess
import sys

import numpy as np
import pytest

from mcd_anomaly.cli import main
from mcd_anomaly.heatmap import read_heatmap_binary


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    rc = main(["gen-data", "--out", str(out), "--n-train", "3", "--n-test", "2",
               "--size", "64", "--seed", "77"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, corpus_dir):
    path = tmp_path_factory.mktemp("cli-model") / "model.picn"
    rc = main(["train", "--corpus", str(corpus_dir), "--out", str(path),
               "--iters", "30", "--patch-size", "32", "--mask-size", "16",
               "--patches-per-image", "2", "--seed", "77"])
    assert rc == 0
    return path


class TestGenData:
    def test_writes_manifest_images_and_boxes(self, corpus_dir):
        assert (corpus_dir / "manifest.json").exists()
        assert (corpus_dir / "boxes.csv").exists()
        assert len(list((corpus_dir / "train").glob("*.png"))) == 3
        assert len(list((corpus_dir / "test").glob("*.png"))) == 2

    def test_rerun_is_byte_identical(self, corpus_dir, tmp_path):
        again = tmp_path / "corpus2"
        rc = main(["gen-data", "--out", str(again), "--n-train", "3", "--n-test", "2",
                   "--size", "64", "--seed", "77"])
        assert rc == 0
        for rel in ["manifest.json", "boxes.csv", "train/train_0000.png", "test/test_0001.png"]:
            assert (corpus_dir / rel).read_bytes() == (again / rel).read_bytes()

    def test_missing_out_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen-data", "--n-train", "2"])
        assert exc.value.code == 2

    def test_module_entry_point_runs(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "mcd_anomaly", "gen-data", "--out",
             str(tmp_path / "c"), "--n-train", "1", "--n-test", "1", "--size", "64"],
            capture_output=True, text=True,
        )
        assert result.returncode == 0, result.stderr


class TestTrain:
    def test_writes_checkpoint_and_loss_history(self, checkpoint):
        assert checkpoint.exists()
        loss_csv = checkpoint.with_suffix(checkpoint.suffix + ".loss.csv")
        lines = loss_csv.read_text().strip().splitlines()
        assert lines[0] == "iteration,masked_l1"
        assert len(lines) >= 2

    def test_refuses_annotated_training_images(self, corpus_dir, tmp_path):
        import shutil
        tainted = tmp_path / "tainted"
        shutil.copytree(corpus_dir, tainted)
        boxes = (tainted / "boxes.csv").read_text().strip().splitlines()
        boxes.append("train_0000,1,1,4,4")
        (tainted / "boxes.csv").write_text("\n".join(boxes) + "\n")
        rc = main(["train", "--corpus", str(tainted), "--out", str(tmp_path / "m.picn"),
                   "--iters", "1", "--patch-size", "32"])
        assert rc == 1

    def test_missing_corpus_is_data_error(self, tmp_path):
        rc = main(["train", "--corpus", str(tmp_path / "nope"), "--out",
                   str(tmp_path / "m.picn")])
        assert rc == 1


class TestHeatmap:
    def test_default_flags_follow_desk_defaults(self):
        from mcd_anomaly.cli import build_parser
        args = build_parser().parse_args(["heatmap", "--model", "m", "--images", "i",
                                          "--out", "o"])
        # unset flags resolve through _Options to m=10, p_drop=0.5, metric=min, space=image
        assert args.m is None and args.p_drop is None
        from mcd_anomaly.cli import _Options
        opt = _Options(args, dict(m=10, p_drop=0.5, metric="min", space="image"))
        assert opt.m == 10 and opt.p_drop == 0.5
        assert opt.metric == "min" and opt.space == "image"

    def test_heatmaps_written_for_directory_input(self, corpus_dir, checkpoint, tmp_path):
        out = tmp_path / "maps"
        rc = main(["heatmap", "--model", str(checkpoint), "--images",
                   str(corpus_dir / "test"), "--out", str(out), "--m", "2",
                   "--stride", "16", "--seed", "5"])
        assert rc == 0
        assert sorted(p.name for p in out.glob("*.phmf")) == ["test_0000.phmf", "test_0001.phmf"]
        heat = read_heatmap_binary(out / "test_0000.phmf")
        assert heat.shape == (64, 64)
        assert heat.min() >= 0

    def test_single_completion_path_is_deterministic(self, corpus_dir, checkpoint, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out, seed in ((out_a, "1"), (out_b, "2")):
            rc = main(["heatmap", "--model", str(checkpoint), "--images",
                       str(corpus_dir / "test"), "--out", str(out), "--m", "1",
                       "--stride", "16", "--seed", seed])
            assert rc == 0
        # M=1 forces dropout off: different seeds still give identical maps
        assert (out_a / "test_0000.phmf").read_bytes() == (out_b / "test_0000.phmf").read_bytes()

    def test_worker_counts_give_identical_bytes(self, corpus_dir, checkpoint, tmp_path):
        out_a, out_b = tmp_path / "w1", tmp_path / "w2"
        for out, workers in ((out_a, "1"), (out_b, "2")):
            rc = main(["heatmap", "--model", str(checkpoint), "--images",
                       str(corpus_dir / "test"), "--out", str(out), "--m", "3",
                       "--stride", "16", "--seed", "9", "--workers", workers])
            assert rc == 0
        for name in ("test_0000.phmf", "test_0001.phmf"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_plot_data_emits_overlays(self, corpus_dir, checkpoint, tmp_path):
        out = tmp_path / "overlay"
        rc = main(["heatmap", "--model", str(checkpoint), "--images",
                   str(corpus_dir / "test"), "--out", str(out), "--m", "1",
                   "--stride", "16", "--plot-data"])
        assert rc == 0
        assert (out / "test_0000_overlay.png").exists()


@pytest.fixture(scope="module")
def heatmap_dir(corpus_dir, checkpoint, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval-maps")
    rc = main(["heatmap", "--model", str(checkpoint), "--images",
               str(corpus_dir / "test"), "--out", str(out), "--m", "2",
               "--stride", "16", "--seed", "3"])
    assert rc == 0
    return out


class TestEval:

    def test_metrics_json_written(self, corpus_dir, heatmap_dir, tmp_path):
        metrics = tmp_path / "metrics.json"
        rc = main(["eval", "--heatmaps", str(heatmap_dir), "--boxes",
                   str(corpus_dir / "boxes.csv"), "--out", str(metrics)])
        assert rc == 0
        payload = json.loads(metrics.read_text())
        assert 0.0 <= payload["mean_auc"] <= 1.0
        assert len(payload["images"]) == 2

    def test_mismatched_ids_exit_one(self, corpus_dir, heatmap_dir, tmp_path, capsys):
        (heatmap_dir / "stray.phmf").write_bytes((heatmap_dir / "test_0000.phmf").read_bytes())
        rc = main(["eval", "--heatmaps", str(heatmap_dir), "--boxes",
                   str(corpus_dir / "boxes.csv"), "--out", str(tmp_path / "m.json")])
        (heatmap_dir / "stray.phmf").unlink()
        assert rc == 1
        assert "stray" in capsys.readouterr().err


class TestTheory:
    def test_sweep_outputs_with_agreement_column(self, tmp_path):
        out = tmp_path / "sweep.csv"
        rc = main(["theory", "--m-list", "1,5", "--trials", "3000", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "M,auc,stderr,semi_auc,semi_stderr,agree"
        assert len(lines) == 3
        payload = json.loads(out.with_suffix(".json").read_text())
        assert payload["m_values"] == [1, 5]

    def test_zero_separation_gives_chance_level(self, tmp_path):
        out = tmp_path / "flat.csv"
        rc = main(["theory", "--mu-sep", "0", "--m-list", "1,10", "--trials", "5000",
                   "--out", str(out)])
        assert rc == 0
        rows = out.read_text().strip().splitlines()[1:]
        for row in rows:
            auc = float(row.split(",")[1])
            assert abs(auc - 0.5) < 0.03

    def test_default_m_list_matches_sweep_constant(self):
        from mcd_anomaly.cli import build_parser, _Options
        from mcd_anomaly.theory import DEFAULT_M_SWEEP
        args = build_parser().parse_args(["theory", "--out", "x.csv"])
        opt = _Options(args, dict(m_list=",".join(str(m) for m in DEFAULT_M_SWEEP)))
        assert tuple(int(t) for t in opt.m_list.split(",")) == DEFAULT_M_SWEEP


class TestConfigFile:
    def test_config_file_supplies_defaults_flags_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_train": 2, "n_test": 1, "size": 64, "seed": 4}))
        out = tmp_path / "c1"
        rc = main(["gen-data", "--out", str(out), "--config", str(cfg)])
        assert rc == 0
        assert len(list((out / "train").glob("*.png"))) == 2
        out2 = tmp_path / "c2"
        rc = main(["gen-data", "--out", str(out2), "--config", str(cfg), "--n-train", "3"])
        assert rc == 0
        assert len(list((out2 / "train").glob("*.png"))) == 3
