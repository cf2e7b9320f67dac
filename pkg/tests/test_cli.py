import json

import numpy as np
import numpy.testing as npt
import pytest

from contlearn.cli import main
from contlearn.data import load_cifar100, load_tensor_archive
from contlearn.errors import PlotError, ReportError
from contlearn.metrics import RunResult, aggregate, read_rmatrix_csv
from contlearn.plots import cmd_plot
from contlearn.report import cmd_report
from test_data import make_cifar_file


def write_config(path, **over):
    cfg = {
        "dataset": {"kind": "synthetic", "classes": 4, "per_class": 20,
                    "test_per_class": 6, "image_size": 8, "separation": 3.0, "seed": 0},
        "tasks": 2,
        "arch": {"name": "tinycnn", "dropout": False},
        "strategy": {"name": "finetune"},
        "schedule": {"max_epochs": 2},
        "train": {"batch_size": 16},
        "seeds": [1],
        "out_dir": str(path.parent / "run"),
    }
    cfg.update(over)
    path.write_text(json.dumps(cfg))
    return cfg


class TestRun:
    def test_single_seed_artifacts(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        write_config(cfg_path)
        assert main(["run", "--config", str(cfg_path)]) == 0
        run = tmp_path / "run"
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        assert manifest["digest"]
        rmat = read_rmatrix_csv(run / "seed_1" / "rmatrix.csv")
        assert [len(r) for r in rmat.rows] == [1, 2]
        logs = (run / "seed_1" / "logs.csv").read_text().splitlines()
        assert logs[0] == "task,epoch,train_loss,val_loss,lr,seconds"
        assert len(logs) == 1 + 2 * 2  # 2 tasks x 2 epochs
        assert (run / "summary.csv").exists()

    def test_multi_seed_summary_matches_aggregate(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        write_config(cfg_path, seeds=[1, 2, 3])
        assert main(["run", "--config", str(cfg_path)]) == 0
        run = tmp_path / "run"
        digest = json.loads((run / "manifest.json").read_text())["digest"]
        results = [RunResult(digest, s, read_rmatrix_csv(run / f"seed_{s}" / "rmatrix.csv"))
                   for s in (1, 2, 3)]
        agg = aggregate(results)
        lines = (run / "summary.csv").read_text().splitlines()
        acc_line = next(l for l in lines if l.startswith("acc,final"))
        _, _, mean, std, n = acc_line.split(",")
        assert float(mean) == pytest.approx(agg["acc"][0])
        assert float(std) == pytest.approx(agg["acc"][1])
        assert int(n) == 3

    def test_seeds_override_flag(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        write_config(cfg_path)
        assert main(["run", "--config", str(cfg_path), "--seeds", "4,5"]) == 0
        assert (tmp_path / "run" / "seed_4").exists()
        assert (tmp_path / "run" / "seed_5").exists()

    def test_unknown_strategy_is_config_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        write_config(cfg_path, strategy={"name": "hat"})
        assert main(["run", "--config", str(cfg_path)]) == 2
        assert "strategy" in capsys.readouterr().err

    def test_unknown_key_is_config_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        write_config(cfg_path, strategy={"name": "lwf", "temperture": 3.0})
        assert main(["run", "--config", str(cfg_path)]) == 2
        assert "temperture" in capsys.readouterr().err

    def test_determinism_byte_identical_rmatrix(self, tmp_path):
        for name in ("a", "b"):
            cfg_path = tmp_path / f"{name}.json"
            write_config(cfg_path, out_dir=str(tmp_path / name))
            assert main(["run", "--config", str(cfg_path)]) == 0
        a = (tmp_path / "a" / "seed_1" / "rmatrix.csv").read_bytes()
        b = (tmp_path / "b" / "seed_1" / "rmatrix.csv").read_bytes()
        assert a == b

    def test_failure_marker_on_midrun_error(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        # 4 classes cannot split into 3 tasks -> fails after manifest exists
        write_config(cfg_path, tasks=3)
        assert main(["run", "--config", str(cfg_path)]) != 0
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert "error" in manifest


class TestConvert:
    def test_cifar_round_trip(self, tmp_path, capsys):
        src = tmp_path / "train.bin"
        make_cifar_file(src, 25)
        out = tmp_path / "train.tia"
        assert main(["convert", "--cifar", str(src), "--out", str(out)]) == 0
        direct = load_cifar100(src)
        via = load_tensor_archive(out)
        npt.assert_array_equal(direct.images, via.images)
        npt.assert_array_equal(direct.labels, via.labels)

    def test_empty_input(self, tmp_path):
        src = tmp_path / "empty.bin"
        src.write_bytes(b"")
        assert main(["convert", "--cifar", str(src), "--out", str(tmp_path / "o.tia")]) == 3

    def test_corrupt_sidecar_labels(self, tmp_path):
        d = tmp_path / "dump"
        d.mkdir()
        (d / "images.raw").write_bytes(b"\x00" * (4 * 3 * 2 * 2))
        (d / "labels.bin").write_bytes(b"\x00" * 2)  # one label for four images
        (d / "shape.json").write_text(json.dumps({"n": 4, "height": 2, "width": 2}))
        assert main(["convert", "--raw", str(d), "--out", str(tmp_path / "o.tia")]) == 3

    def test_requires_one_source(self, tmp_path):
        assert main(["convert", "--out", str(tmp_path / "o.tia")]) == 2


def make_two_runs(tmp_path, tasks=2):
    dirs = []
    for name, strat in (("ft", "finetune"), ("lwf", "lwf")):
        cfg_path = tmp_path / f"{name}.json"
        write_config(cfg_path, strategy={"name": strat}, tasks=tasks,
                     out_dir=str(tmp_path / name), seeds=[1, 2])
        assert main(["run", "--config", str(cfg_path)]) == 0
        dirs.append(str(tmp_path / name))
    return dirs


class TestPlot:
    def test_two_strategies_two_charts(self, tmp_path):
        dirs = make_two_runs(tmp_path)
        out = tmp_path / "charts"
        written = cmd_plot(dirs, str(out))
        assert [p.split("/")[-1] for p in written] == ["acc.svg", "bwt.svg"]
        acc = (out / "acc.svg").read_text()
        assert acc.count("<polyline") == 2
        assert "finetune" in acc and "lwf" in acc
        bwt = (out / "bwt.svg").read_text()
        assert bwt.count("<polyline") == 2

    def test_byte_deterministic(self, tmp_path):
        dirs = make_two_runs(tmp_path)
        out1, out2 = tmp_path / "c1", tmp_path / "c2"
        cmd_plot(dirs, str(out1))
        cmd_plot(dirs, str(out2))
        assert (out1 / "acc.svg").read_bytes() == (out2 / "acc.svg").read_bytes()
        assert (out1 / "bwt.svg").read_bytes() == (out2 / "bwt.svg").read_bytes()

    def test_single_task_run_suppresses_bwt(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        write_config(cfg_path, tasks=1)
        assert main(["run", "--config", str(cfg_path)]) == 0
        written = cmd_plot([str(tmp_path / "run")], str(tmp_path / "charts"))
        assert len(written) == 1 and written[0].endswith("acc.svg")

    def test_corrupt_rmatrix_rejected(self, tmp_path):
        dirs = make_two_runs(tmp_path)
        bad = tmp_path / "ft" / "seed_1" / "rmatrix.csv"
        bad.write_text("1.5\n0.2,0.3\n")
        with pytest.raises(PlotError):
            cmd_plot(dirs, str(tmp_path / "charts"))

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(PlotError):
            cmd_plot([str(tmp_path / "nope")], str(tmp_path / "charts"))


class TestReport:
    def test_single_run_row(self, tmp_path, capsys):
        dirs = make_two_runs(tmp_path)
        out = tmp_path / "table.txt"
        assert main(["report", dirs[0], "--out", str(out)]) == 0
        text = out.read_text()
        assert "finetune" in text and "tinycnn" in text
        csv = (tmp_path / "table.txt.csv").read_text().splitlines()
        assert len(csv) == 2  # header + one run

    def test_mismatched_task_counts_stay_separate(self, tmp_path):
        d2 = make_two_runs(tmp_path)[0]
        cfg_path = tmp_path / "c1.json"
        write_config(cfg_path, tasks=1, out_dir=str(tmp_path / "one"))
        assert main(["run", "--config", str(cfg_path)]) == 0
        text = cmd_report([d2, str(tmp_path / "one")], str(tmp_path / "t.txt"))
        rows = [l for l in text.splitlines() if l and not l.startswith("-")][1:]
        assert len(rows) == 2

    def test_empty_input_rejected(self, tmp_path):
        with pytest.raises(ReportError):
            cmd_report([], str(tmp_path / "t.txt"))

    def test_missing_artifacts_lists_paths(self, tmp_path):
        missing = tmp_path / "ghost"
        with pytest.raises(ReportError) as err:
            cmd_report([str(missing)], str(tmp_path / "t.txt"))
        assert "ghost" in str(err.value)


class TestGradcheckCommand:
    def test_smoke_pass(self, capsys):
        assert main(["gradcheck", "--draws", "1"]) == 0
        out = capsys.readouterr().out
        for name in ("linear", "conv3x3", "relu", "basic_block", "cross_entropy",
                     "distill", "lwf_composite", "ewc_penalty"):
            assert out.count(f"{name} ") == 1

    def test_corrupted_relu_fails_and_is_named(self, capsys):
        assert main(["gradcheck", "--draws", "1", "--corrupt", "relu"]) == 4
        out = capsys.readouterr().out
        assert "relu" in out and "FAIL" in out
