import json
import re

import jsonschema
import numpy as np
import pytest

from flowgen.cli import main
from flowgen.errors import ConfigError, PlotInputError
from flowgen.harness import (
    ExperimentConfig,
    deterministic_digest,
    load_config,
    parse_config,
    read_sweep_rows,
    run_experiment,
    seeds_for,
)
from flowgen.metrics import REPORT_SCHEMA
from flowgen.plot import read_sweep, render_sweep_plot
from flowgen.signal import load_dataset

MINIMAL = {
    "version": 1,
    "seed": 5,
    "dataset": {"n_signals": 16, "n_eval": 16, "channels": 2, "samples": 64},
    "model": {"hidden_sizes": [32, 32]},
    "training": {"steps": 200},
    "sampling": {"nfe_list": [2, 10, 200]},
}


def write_config(tmp_path, raw=MINIMAL, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


@pytest.fixture(scope="module")
def minimal_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    summary = run_experiment(parse_config(MINIMAL), out)
    return out, summary


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({"version": 1})
        assert cfg.training.batch_size == 6
        assert cfg.training.lr == 2e-4
        assert cfg.schedule.T == 200
        assert cfg.sampling.nfe_list == (2, 5, 10, 25, 50, 100, 200)

    def test_nfe_above_T(self):
        raw = dict(MINIMAL, sampling={"nfe_list": [2, 500]})
        with pytest.raises(ConfigError) as info:
            parse_config(raw)
        assert any("500" in p and "ddpm" in p for p in info.value.problems)

    def test_unknown_keys_and_all_problems_listed(self):
        raw = {"version": 1, "datset": {}, "training": {"stepz": 3, "lr": -1.0}}
        with pytest.raises(ConfigError) as info:
            parse_config(raw)
        text = " ".join(info.value.problems)
        assert "datset" in text and "stepz" in text and "lr" in text

    def test_version_required(self):
        with pytest.raises(ConfigError):
            parse_config({"seed": 1})

    def test_seed_fan_out(self):
        a = seeds_for(ExperimentConfig(seed=1))
        b = seeds_for(ExperimentConfig(seed=2))
        assert len(set(a.values())) == len(a)
        assert a != b
        assert a == seeds_for(ExperimentConfig(seed=1))

    def test_load_config_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)


class TestRunExperiment:
    def test_artifacts(self, minimal_run):
        out, summary = minimal_run
        for name in ("config.json", "train.fgts", "eval.fgts", "fm.ckpt", "ddpm.ckpt",
                     "loss_fm.csv", "loss_ddpm.csv", "sweep.csv", "table1.csv", "figure2.svg"):
            assert (out / name).is_file(), name
        reports = sorted(p.name for p in (out / "reports").iterdir())
        assert reports == [f"{m}_nfe{n:03d}.json" for m in ("ddpm", "fm") for n in (2, 10, 200)]
        rows = read_sweep_rows(out / "sweep.csv")
        assert len(rows) == 2 * 3
        table = (out / "table1.csv").read_text().splitlines()
        assert len(table) == 3 and all(",200," in line for line in table[1:])
        assert len(load_dataset(out / "train.fgts")) == 16

    def test_reports_valid(self, minimal_run):
        out, _ = minimal_run
        for p in (out / "reports").iterdir():
            jsonschema.validate(json.loads(p.read_text()), REPORT_SCHEMA)

    def test_rerun_identical(self, minimal_run, tmp_path, monkeypatch):
        out, _ = minimal_run
        monkeypatch.setenv("FLOWGEN_THREADS", "4")
        run_experiment(parse_config(MINIMAL), tmp_path)
        assert deterministic_digest(tmp_path / "sweep.csv") == deterministic_digest(out / "sweep.csv")
        assert (tmp_path / "table1.csv").read_bytes() == (out / "table1.csv").read_bytes()
        assert (tmp_path / "fm.ckpt").read_bytes() == (out / "fm.ckpt").read_bytes()


class TestPlot:
    def sweep(self, tmp_path, methods=("fm", "ddpm"), nfes=(2, 5, 10, 25, 50, 100, 200)):
        p = tmp_path / "sweep.csv"
        lines = ["method,nfe,dtw,wasserstein,mmd2,spec_sim,wall_ms"]
        for m in methods:
            for n in nfes:
                lines.append(f"{m},{n},{100.0 / n},{1 + 1 / n},{0.1 / n},{1 - 1 / n},1.0")
        p.write_text("\n".join(lines) + "\n")
        return p

    def test_two_polylines_per_panel(self, tmp_path):
        svg = tmp_path / "f.svg"
        render_sweep_plot(self.sweep(tmp_path), svg)
        text = svg.read_text()
        panels = re.findall(r'<g id="panel-[^"]+">(.*?)</g>', text, re.S)
        assert len(panels) == 4
        for body in panels:
            assert body.count("<polyline") == 2
        assert "flow matching" in text and "diffusion" in text
        assert "log scale" in text

    def test_byte_identical(self, tmp_path):
        csv_path = self.sweep(tmp_path)
        render_sweep_plot(csv_path, tmp_path / "a.svg")
        render_sweep_plot(csv_path, tmp_path / "b.svg")
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_log_axis_spacing(self, tmp_path):
        render_sweep_plot(self.sweep(tmp_path, nfes=(1, 10, 100)), tmp_path / "f.svg")
        body = re.search(r'<g id="panel-dtw">(.*?)</g>', (tmp_path / "f.svg").read_text(), re.S).group(1)
        pts = re.search(r'data-method="fm" points="([^"]+)"', body).group(1).split()
        xs = [float(p.split(",")[0]) for p in pts]
        assert xs[1] - xs[0] == pytest.approx(xs[2] - xs[1], abs=0.02)

    def test_empty_csv(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.raises(PlotInputError):
            read_sweep(p)

    def test_malformed_line_number(self, tmp_path):
        p = self.sweep(tmp_path)
        lines = p.read_text().splitlines()
        lines[3] = "fm,abc,1,2,3,4,5"
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(PlotInputError, match="line 4"):
            read_sweep(p)


class TestCli:
    def test_run_experiment_and_render(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["run-experiment", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
        assert main(["render-plot", "--sweep", str(tmp_path / "r" / "sweep.csv"), "--out", str(tmp_path / "x.svg")]) == 0
        assert (tmp_path / "x.svg").read_bytes() == (tmp_path / "r" / "figure2.svg").read_bytes()

    def test_invalid_config_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, dict(MINIMAL, sampling={"nfe_list": [500]}))
        assert main(["run-experiment", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
        assert "500" in capsys.readouterr().err

    def test_missing_file_exit_3(self, tmp_path):
        assert main(["render-plot", "--sweep", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "x.svg")]) == 3

    def test_empty_sweep_exit_3(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        assert main(["render-plot", "--sweep", str(p), "--out", str(tmp_path / "x.svg")]) == 3

    @pytest.fixture
    def trained(self, tmp_path):
        data = tmp_path / "d.fgts"
        assert main(["synth-data", "--n", "8", "--channels", "2", "--samples", "32", "--rate", "50",
                     "--condition-dim", "3", "--out", str(data)]) == 0
        for method in ("fm", "ddpm"):
            assert main(["train", "--method", method, "--data", str(data), "--out", str(tmp_path / f"{method}.ckpt"),
                         "--steps", "20", "--hidden", "16", "--loss-trace", str(tmp_path / f"{method}.csv")]) == 0
        return tmp_path, data

    def test_sample_and_evaluate(self, trained):
        d, data = trained
        args = ["sample", "--checkpoint", str(d / "fm.ckpt"), "--method", "fm", "--nfe", "1", "--n", "1",
                "--condition", "0,1,0", "--seed", "3"]
        assert main(args + ["--out", str(d / "a.fgts")]) == 0
        assert main(args + ["--out", str(d / "b.fgts")]) == 0
        assert (d / "a.fgts").read_bytes() == (d / "b.fgts").read_bytes()
        assert len(load_dataset(d / "a.fgts")) == 1
        assert main(["sample", "--checkpoint", str(d / "ddpm.ckpt"), "--method", "ddpm", "--nfe", "4", "--n", "3",
                     "--condition", "1,0,0", "--out", str(d / "c.fgts")]) == 0

        assert main(["evaluate", "--real", str(data), "--gen", str(data), "--out", str(d / "r.json")]) == 0
        report = json.loads((d / "r.json").read_text())
        jsonschema.validate(report, REPORT_SCHEMA)
        assert report["dtw"]["mean"] == 0.0 and report["spec_sim"]["mean"] == 1.0

    def test_sample_errors(self, trained):
        d, _ = trained
        base = ["sample", "--checkpoint", str(d / "fm.ckpt"), "--nfe", "2", "--out", str(d / "x.fgts")]
        assert main(base + ["--method", "ddpm", "--condition", "0,1,0"]) == 2
        assert main(base + ["--method", "fm", "--condition", "0,1"]) == 2

    def test_evaluate_shape_mismatch(self, trained, tmp_path, capsys):
        d, data = trained
        other = tmp_path / "o.fgts"
        assert main(["synth-data", "--n", "4", "--channels", "3", "--samples", "32", "--rate", "50",
                     "--condition-dim", "3", "--out", str(other)]) == 0
        assert main(["evaluate", "--real", str(data), "--gen", str(other)]) == 2
        err = capsys.readouterr().err
        assert "2x32" in err and "3x32" in err

    def test_corrupt_checkpoint_exit_3(self, trained):
        d, _ = trained
        (d / "bad.ckpt").write_bytes(b"JUNKJUNK")
        assert main(["sample", "--checkpoint", str(d / "bad.ckpt"), "--method", "fm", "--nfe", "2",
                     "--condition", "0,1,0", "--out", str(d / "x.fgts")]) == 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure_exit_4(self, trained):
        d, data = trained
        assert main(["train", "--method", "fm", "--data", str(data), "--out", str(d / "n.ckpt"),
                     "--steps", "5", "--hidden", "16", "--lr", "1e300"]) == 4

    def test_import_csv(self, tmp_path):
        f = tmp_path / "s.csv"
        f.write_text("I,II\n" + "\n".join(f"{i},{2 * i}" for i in range(10)) + "\n")
        out = tmp_path / "d.fgts"
        assert main(["import-csv", str(f), "--rate", "20", "--condition", "1,0", "--out", str(out)]) == 0
        ds = load_dataset(out)
        assert ds.shape == (2, 10) and np.array_equal(ds.array[0, 1], 2 * np.arange(10))
