import json
import os

import pytest

from wignerlab import cli


TINY_KERNEL = ["kernel-demo", "n_nodes=500"]


def run_cli(args):
    return cli.main(args)


class TestConfigFile:
    def test_parse(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("# comment\nn = 200\nsamples = 10  # inline\n\nq_count=2\n")
        assert cli.parse_config_file(path) == {"n": "200", "samples": "10", "q_count": "2"}

    def test_parse_error(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("just words\n")
        with pytest.raises(ValueError, match="expected"):
            cli.parse_config_file(path)


class TestListDescribe:
    def test_list_has_nine(self, capsys):
        assert run_cli(["list"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 9

    def test_describe_gaussianity(self, capsys):
        assert run_cli(["describe", "gaussianity"]) == 0
        assert "Gaussianity of bulk eigenvectors" in capsys.readouterr().out

    def test_describe_advection(self, capsys):
        assert run_cli(["describe", "advection"]) == 0
        assert "characteristic map" in capsys.readouterr().out

    def test_describe_unknown(self):
        with pytest.raises(SystemExit):
            run_cli(["describe", "nonsense"])


class TestRun:
    def test_run_writes_artifacts(self, tmp_path, capsys):
        code = run_cli(["run", *TINY_KERNEL, "--out", str(tmp_path), "--no-figures"])
        assert code == 0
        (outdir,) = [p for p in (tmp_path / "kernel-demo").iterdir()]
        report = json.loads((outdir / "report.json").read_text())
        assert report["pass"] is True
        assert report["schema_version"] == 1
        assert all({"name", "value", "se", "tolerance", "margin", "pass"}
                   <= set(c) for c in report["checks"])
        manifest = json.loads((outdir / "manifest.json").read_text())
        assert manifest["config_hash"] == report["config_hash"] == outdir.name
        assert "report.json" in manifest["artifacts"]
        csvs = [f for f in os.listdir(outdir) if f.endswith(".csv")]
        assert sorted(s + ".csv" for s in report["series"]) == sorted(csvs)

    def test_seed_rerun_byte_identical(self, tmp_path):
        argv = ["run", *TINY_KERNEL, "--seed", "42", "--out", str(tmp_path),
                "--no-figures"]
        assert run_cli(argv) == 0
        (outdir,) = (tmp_path / "kernel-demo").iterdir()
        first = {f: (outdir / f).read_bytes() for f in os.listdir(outdir)}
        assert run_cli(argv) == 0
        second = {f: (outdir / f).read_bytes() for f in os.listdir(outdir)}
        assert first == second

    def test_local_laws_eta_rows(self, tmp_path):
        run_cli(["run", "local-laws", "n=150", "samples=10", "n_eta=8",
                 "--out", str(tmp_path), "--no-figures"])
        (outdir,) = (tmp_path / "local-laws").iterdir()
        rows = (outdir / "residuals.csv").read_text().strip().splitlines()
        assert rows[0].split(",")[0] == "eta"
        assert len(rows) == 1 + 8

    def test_figures_rendered(self, tmp_path):
        run_cli(["run", *TINY_KERNEL, "--out", str(tmp_path)])
        (outdir,) = (tmp_path / "kernel-demo").iterdir()
        pngs = [f for f in os.listdir(outdir) if f.endswith(".png")]
        csvs = [f for f in os.listdir(outdir) if f.endswith(".csv")]
        assert len(pngs) == len(csvs) > 0

    def test_bad_override(self, tmp_path):
        with pytest.raises(SystemExit):
            run_cli(["run", "kernel-demo", "oops", "--out", str(tmp_path)])

    def test_unknown_key_surfaces(self, tmp_path):
        with pytest.raises(SystemExit, match="unknown config key"):
            run_cli(["run", "kernel-demo", "bogus=3", "--out", str(tmp_path)])

    def test_config_file_plus_override(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("n_nodes = 400\n")
        code = run_cli(["run", "kernel-demo", "--config", str(cfg),
                        "--out", str(tmp_path / "o"), "--no-figures"])
        assert code == 0
        (outdir,) = (tmp_path / "o" / "kernel-demo").iterdir()
        report = json.loads((outdir / "report.json").read_text())
        assert report["config"]["n_nodes"] == 400

    def test_experiments_use_disjoint_dirs(self, tmp_path):
        run_cli(["run", *TINY_KERNEL, "--out", str(tmp_path), "--no-figures"])
        run_cli(["run", "moment-flow-demo", "n_env=120", "window=40",
                 "fs_window=60", "mc_n=100", "mc_samples=10",
                 "--out", str(tmp_path), "--no-figures"])
        assert (tmp_path / "kernel-demo").is_dir()
        assert (tmp_path / "moment-flow-demo").is_dir()
