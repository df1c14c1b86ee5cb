import json
from pathlib import Path

import pytest
import yaml

from duocast.cli import main
from duocast.errors import EXIT_CONFIG, EXIT_DATA, EXIT_OK


@pytest.fixture(scope="module")
def dataset_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "synthetic.csv"
    code = main(["make-data", "--out", str(out), "--length", "400", "--channels", "2"])
    assert code == EXIT_OK
    return out


def run_flags(dataset_csv, out_dir, extra=()):
    return [
        "run",
        "--dataset", str(dataset_csv),
        "--split-convention", "ratio_70_10_20",
        "--lookback", "48",
        "--horizon", "12",
        "--patch-len", "8",
        "--stride", "4",
        "--d-llm", "16",
        "--d-model", "6",
        "--llm-layers", "2",
        "--epochs", "1",
        "--seeds", "1",
        "--out", str(out_dir),
        *extra,
    ]


class TestCli:
    def test_make_data_creates_loadable_csv(self, dataset_csv):
        assert dataset_csv.exists()
        header = dataset_csv.read_text().splitlines()[0]
        assert header.startswith("date,")

    def test_run_writes_reports(self, dataset_csv, tmp_path, capsys):
        out_dir = tmp_path / "out"
        assert main(run_flags(dataset_csv, out_dir)) == EXIT_OK
        assert (out_dir / "results.csv").exists()
        payload = json.loads((out_dir / "results.json").read_text())
        assert payload["runs"][0]["avg"]["mse"] is not None
        assert "avg_mse" in capsys.readouterr().out

    def test_run_with_config_file_and_override(self, dataset_csv, tmp_path):
        out_dir = tmp_path / "out"
        config = tmp_path / "run.yaml"
        config.write_text(
            yaml.safe_dump(
                dict(
                    dataset_path=str(dataset_csv),
                    split_convention="ratio_70_10_20",
                    lookback=96,  # overridden below
                    horizon=12,
                    patch_len=8,
                    stride=4,
                    d_llm=16,
                    d_model=6,
                    llm_layers=2,
                    epochs=1,
                    seeds=[1],
                    out_dir=str(out_dir),
                )
            )
        )
        code = main(["run", "--config", str(config), "--lookback", "48"])
        assert code == EXIT_OK
        rows = (out_dir / "results.csv").read_text().splitlines()
        assert rows[1].split(",")[1] == "48"

    def test_missing_dataset_is_data_error(self, tmp_path):
        code = main(run_flags(tmp_path / "absent.csv", tmp_path / "out"))
        assert code == EXIT_DATA

    def test_bad_flag_combination_is_config_error(self, dataset_csv, tmp_path):
        code = main(
            run_flags(dataset_csv, tmp_path / "out", extra=["--few-shot-ratio", "1.7"])
        )
        assert code == EXIT_CONFIG

    def test_missing_dataset_flag_is_config_error(self, tmp_path):
        assert main(["run", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_pretrained_without_weights_dir_fails(self, dataset_csv, tmp_path):
        code = main(
            run_flags(dataset_csv, tmp_path / "out", extra=["--backend", "pretrained"])
        )
        assert code == EXIT_CONFIG

    def test_sweep(self, dataset_csv, tmp_path):
        out_dir = tmp_path / "out"
        args = run_flags(dataset_csv, out_dir)
        args[0] = "sweep"
        code = main(args + ["--axis", "lambda", "--values", "0,1"])
        assert code == EXIT_OK
        rows = (out_dir / "results.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 2

    def test_ablate_panel(self, dataset_csv, tmp_path):
        out_dir = tmp_path / "out"
        args = run_flags(dataset_csv, out_dir)
        args[0] = "ablate"
        code = main(args + ["--variants", "align", "--variants", "scale"])
        assert code == EXIT_OK
        payload = json.loads((out_dir / "results.json").read_text())
        labels = {run["ablation"] for run in payload["runs"]}
        assert labels == {"none", "align", "scale"}

    def test_export_and_plot(self, dataset_csv, tmp_path):
        out_dir = tmp_path / "out"
        args = run_flags(dataset_csv, out_dir)
        args[0] = "export-embeddings"
        assert main(args) == EXIT_OK
        emb = out_dir / "embeddings.csv"
        assert emb.exists()
        png = tmp_path / "pca.png"
        assert main(["plot-pca", "--embeddings", str(emb), "--out", str(png)]) == EXIT_OK
        assert png.exists() and png.stat().st_size > 0

    def test_run_then_export_trained_checkpoint(self, dataset_csv, tmp_path):
        out_dir = tmp_path / "out"
        assert main(run_flags(dataset_csv, out_dir)) == EXIT_OK
        payload = json.loads((out_dir / "results.json").read_text())
        ckpt = payload["runs"][0]["seeds"][0]["checkpoint"]
        assert ckpt and Path(ckpt).exists()
        args = run_flags(dataset_csv, out_dir, extra=["--checkpoint", ckpt])
        args[0] = "export-embeddings"
        assert main(args) == EXIT_OK
        assert (out_dir / "embeddings.csv").exists()
