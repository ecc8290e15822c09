"""
Tests for the ecglens command line
Runs every sub-command through click's CliRunner on a tiny synthetic dataset
"""
import pandas as pd
import pytest
import yaml
from click.testing import CliRunner

from ecglens import __version__
from ecglens.checkpoint import CheckpointMeta
from ecglens.metrics import AVG_ROW
from ecglens.schemas import CLASS_CODES
from ecglens.train import make_folds
from ecglens_cli.commands.explain import background_records
from ecglens_cli.main import cli

TINY_CONFIG = {
    "data": {"nsteps": 32, "folds": 3},
    "model": {"kernel_size": 3, "base_channels": 2, "n_blocks": 2, "dropout_p": 0.0},
    "train": {"batch_size": 4, "max_epochs": 1, "learning_rate": 1e-3},
    "augment": {"enabled": False},
    "explain": {"mc_samples": 2, "background_size": 3},
    "baseline": {"levels": 3, "epochs": 20, "mlp_epochs": 10, "mlp_hidden": 4},
}


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_CONFIG))
    return str(path)


@pytest.fixture
def dataset(runner, tmp_path):
    """Manifest path of twelve two-lead synthetic records written by the synth command"""
    out = tmp_path / "data"
    result = runner.invoke(cli, ["synth", "--n", "12", "--classes", "normal,af,pvc", "--n-leads", "2",
                                 "--samples", "500", "--fs", "250", "--seed", "7", "--out", str(out)])
    assert result.exit_code == 0, result.output
    return str(out / "manifest.csv")


@pytest.fixture
def trained(runner, dataset, tiny_config, tmp_path):
    """Output directory of a single-split training run"""
    out = tmp_path / "train"
    result = runner.invoke(cli, ["train", "--config", tiny_config, "--data", dataset, "--no-cv",
                                 "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


def read_yaml(path):
    return yaml.safe_load(path.read_text())


class TestGroup:
    """Test the top-level command group"""

    def test_version(self, runner):
        """Test --version prints the package version"""
        result = runner.invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_help_lists_commands(self, runner):
        """Test every sub-command is registered"""
        result = runner.invoke(cli, ["--help"])
        for name in ("synth", "train", "evaluate", "explain", "baseline", "describe", "sweep-leads"):
            assert name in result.output


class TestSynth:
    """Test the synth command"""

    def test_writes_manifest(self, dataset):
        """Test the manifest lists every record"""
        manifest = pd.read_csv(dataset)
        assert len(manifest) == 12

    def test_missing_out_is_usage_error(self, runner):
        """Test --out is required"""
        result = runner.invoke(cli, ["synth", "--n", "3"])
        assert result.exit_code == 2

    def test_rerun_identical(self, runner, tmp_path):
        """Test the same command writes the same bytes"""
        args = ["synth", "--n", "6", "--n-leads", "1", "--samples", "200", "--fs", "100", "--seed", "3"]
        runner.invoke(cli, args + ["--out", str(tmp_path / "a")])
        runner.invoke(cli, args + ["--out", str(tmp_path / "b")])
        for name in ("manifest.csv", "records/rec_00005.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_invalid_record_count(self, runner, tmp_path):
        """Test fewer records than classes fails with exit 1"""
        result = runner.invoke(cli, ["synth", "--n", "2", "--classes", "normal,af,pvc", "--out", str(tmp_path)])
        assert result.exit_code == 1


class TestConfig:
    """Test configuration resolution through the commands"""

    def test_resolved_config_written(self, runner, dataset, tiny_config, tmp_path):
        """Test flags override the file and the result is saved"""
        out = tmp_path / "describe"
        result = runner.invoke(cli, ["describe", "--config", tiny_config, "--data", dataset, "--folds", "4",
                                     "--out", str(out)])
        assert result.exit_code == 0, result.output
        resolved = read_yaml(out / "run_config.yaml")
        assert resolved["data"]["folds"] == 4
        assert resolved["data"]["nsteps"] == 32
        assert resolved["model"]["kernel_size"] == 3

    def test_environment_fills_unset_values(self, runner, dataset, tmp_path):
        """Test ECGLENS_* variables apply when no flag sets the value"""
        out = tmp_path / "env"
        result = runner.invoke(cli, ["describe", "--data", dataset, "--out", str(out)],
                               env={"ECGLENS_SEED": "5"})
        assert result.exit_code == 0, result.output
        assert read_yaml(out / "run_config.yaml")["seed"] == 5

    def test_unknown_section(self, runner, dataset, tmp_path):
        """Test a config file with an unknown section is a usage error"""
        path = tmp_path / "bad.yaml"
        path.write_text("optimiser:\n  lr: 1\n")
        result = runner.invoke(cli, ["describe", "--config", str(path), "--data", dataset])
        assert result.exit_code == 2
        assert "optimiser" in result.output

    def test_missing_data(self, runner, tmp_path):
        """Test commands that read data need a manifest"""
        result = runner.invoke(cli, ["describe", "--out", str(tmp_path)])
        assert result.exit_code == 2


class TestDescribe:
    """Test the describe command"""

    def test_statistics_table(self, runner, dataset, tmp_path):
        """Test the per-class table is written with the All row"""
        out = tmp_path / "stats"
        result = runner.invoke(cli, ["describe", "--data", dataset, "--out", str(out)])
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out / "statistics.csv", index_col=0)
        assert table.loc["All", "count"] == 12
        assert table.loc["AF", "count"] == 4


class TestTrainAndEvaluate:
    """Test training, evaluation and their artifacts"""

    def test_train_artifacts(self, trained):
        """Test the single split writes round 0 and the summary files"""
        for name in ("report.csv", "rounds.csv", "best_round_confusion.csv", "best_round_confusion.svg",
                     "run_config.yaml", "round_00/checkpoint.ckpt", "round_00/history.csv",
                     "round_00/thresholds.json"):
            assert (trained / name).is_file(), name
        assert not (trained / "round_01").exists()
        rounds = pd.read_csv(trained / "rounds.csv")
        assert list(rounds.columns) == ["round", "best_epoch", "val_avg_F1", "test_avg_F1"]
        assert list(pd.read_csv(trained / "report.csv", index_col="class").index) == CLASS_CODES + [AVG_ROW]

    def test_evaluate(self, runner, trained, dataset, tmp_path):
        """Test a report, scores and confusion matrices for a checkpoint"""
        out = tmp_path / "eval"
        result = runner.invoke(cli, ["evaluate", "--data", dataset, "--checkpoint",
                                     str(trained / "round_00" / "checkpoint.ckpt"), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert len(pd.read_csv(out / "report.csv")) == 10
        scores = pd.read_csv(out / "scores.csv", index_col="record_id")
        assert list(scores.columns) == CLASS_CODES
        assert len(scores) == 12
        assert (out / "confusion.svg").is_file()
        assert AVG_ROW in result.output

    def test_avg_row_covers_dataset_classes(self, trained):
        """Test the AVG row of a three-class dataset is the mean of those three class rows"""
        report = pd.read_csv(trained / "report.csv", index_col="class")
        expected = report.loc[["SNR", "AF", "PVC"], "F1"].mean()
        assert report.loc[AVG_ROW, "F1"] == pytest.approx(expected, abs=1e-12)

    def test_average_over_every_class(self, runner, trained, dataset, tmp_path):
        """Test data.average_over listing all nine classes gives the mean of all nine rows"""
        config = tmp_path / "all_classes.yaml"
        config.write_text(yaml.safe_dump({"data": {"average_over": list(CLASS_CODES)}}))
        out = tmp_path / "eval"
        result = runner.invoke(cli, ["evaluate", "--config", str(config), "--data", dataset, "--out", str(out),
                                     "--checkpoint", str(trained / "round_00" / "checkpoint.ckpt")])
        assert result.exit_code == 0, result.output
        report = pd.read_csv(out / "report.csv", index_col="class")
        assert report.loc[AVG_ROW, "F1"] == pytest.approx(report.loc[CLASS_CODES, "F1"].mean(), abs=1e-12)

    def test_unknown_average_class(self, runner, dataset, tmp_path):
        """Test an unknown code in data.average_over is a usage error"""
        config = tmp_path / "bad.yaml"
        config.write_text(yaml.safe_dump({"data": {"average_over": ["SNR", "XYZ"]}}))
        result = runner.invoke(cli, ["describe", "--config", str(config), "--data", dataset,
                                     "--out", str(tmp_path / "d")])
        assert result.exit_code == 2

    def test_evaluate_with_thresholds_file(self, runner, trained, dataset, tmp_path):
        """Test an explicit thresholds file is accepted"""
        result = runner.invoke(cli, ["evaluate", "--data", dataset, "--out", str(tmp_path / "eval"),
                                     "--checkpoint", str(trained / "round_00" / "checkpoint.ckpt"),
                                     "--thresholds", str(trained / "round_00" / "thresholds.json")])
        assert result.exit_code == 0, result.output

    def test_evaluate_nsteps_mismatch(self, runner, trained, dataset, tmp_path):
        """Test a different input length than the checkpoint's is refused"""
        result = runner.invoke(cli, ["evaluate", "--data", dataset, "--nsteps", "64", "--out", str(tmp_path),
                                     "--checkpoint", str(trained / "round_00" / "checkpoint.ckpt")])
        assert result.exit_code == 1
        assert "nsteps" in result.output

    def test_evaluate_corrupt_checkpoint(self, runner, trained, dataset, tmp_path):
        """Test a damaged checkpoint exits with an error"""
        path = trained / "round_00" / "checkpoint.ckpt"
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        result = runner.invoke(cli, ["evaluate", "--data", dataset, "--checkpoint", str(path),
                                     "--out", str(tmp_path)])
        assert result.exit_code == 1
        assert "checksum" in result.output


class TestExplain:
    """Test the explain command"""

    def test_selected_records(self, runner, trained, dataset, tiny_config, tmp_path):
        """Test patient SVGs, the patient table and the population grid"""
        out = tmp_path / "explain"
        result = runner.invoke(cli, ["explain", "--config", tiny_config, "--data", dataset,
                                     "--checkpoint", str(trained / "round_00" / "checkpoint.ckpt"),
                                     "--records", "rec_00000,rec_00001", "--classes", "SNR,AF",
                                     "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert (out / "patients" / "rec_00000.svg").is_file()
        patients = pd.read_csv(out / "patients.csv")
        assert list(patients["record_id"]) == ["rec_00000", "rec_00001"]
        assert set(patients["top_class"]) <= {"SNR", "AF"}
        population = pd.read_csv(out / "population.csv", index_col="class")
        assert list(population.index) == ["SNR", "AF", "AVG"]
        assert list(population.columns) == ["I", "II"]

    def test_unknown_class_code(self, runner, trained, dataset, tmp_path):
        """Test an invalid --classes value is a usage error"""
        result = runner.invoke(cli, ["explain", "--data", dataset, "--classes", "XYZ", "--out", str(tmp_path),
                                     "--checkpoint", str(trained / "round_00" / "checkpoint.ckpt")])
        assert result.exit_code == 2

    def test_unknown_record(self, runner, trained, dataset, tiny_config, tmp_path):
        """Test asking for a record the manifest lacks"""
        result = runner.invoke(cli, ["explain", "--config", tiny_config, "--data", dataset,
                                     "--checkpoint", str(trained / "round_00" / "checkpoint.ckpt"),
                                     "--records", "nobody", "--out", str(tmp_path)])
        assert result.exit_code == 1


class TestBackgroundRecords:
    """Test which records may serve as explanation references"""

    @pytest.fixture
    def records(self, make_record):
        return [make_record(record_id=f"rec_{i:05d}") for i in range(12)]

    def test_round_training_folds_only(self, records):
        """Test references come from the round's training folds and skip explained records"""
        ids = [r.record_id for r in records]
        train_ids, val_ids, test_ids = make_folds(ids, k=3, seed=4).roles(1)
        selected = [r for r in records if r.record_id in set(test_ids[:2]) | {train_ids[0]}]
        pool = background_records(records, selected, CheckpointMeta(seed=4, round_index=1, folds=3), 10)
        pool_ids = {r.record_id for r in pool}
        assert pool_ids == set(train_ids) - {train_ids[0]}
        assert not pool_ids & {r.record_id for r in selected}
        assert not pool_ids & (set(val_ids) | set(test_ids))

    def test_fold_count_from_config(self, records):
        """Test checkpoints without a stored fold count use the configured one"""
        ids = [r.record_id for r in records]
        train_ids, _, _ = make_folds(ids, k=4, seed=0).roles(2)
        pool = background_records(records, [], CheckpointMeta(round_index=2), 4)
        assert {r.record_id for r in pool} == set(train_ids)

    def test_without_round_uses_unexplained(self, records):
        """Test a checkpoint outside cross-validation draws from every unexplained record"""
        pool = background_records(records, records[:3], CheckpointMeta(), 3)
        assert [r.record_id for r in pool] == [r.record_id for r in records[3:]]

    def test_all_explained_falls_back(self, records):
        """Test explaining every record keeps the training folds as references"""
        ids = [r.record_id for r in records]
        train_ids, _, _ = make_folds(ids, k=3, seed=0).roles(0)
        pool = background_records(records, records, CheckpointMeta(round_index=0, folds=3), 3)
        assert {r.record_id for r in pool} == set(train_ids)


class TestBaseline:
    """Test the baseline command"""

    def test_logistic_regression_with_deep_report(self, runner, trained, dataset, tiny_config, tmp_path):
        """Test features, scores, reports and the comparison including the deep model"""
        out = tmp_path / "baseline"
        result = runner.invoke(cli, ["baseline", "--config", tiny_config, "--data", dataset, "--model", "lr",
                                     "--model", "mlp", "--deep-report", str(trained / "report.csv"),
                                     "--out", str(out)])
        assert result.exit_code == 0, result.output
        for name in ("features.csv", "lr_scores.csv", "lr_report.csv", "mlp_report.csv", "comparison.svg"):
            assert (out / name).is_file(), name
        comparison = pd.read_csv(out / "comparison.csv")
        assert list(comparison["model"].unique()) == ["deep", "lr", "mlp"]
        assert len(comparison) == 3 * (len(CLASS_CODES) + 1)

    def test_tree_models_out_of_scope(self, runner, dataset, tmp_path):
        """Test random forests are refused with exit 1"""
        result = runner.invoke(cli, ["baseline", "--data", dataset, "--model", "rf", "--out", str(tmp_path)])
        assert result.exit_code == 1
        assert "out of scope" in result.output


class TestSweepLeads:
    """Test the single-lead sweep"""

    def test_one_lead(self, runner, dataset, tiny_config, tmp_path):
        """Test the all-lead model and one single-lead model are tabulated"""
        out = tmp_path / "sweep"
        result = runner.invoke(cli, ["sweep-leads", "--config", tiny_config, "--data", dataset, "--sweep", "II",
                                     "--out", str(out)])
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out / "lead_f1.csv", index_col="class")
        assert list(table.columns) == ["all", "II"]
        assert (out / "leads_II" / "round_00" / "checkpoint.ckpt").is_file()


@pytest.mark.slow
@pytest.mark.integration
class TestDeskScaleRun:
    """Test a reduced-scale end-to-end run learns the synthetic classes"""

    def test_deep_model_learns_and_beats_logistic_regression(self, runner, tmp_path):
        """Test validation F1 on synthetic rhythms and the comparison against logistic regression"""
        data = tmp_path / "data"
        result = runner.invoke(cli, ["synth", "--n", "600", "--classes", "normal,af,pvc", "--n-leads", "2",
                                     "--samples", "2000", "--fs", "250", "--seed", "7", "--out", str(data)])
        assert result.exit_code == 0, result.output
        manifest = str(data / "manifest.csv")

        train_out = tmp_path / "train"
        result = runner.invoke(cli, ["train", "--data", manifest, "--nsteps", "2000", "--blocks", "2",
                                     "--base-channels", "16", "--lr", "1e-3", "--epochs", "20",
                                     "--batch-size", "32", "--no-cv", "--seed", "1", "--out", str(train_out)])
        assert result.exit_code == 0, result.output
        rounds = pd.read_csv(train_out / "rounds.csv")
        assert rounds.loc[0, "val_avg_F1"] >= 0.9

        baseline_out = tmp_path / "baseline"
        result = runner.invoke(cli, ["baseline", "--data", manifest, "--model", "lr", "--seed", "1",
                                     "--out", str(baseline_out)])
        assert result.exit_code == 0, result.output
        lr_f1 = pd.read_csv(baseline_out / "lr_report.csv", index_col="class").loc[AVG_ROW, "F1"]
        assert rounds.loc[0, "test_avg_F1"] > lr_f1
