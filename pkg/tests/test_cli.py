"""Command-line surface: per-subcommand behavior, determinism, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from msemg import cli, data, metrics


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert run("synth", "--count", 6, "--duration", 2, "--seed", 3,
               "--out-dir", out) == 0
    return out


@pytest.fixture(scope="module")
def mixed(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("mixed")
    assert run("mix", "--manifest", corpus / "manifest.json", "--split", "train",
               "--out-dir", out) == 0
    return out


class TestSynth:
    def test_file_counts(self, corpus):
        files = sorted(p.name for p in corpus.glob("*.msg1"))
        assert sum(f.startswith("semg_") for f in files) == 6
        assert sum(f.startswith("ecg_") for f in files) == 6
        assert (corpus / "manifest.json").exists()

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("synth", "--count", 3, "--duration", 2, "--seed", 7,
                       "--out-dir", out) == 0
        assert tree_bytes(a) == tree_bytes(b)

    def test_manifest_passes_validation(self, corpus):
        manifest = data.DatasetManifest.load(corpus / "manifest.json")
        manifest.validate()
        pairs = data.build_dataset(manifest, "train")
        assert pairs

    def test_ecg_files_at_native_rate(self, corpus):
        sig = data.read_signal(corpus / "ecg_000.msg1")
        assert sig.fs == 128.0

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"count": 2, "seed": 5}))
        out = tmp_path / "out"
        assert run("synth", "--config", cfg_path, "--count", 4, "--duration", 2,
                   "--out-dir", out) == 0
        resolved = json.loads((out / "synth_resolved_config.json").read_text())
        assert resolved["count"] == 4  # flag beats config
        assert resolved["seed"] == 5  # config beats default

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"no_such_key": 1}))
        assert run("synth", "--config", cfg_path, "--out-dir", tmp_path / "x") == 2


class TestMix:
    def test_pair_files_and_index(self, mixed):
        index = json.loads((mixed / "pairs_index.json").read_text())
        # 4 train segments (6 files, 60/20/20 split) x 6 SNRs x 1 draw
        assert len(index["pairs"]) == 4 * 6
        for rec in index["pairs"][:3]:
            for role in ("clean", "artifact", "mixed"):
                assert (mixed / rec[role]).exists()

    def test_stored_snr_matches_remeasurement(self, mixed):
        index = json.loads((mixed / "pairs_index.json").read_text())
        for rec in index["pairs"][:6]:
            clean = data.read_signal(mixed / rec["clean"])
            mixed_sig = data.read_signal(mixed / rec["mixed"])
            measured = metrics.snr_db(clean, mixed_sig)
            assert abs(measured - rec["target_snr_db"]) <= 1e-9

    def test_rerun_is_idempotent(self, tmp_path, corpus):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("mix", "--manifest", corpus / "manifest.json",
                       "--split", "val", "--out-dir", out) == 0
        assert tree_bytes(a) == tree_bytes(b)

    def test_validate_only_writes_nothing(self, tmp_path, corpus):
        out = tmp_path / "nothing"
        assert run("mix", "--manifest", corpus / "manifest.json",
                   "--validate-only", "--out-dir", out) == 0
        assert not out.exists()

    def test_missing_manifest_is_io_error(self, tmp_path):
        assert run("mix", "--manifest", tmp_path / "nope.json",
                   "--out-dir", tmp_path) == 3

    def test_no_leftover_temp_files(self, mixed):
        assert not list(mixed.glob("*.tmp"))


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("trained")
    model_cfg = out / "model.json"
    model_cfg.write_text(json.dumps(
        {"d_model": 4, "d_state": 2, "expand": 2, "conv_kernel": 3,
         "hnf_kernel_sizes": [3, 5], "hnf_branch_channels": 4, "seed": 0}))
    assert run("train", "--manifest", corpus / "manifest.json",
               "--model-config", model_cfg, "--epochs", 1, "--batch-size", 4,
               "--segment-len", 128, "--seed", 0, "--out-dir", out) == 0
    return out


class TestTrain:
    def test_outputs_exist(self, trained):
        for name in ("model_best.msmg", "model_final.msmg", "train_log.jsonl",
                     "train_resolved_config.json", "model_best.msmg.json"):
            assert (trained / name).exists()

    def test_log_epochs(self, trained):
        lines = (trained / "train_log.jsonl").read_text().strip().splitlines()
        records = [json.loads(line) for line in lines]
        assert [r["epoch"] for r in records] == [0, 1]

    def test_zero_lr_keeps_init(self, tmp_path, corpus, trained):
        out = tmp_path / "zero_lr"
        model_cfg = trained / "model.json"
        assert run("train", "--manifest", corpus / "manifest.json",
                   "--model-config", model_cfg, "--epochs", 1, "--batch-size", 4,
                   "--learning-rate", 0, "--segment-len", 128,
                   "--out-dir", out) == 0
        from msemg import blocks
        final = blocks.load_checkpoint(out / "model_final.msmg")
        init = blocks.init_model(final.config)
        for (_, a), (_, b) in zip(blocks.param_items(final), blocks.param_items(init)):
            np.testing.assert_array_equal(a, b)

    def test_reproducible_checkpoints(self, tmp_path, corpus, trained):
        outs = [tmp_path / "r1", tmp_path / "r2"]
        for out in outs:
            assert run("train", "--manifest", corpus / "manifest.json",
                       "--model-config", trained / "model.json",
                       "--epochs", 1, "--batch-size", 4, "--segment-len", 128,
                       "--seed", 5, "--out-dir", out) == 0
        assert ((outs[0] / "model_best.msmg").read_bytes()
                == (outs[1] / "model_best.msmg").read_bytes())


class TestDenoise:
    def test_baseline_hp_removes_low_sine(self, tmp_path):
        fs = 1000.0
        t = np.arange(4000) / fs
        sig = data.Signal(samples=np.sin(2 * np.pi * 5.0 * t), fs=fs)
        src = tmp_path / "sine.msg1"
        data.write_signal(sig, src)
        out = tmp_path / "out"
        assert run("denoise", "--baseline", "hp", "--out-dir", out, src) == 0
        den = data.read_signal(out / "sine_denoised.msg1")
        assert np.sqrt(np.mean(den.samples**2)) <= 0.01

    def test_output_count_matches_input_count(self, tmp_path, mixed):
        inputs = sorted(mixed.glob("pair_train_0000*_mixed.msg1"))[:3]
        out = tmp_path / "out"
        assert run("denoise", "--baseline", "identity", "--out-dir", out, *inputs) == 0
        assert len(list(out.glob("*_denoised.msg1"))) == 3

    def test_model_checkpoint(self, tmp_path, trained, mixed):
        inputs = sorted(mixed.glob("pair_train_00000_mixed.msg1"))
        out = tmp_path / "out"
        assert run("denoise", "--checkpoint", trained / "model_best.msmg",
                   "--out-dir", out, *inputs) == 0
        den = data.read_signal(out / "pair_train_00000_mixed_denoised.msg1")
        src = data.read_signal(inputs[0])
        assert len(den) == len(src)

    def test_fs_mismatch_rejected(self, tmp_path, trained):
        sig = data.Signal(samples=np.random.default_rng(0).normal(size=512), fs=500.0)
        src = tmp_path / "wrong_fs.msg1"
        data.write_signal(sig, src)
        assert run("denoise", "--checkpoint", trained / "model_best.msmg",
                   "--out-dir", tmp_path / "out", src) == 2

    def test_unreadable_checkpoint_rejected(self, tmp_path, mixed):
        bad = tmp_path / "bad.msmg"
        bad.write_bytes(b"XXXX not a checkpoint")
        inputs = sorted(mixed.glob("pair_train_00000_mixed.msg1"))
        assert run("denoise", "--checkpoint", bad,
                   "--out-dir", tmp_path / "out", *inputs) == 2


class TestEvaluate:
    def test_identity_report(self, tmp_path, mixed):
        out = tmp_path / "eval"
        assert run("evaluate", "--pairs-index", mixed / "pairs_index.json",
                   "--denoiser", "identity", "--out-dir", out) == 0
        report = metrics.MetricsReport.from_json(
            (out / "report_identity.json").read_text())
        assert report.aggregate_overall()["snr_imp_db"] == 0.0

    def test_csv_row_count(self, tmp_path, mixed):
        out = tmp_path / "eval"
        assert run("evaluate", "--pairs-index", mixed / "pairs_index.json",
                   "--denoiser", "identity", "--out-dir", out) == 0
        lines = (out / "report_identity.csv").read_text().strip().splitlines()
        index = json.loads((mixed / "pairs_index.json").read_text())
        n_pairs = len(index["pairs"])
        n_snrs = len({rec["target_snr_db"] for rec in index["pairs"]})
        assert len(lines) == 1 + n_pairs + n_snrs + 1

    def test_aggregates_match_recomputation(self, tmp_path, mixed):
        out = tmp_path / "eval"
        assert run("evaluate", "--pairs-index", mixed / "pairs_index.json",
                   "--denoiser", "hp", "--out-dir", out) == 0
        report = metrics.MetricsReport.from_json((out / "report_hp.json").read_text())
        payload = json.loads((out / "report_hp.json").read_text())
        for col, value in payload["aggregate_overall"].items():
            assert value == pytest.approx(report.aggregate_overall()[col], rel=1e-12)

    def test_unknown_denoiser_rejected(self, tmp_path, mixed):
        assert run("evaluate", "--pairs-index", mixed / "pairs_index.json",
                   "--denoiser", "wavelet", "--out-dir", tmp_path) == 2


class TestCompare:
    @pytest.fixture()
    def reports(self, tmp_path, mixed):
        out = tmp_path / "eval"
        for name in ("identity", "hp"):
            assert run("evaluate", "--pairs-index", mixed / "pairs_index.json",
                       "--denoiser", name, "--out-dir", out) == 0
        return [out / "report_identity.json", out / "report_hp.json"]

    def test_self_comparison_identical_rows(self, capsys, reports):
        capsys.readouterr()  # drain fixture output
        assert run("compare", reports[1], reports[1]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[1] == lines[2]

    def test_column_order(self, capsys, reports):
        capsys.readouterr()
        assert run("compare", *reports) == 0
        header = capsys.readouterr().out.splitlines()[0].split()
        assert header == ["denoiser", "snr_imp_db", "rmse", "rmse_arv", "rmse_mf_hz"]

    def test_csv_written(self, tmp_path, reports):
        out_csv = tmp_path / "table.csv"
        assert run("compare", *reports, "--out-csv", out_csv) == 0
        lines = out_csv.read_text().strip().splitlines()
        assert len(lines) == 3

    def test_missing_metric_rejected(self, tmp_path, reports):
        broken = tmp_path / "broken.json"
        payload = json.loads(Path(reports[0]).read_text())
        for rec in payload["records"]:
            del rec["rmse_mf_hz"]
        broken.write_text(json.dumps(payload))
        assert run("compare", reports[0], broken) == 2

    def test_single_report_rejected(self, reports):
        assert run("compare", reports[0]) == 2


class TestInspect:
    def test_prints_count_and_references(self, capsys, trained):
        assert run("inspect", trained / "model_best.msmg") == 0
        out = capsys.readouterr().out
        assert "trainable parameters" in out
        assert "137,801" in out and "1,233,857" in out and "279,937" in out

    def test_stable_across_runs(self, capsys, trained):
        assert run("inspect", trained / "model_best.msmg") == 0
        first = capsys.readouterr().out
        assert run("inspect", trained / "model_best.msmg") == 0
        assert capsys.readouterr().out == first

    def test_corrupt_checkpoint(self, tmp_path, capsys):
        bad = tmp_path / "bad.msmg"
        bad.write_bytes(b"JUNKJUNKJUNK")
        assert run("inspect", bad) == 2
