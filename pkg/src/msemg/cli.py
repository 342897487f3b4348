"""Command-line surface: synth, mix, train, denoise, evaluate, compare,
inspect.

Conventions shared by every subcommand: flags beat config-file values beat
defaults; the resolved configuration is written next to the outputs; file
writes are atomic; identical flags + seed + inputs reproduce identical
bytes.  Exit codes: 0 success, 2 validation, 3 I/O, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import blocks, data, dsp, metrics, training
from .errors import NumericalError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

SYNTH_DEFAULTS = {
    "count": 10,
    "duration": 2.0,
    "fs": 2000.0,
    "ecg_fs": 128.0,
    "target_fs": 1000.0,
    "seed": 0,
    "draws": 1,
    "train_frac": 0.6,
    "val_frac": 0.2,
}

TRAIN_DEFAULTS = {
    "epochs": 5,
    "batch_size": 8,
    "learning_rate": 1e-3,
    "seed": 0,
    "segment_len": None,
    "checkpoint_every": 0,
    "patience": 0,
}

DENOISE_DEFAULTS = {"hp_cutoff": dsp.HP_BASELINE_CUTOFF_HZ,
                    "hp_order": dsp.HP_BASELINE_ORDER,
                    "ts_window_ms": dsp.TEMPLATE_WINDOW_MS}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        loaded = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path}: {exc}") from exc
    if not isinstance(loaded, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return loaded


def _resolve(args: argparse.Namespace, defaults: dict, config_path: str | None) -> dict:
    """flags > config file > defaults; unknown config keys rejected."""
    overrides = _load_config_file(config_path)
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in overrides:
            resolved[key] = overrides[key]
        else:
            resolved[key] = default
    return resolved


def _write_json(payload: dict, path: Path) -> None:
    data.atomic_write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n")
                            .encode("utf-8"))


def _ensure_out_dir(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    cfg = _resolve(args, SYNTH_DEFAULTS, args.config)
    out_dir = _ensure_out_dir(args.out_dir)
    rng = np.random.default_rng(int(cfg["seed"]))
    count = int(cfg["count"])
    if count < 1:
        raise ValidationError("count must be >= 1")

    n_train = max(1, round(cfg["train_frac"] * count)) if count > 1 else 1
    n_val = round(cfg["val_frac"] * count)
    if n_train + n_val > count:
        n_val = count - n_train
    splits = (["train"] * n_train + ["val"] * n_val
              + ["test"] * (count - n_train - n_val))

    clean_entries = []
    artifact_entries = []
    for i in range(count):
        semg_seed = int(cfg["seed"]) * 100_000 + i
        raw = data.synth_semg(cfg["duration"], cfg["fs"], seed=semg_seed)
        clean = dsp.preprocess_semg(raw, target_fs=cfg["target_fs"])
        clean.provenance.update({"subject": f"synth-emg-{i:03d}", "kind": "semg"})
        path = f"semg_{i:03d}.msg1"
        data.write_signal(clean, out_dir / path)
        clean_entries.append(data.ManifestEntry(path=path,
                                                subject=f"synth-emg-{i:03d}",
                                                split=splits[i]))

        bpm = float(rng.uniform(55.0, 85.0))
        ecg_seed = int(cfg["seed"]) * 100_000 + 50_000 + i
        ecg_raw, _ = data.synth_ecg(cfg["duration"], cfg["ecg_fs"], bpm=bpm,
                                    seed=ecg_seed)
        ecg = dsp.preprocess_ecg(ecg_raw)
        ecg.provenance.update({"subject": f"synth-ecg-{i:03d}", "kind": "ecg"})
        path = f"ecg_{i:03d}.msg1"
        data.write_signal(ecg, out_dir / path)
        artifact_entries.append(data.ManifestEntry(path=path,
                                                   subject=f"synth-ecg-{i:03d}",
                                                   split=splits[i]))

    draws = int(cfg["draws"])
    manifest = data.DatasetManifest(
        clean=clean_entries,
        artifact=artifact_entries,
        snr_grids_db={k: list(v) for k, v in data.DEFAULT_SNR_GRIDS_DB.items()},
        draws_per_segment={"train": draws, "val": draws, "test": 1},
        seed=int(cfg["seed"]),
        base_dir=out_dir,
    )
    manifest.validate()
    manifest.save(out_dir / "manifest.json")
    _write_json(cfg, out_dir / "synth_resolved_config.json")
    print(f"wrote {count} sEMG + {count} ECG canonical files and manifest.json "
          f"to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# mix


def cmd_mix(args) -> int:
    manifest = data.DatasetManifest.load(args.manifest)
    manifest.validate()
    missing = [e.path for e in manifest.clean + manifest.artifact
               if not (manifest.base_dir / e.path).exists()]
    if missing:
        raise ValidationError(f"manifest references missing files: {missing}")
    if args.validate_only:
        print(f"manifest {args.manifest} is valid")
        return EXIT_OK

    out_dir = _ensure_out_dir(args.out_dir)
    splits = [args.split] if args.split != "all" else list(data.SPLITS)
    index = []
    for split in splits:
        pairs = data.build_dataset(manifest, split)
        for i, pair in enumerate(pairs):
            stem = f"pair_{split}_{i:05d}"
            for role, sig in (("clean", pair.clean), ("artifact", pair.artifact),
                              ("mixed", pair.mixed)):
                data.write_signal(sig, out_dir / f"{stem}_{role}.msg1")
            index.append({
                "split": split, "index": i,
                "clean": f"{stem}_clean.msg1",
                "artifact": f"{stem}_artifact.msg1",
                "mixed": f"{stem}_mixed.msg1",
                "target_snr_db": pair.target_snr_db,
                "scale": pair.scale,
                "fs": pair.mixed.fs,
            })
    _write_json({"schema_version": 1, "seed": manifest.seed, "pairs": index},
                out_dir / "pairs_index.json")
    print(f"materialized {len(index)} pairs to {out_dir}")
    return EXIT_OK


def _load_pairs_index(index_path: str, split: str | None) -> list[data.NoisyPair]:
    index_path = Path(index_path)
    payload = json.loads(index_path.read_text(encoding="utf-8"))
    if "pairs" not in payload:
        raise ValidationError("pairs index is missing the 'pairs' list")
    base = index_path.parent
    pairs = []
    missing = []
    for rec in payload["pairs"]:
        if split is not None and rec["split"] != split:
            continue
        paths = [base / rec[role] for role in ("clean", "artifact", "mixed")]
        absent = [str(p) for p in paths if not p.exists()]
        if absent:
            missing.extend(absent)
            continue
        clean, artifact, mixed = (data.read_signal(p) for p in paths)
        pairs.append(data.NoisyPair(clean=clean, artifact=artifact, mixed=mixed,
                                    target_snr_db=float(rec["target_snr_db"]),
                                    scale=float(rec["scale"])))
    if missing:
        raise ValidationError(f"pairs index references missing files: {missing}")
    return pairs


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    manifest = data.DatasetManifest.load(args.manifest)
    out_dir = _ensure_out_dir(args.out_dir)

    tcfg_dict = _resolve(args, TRAIN_DEFAULTS, args.train_config)
    model_overrides = _load_config_file(args.model_config)
    model_cfg = blocks.ModelConfig.from_dict(model_overrides)

    train_pairs = data.build_dataset(manifest, "train")
    val_pairs = data.build_dataset(manifest, "val")
    if not val_pairs:
        # fall back to a held-out slice of the training pairs
        cut = max(1, len(train_pairs) // 10)
        val_pairs, train_pairs = train_pairs[:cut], train_pairs[cut:]
    if not train_pairs:
        raise ValidationError("manifest yields no training pairs")
    fs = train_pairs[0].mixed.fs
    model_cfg = dataclasses.replace(model_cfg, sample_rate_hz=fs)

    tcfg = training.TrainConfig(
        epochs=int(tcfg_dict["epochs"]), batch_size=int(tcfg_dict["batch_size"]),
        learning_rate=float(tcfg_dict["learning_rate"]), seed=int(tcfg_dict["seed"]),
        segment_len=(None if tcfg_dict["segment_len"] in (None, 0)
                     else int(tcfg_dict["segment_len"])),
        checkpoint_every=int(tcfg_dict["checkpoint_every"]),
        patience=int(tcfg_dict["patience"]),
    )

    def snapshot(epoch: int, params: blocks.ModelParams, record) -> None:
        if epoch > 0:
            blocks.save_checkpoint(params, out_dir / f"checkpoint_{epoch:04d}.msmg")

    result = training.train(train_pairs, val_pairs, model_cfg, tcfg,
                            snapshot=snapshot if tcfg.checkpoint_every else None)
    blocks.save_checkpoint(result.best_params, out_dir / "model_best.msmg")
    blocks.save_checkpoint(result.final_params, out_dir / "model_final.msmg")
    data.atomic_write_bytes(out_dir / "train_log.jsonl",
                            result.log_jsonl().encode("utf-8"))
    _write_json({"train": tcfg_dict, "model": model_cfg.to_dict()},
                out_dir / "train_resolved_config.json")
    print(f"trained {len(result.log) - 1} epochs; best val SNR_imp "
          f"{result.best_val_snr_imp_db:.3f} dB; checkpoints in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# denoise / evaluate


def _build_denoiser(spec: str, cfg: dict):
    if spec == "identity":
        return "identity", lambda sig: sig
    if spec == "hp":
        cutoff, order = float(cfg["hp_cutoff"]), int(cfg["hp_order"])
        return "hp", lambda sig: dsp.highpass_denoise(sig, cutoff, order)
    if spec == "ts":
        window = float(cfg["ts_window_ms"])
        return "ts", lambda sig: dsp.template_subtract_denoise(sig, window_ms=window)
    if spec.startswith("model:"):
        params = blocks.load_checkpoint(spec.split(":", 1)[1])
        expected_fs = params.config.sample_rate_hz

        def run_model(sig: data.Signal) -> data.Signal:
            if expected_fs is not None and abs(sig.fs - expected_fs) > 1e-9:
                raise ValidationError(
                    f"input fs {sig.fs} does not match model fs {expected_fs}")
            out = blocks.msemg_forward(sig.samples, params)
            return data.Signal(samples=np.asarray(out, dtype=np.float64), fs=sig.fs,
                               provenance=dict(sig.provenance))

        return "msemg", run_model
    raise ValidationError(f"unknown denoiser {spec!r} "
                          "(expected identity, hp, ts, or model:<checkpoint>)")


def cmd_denoise(args) -> int:
    cfg = _resolve(args, DENOISE_DEFAULTS, args.config)
    spec = f"model:{args.checkpoint}" if args.checkpoint else args.baseline
    if spec is None:
        raise ValidationError("choose --checkpoint or --baseline")
    name, denoiser = _build_denoiser(spec, cfg)
    out_dir = _ensure_out_dir(args.out_dir)
    written = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", dsp.TemplateSubtractWarning)
        for input_path in args.inputs:
            sig = data.read_signal(input_path)
            out = denoiser(sig)
            if len(out) != len(sig):
                raise NumericalError(f"denoiser changed length on {input_path}")
            dest = out_dir / f"{Path(input_path).stem}_denoised.msg1"
            data.write_signal(out, dest)
            written.append(str(dest))
    _write_json({"denoiser": name, **cfg}, out_dir / "denoise_resolved_config.json")
    print(f"denoised {len(written)} file(s) with {name}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _resolve(args, {**DENOISE_DEFAULTS, "window_ms": metrics.DEFAULT_FEATURE_WINDOW_MS},
                   args.config)
    pairs = _load_pairs_index(args.pairs_index, None if args.split == "all" else args.split)
    if not pairs:
        raise ValidationError("no pairs matched the requested split")
    name, denoiser = _build_denoiser(args.denoiser, cfg)
    out_dir = _ensure_out_dir(args.out_dir)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", dsp.TemplateSubtractWarning)
        report = metrics.evaluate(pairs, denoiser, name=name,
                                  window_ms=float(cfg["window_ms"]))
    data.atomic_write_bytes(out_dir / f"report_{name}.json",
                            report.to_json().encode("utf-8"))
    data.atomic_write_bytes(out_dir / f"report_{name}.csv",
                            report.to_csv().encode("utf-8"))
    overall = report.aggregate_overall()
    _write_json({"denoiser": args.denoiser, **cfg},
                out_dir / "evaluate_resolved_config.json")
    print(f"{name}: SNR_imp {overall['snr_imp_db']:.3f} dB, RMSE {overall['rmse']:.6f}, "
          f"RMSE_ARV {overall['rmse_arv']:.6f}, RMSE_MF {overall['rmse_mf_hz']:.3f} Hz "
          f"({len(report.records)} pairs, {len(report.excluded)} excluded)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare / inspect


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise ValidationError("compare needs at least two reports")
    rows = []
    for path in args.reports:
        try:
            report = metrics.MetricsReport.from_json(Path(path).read_text(encoding="utf-8"))
            overall = report.aggregate_overall()
            rows.append((report.denoiser, [overall[c] for c in metrics.METRIC_COLUMNS]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"report {path} is missing metrics: {exc}") from exc

    header = ["denoiser", *metrics.METRIC_COLUMNS]
    widths = [max(len(header[0]), *(len(r[0]) for r in rows))]
    cells = [[f"{v:.6g}" for v in vals] for _, vals in rows]
    for col in range(len(metrics.METRIC_COLUMNS)):
        widths.append(max(len(header[col + 1]), *(len(c[col]) for c in cells)))
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for (name, _), formatted in zip(rows, cells):
        lines.append("  ".join(v.ljust(w)
                               for v, w in zip([name, *formatted], widths)).rstrip())
    table = "\n".join(lines)
    print(table)

    csv_lines = [",".join(header)]
    csv_lines += [",".join([name, *(f"{v!r}" for v in vals)]) for name, vals in rows]
    if args.out_csv:
        data.atomic_write_bytes(args.out_csv, ("\n".join(csv_lines) + "\n").encode("utf-8"))
    return EXIT_OK


def cmd_inspect(args) -> int:
    params = blocks.load_checkpoint(args.checkpoint)
    count = blocks.count_parameters(params)
    print(json.dumps(params.config.to_dict(), indent=2, sort_keys=True))
    print(f"trainable parameters: {count}")
    refs = ", ".join(f"{k} {v:,}" for k, v in blocks.REFERENCE_MODEL_SIZES.items())
    print(f"reference sizes for context: {refs}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msemg",
        description="Selective state-space sEMG denoising toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus + manifest")
    p.add_argument("--count", type=int)
    p.add_argument("--duration", type=float, help="seconds per segment")
    p.add_argument("--fs", type=float, help="raw sEMG rate before conditioning")
    p.add_argument("--ecg-fs", dest="ecg_fs", type=float)
    p.add_argument("--target-fs", dest="target_fs", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--draws", type=int, help="artifact draws per train/val segment")
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--val-frac", dest="val_frac", type=float)
    p.add_argument("--config", help="JSON file with flag overrides")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mix", help="materialize contaminated pairs from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["all", *data.SPLITS], default="all")
    p.add_argument("--validate-only", action="store_true",
                   help="validate the manifest and referenced files, write nothing")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("train", help="train the denoiser on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model-config", dest="model_config",
                   help="JSON file with model dimensions")
    p.add_argument("--train-config", dest="train_config",
                   help="JSON file with loop settings")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--segment-len", dest="segment_len", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="run a denoiser over canonical files")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint")
    group.add_argument("--baseline", choices=["hp", "ts", "identity"])
    p.add_argument("--hp-cutoff", dest="hp_cutoff", type=float)
    p.add_argument("--hp-order", dest="hp_order", type=int)
    p.add_argument("--ts-window-ms", dest="ts_window_ms", type=float)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("evaluate", help="score a denoiser over materialized pairs")
    p.add_argument("--pairs-index", dest="pairs_index", required=True)
    p.add_argument("--denoiser", required=True,
                   help="identity, hp, ts, or model:<checkpoint>")
    p.add_argument("--split", choices=["all", *data.SPLITS], default="all")
    p.add_argument("--window-ms", dest="window_ms", type=float)
    p.add_argument("--hp-cutoff", dest="hp_cutoff", type=float)
    p.add_argument("--hp-order", dest="hp_order", type=int)
    p.add_argument("--ts-window-ms", dest="ts_window_ms", type=float)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="side-by-side table from report JSONs")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out-csv", dest="out_csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="print checkpoint config and size")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
