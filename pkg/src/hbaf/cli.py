"""Command-line surface: synth / train / eval / gradcheck / ablate.

Every command resolves its parameters from built-in defaults, then an
optional config file of flat dotted keys (``train.learning_rate = 0.0001``),
then explicit flags; the fully resolved config is echoed to stdout and
written to ``<out>/resolved.cfg`` so any run can be reproduced bit-exactly
by passing that file back via ``--config``.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ABLATION_FLAGS, ConfigError, ModelConfig, TrainConfig
from .data import (
    DataError,
    SynthSpec,
    dataset_checksum,
    generate_synthetic,
    load_manifest,
    load_split,
    write_dataset,
)
from .model import HbafModel
from .params import CheckpointError, ParameterStore
from .training import DivergenceError, ablation_study, evaluate, grad_check, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4

# Per-command parameter registry: name -> (python type, default).
_SCHEMAS: dict[str, dict[str, tuple]] = {
    "synth": {
        "out": (str, None),
        "dialogues": (int, 8),
        "len": (int, 6),
        "classes": (int, 4),
        "d_a": (int, 16),
        "d_text": (int, 24),
        "mode": (str, "agreement"),
        "noise": (float, 0.1),
        "seed": (int, 0),
    },
    "train": {
        "data": (str, None),
        "out": (str, None),
        "width": (int, 512),
        "learning_rate": (float, 1e-4),
        "batch_size": (int, 8),
        "l2_weight": (float, 3e-4),
        "mu": (float, 0.2),
        "tau": (float, 0.1),
        "patience": (int, 15),
        "max_epochs": (int, 100),
        "seed": (int, 0),
        "precision": (str, "float64"),
        "ablate": (str, ""),
        "standardize": (bool, False),
        "decoupled_l2": (bool, False),
    },
    "eval": {
        "checkpoint": (str, None),
        "data": (str, None),
        "split": (str, "test"),
        "out": (str, None),
    },
    "gradcheck": {
        "tolerance": (float, 1e-4),
        "width": (int, 8),
        "seed": (int, 0),
        "mu": (float, 0.2),
        "corrupt": (str, ""),
        "tensors": (str, ""),  # comma list restricting the sweep
    },
    "ablate": {
        "data": (str, None),
        "out": (str, None),
        "flags": (str, "no_acn,no_fusion,no_contrastive"),
        "seeds": (int, 3),
        "base_seed": (int, 0),
        "width": (int, 32),
        "learning_rate": (float, 1e-4),
        "batch_size": (int, 8),
        "l2_weight": (float, 3e-4),
        "mu": (float, 0.2),
        "patience": (int, 15),
        "max_epochs": (int, 60),
        "precision": (str, "float64"),
    },
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _parse_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    for key in values:
        if "." not in key:
            raise CliError(f"{path}: key {key!r} is not of the form command.parameter")
        cmd, param = key.split(".", 1)
        if cmd not in _SCHEMAS:
            raise CliError(f"{path}: unknown command prefix in key {key!r}")
        if param not in _SCHEMAS[cmd]:
            raise CliError(f"{path}: unknown key {key!r} (valid: {sorted(cmd + '.' + k for k in _SCHEMAS[cmd])})")
    return values


def _coerce(command: str, param: str, raw: str):
    typ, _ = _SCHEMAS[command][param]
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except (TypeError, ValueError) as e:
        raise CliError(f"bad value for {command}.{param}: {raw!r}") from e


def _resolve(command: str, args: argparse.Namespace) -> dict:
    resolved = {k: d for k, (_, d) in _SCHEMAS[command].items()}
    if getattr(args, "config", None):
        file_values = _parse_config_file(args.config)
        for key, raw in file_values.items():
            cmd, param = key.split(".", 1)
            if cmd == command:
                resolved[param] = _coerce(command, param, raw)
    for param in _SCHEMAS[command]:
        v = getattr(args, param, None)
        if v is not None:
            resolved[param] = v
    return resolved


def _default_out(command: str) -> str:
    root = os.environ.get("HBAF_OUTPUT_ROOT", "hbaf-out")
    return str(Path(root) / command)


def _echo_and_save(command: str, resolved: dict, out_dir: Path | None) -> None:
    lines = [f"{command}.{k} = {resolved[k]}" for k in sorted(resolved)]
    print("resolved config:")
    for line in lines:
        print("  " + line)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved.cfg").write_text("\n".join(lines) + "\n")


def _model_config_for(manifest, width: int, precision: str, tau: float, ablate_flags: tuple[str, ...]) -> ModelConfig:
    cfg = ModelConfig.with_width(
        width,
        audio_dim=manifest.audio_dim,
        text_dim=manifest.text_dim,
        n_classes=manifest.label_set.C,
        tau=tau,
        dtype=precision,
    )
    return cfg.ablated(ablate_flags)


def _parse_flag_list(raw: str) -> tuple[str, ...]:
    flags = tuple(f.strip() for f in raw.split(",") if f.strip())
    unknown = [f for f in flags if f not in ABLATION_FLAGS]
    if unknown:
        raise CliError(f"unknown ablation flags: {unknown} (valid: {list(ABLATION_FLAGS)})")
    return flags


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _resolve("synth", args)
    out = Path(cfg["out"] or _default_out("synth"))
    cfg["out"] = str(out)
    _echo_and_save("synth", cfg, out)
    try:
        spec = SynthSpec(
            n_dialogues=cfg["dialogues"],
            utterances_per_dialogue=cfg["len"],
            C=cfg["classes"],
            D_a=cfg["d_a"],
            D_text=cfg["d_text"],
            signal_mode=cfg["mode"],
            noise_std=cfg["noise"],
            seed=cfg["seed"],
        )
    except DataError as e:
        raise CliError(str(e))
    manifest, records = generate_synthetic(spec)
    write_dataset(out, manifest, records)
    checksum = dataset_checksum(out)
    print(f"dataset: {manifest.dataset_name}")
    for split in ("train", "val", "test"):
        n_dlg = len(manifest.splits.get(split, ()))
        print(f"  {split}: {n_dlg} dialogues, {manifest.utterance_counts.get(split, 0)} utterances")
    total = sum(manifest.utterance_counts.values())
    print(f"  total utterances: {total}")
    print(f"checksum: {checksum}")
    return EXIT_OK


def _write_eval(out_dir: Path, name: str, report) -> None:
    (out_dir / f"{name}.txt").write_text(report.render() + "\n")
    (out_dir / f"{name}.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def cmd_train(args) -> int:
    cfg = _resolve("train", args)
    if not cfg["data"]:
        raise CliError("train: --data (manifest root) is required")
    out = Path(cfg["out"] or _default_out("train"))
    cfg["out"] = str(out)
    _echo_and_save("train", cfg, out)
    manifest = load_manifest(cfg["data"])
    flags = _parse_flag_list(cfg["ablate"])
    model_cfg = _model_config_for(manifest, cfg["width"], cfg["precision"], cfg["tau"], flags)
    train_cfg = TrainConfig(
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        l2_weight=cfg["l2_weight"],
        patience=cfg["patience"],
        mu=cfg["mu"],
        max_epochs=cfg["max_epochs"],
        seed=cfg["seed"],
        decoupled_l2=cfg["decoupled_l2"],
        standardize=cfg["standardize"],
    )
    result = train(manifest, train_cfg, model_cfg)
    with (out / "history.jsonl").open("w") as fh:
        for rec in result.history:
            fh.write(json.dumps({"ablate": list(flags), **rec}) + "\n")
    checksum = result.model.store.save(out / "checkpoint.hbck")
    val_report = evaluate(result.model, load_split(manifest, "val"), manifest.label_set.names, train_cfg.batch_size)
    _write_eval(out, "eval_val", val_report)
    print(f"trained {result.stopped_epoch} epochs; best epoch {result.best_epoch} (val total loss {result.best_val_loss:.6f})")
    print(f"checkpoint: {out / 'checkpoint.hbck'} (sha256 {checksum})")
    print(val_report.render())
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve("eval", args)
    if not cfg["checkpoint"] or not cfg["data"]:
        raise CliError("eval: --checkpoint and --data are required")
    out = Path(cfg["out"] or _default_out("eval"))
    cfg["out"] = str(out)
    _echo_and_save("eval", cfg, out)
    manifest = load_manifest(cfg["data"])
    ckpt_path = Path(cfg["checkpoint"])
    sibling = ckpt_path.parent / "resolved.cfg"
    if not sibling.exists():
        raise CliError(f"cannot find training config next to checkpoint: {sibling}")
    train_keys = {k.split(".", 1)[1]: v for k, v in _parse_config_file(str(sibling)).items() if k.startswith("train.")}
    if not train_keys:
        raise CliError(f"{sibling} holds no train.* keys; cannot reconstruct the model")
    width = _coerce("train", "width", train_keys["width"])
    precision = _coerce("train", "precision", train_keys["precision"])
    tau = _coerce("train", "tau", train_keys["tau"])
    flags = _parse_flag_list(train_keys.get("ablate", ""))
    model_cfg = _model_config_for(manifest, width, precision, tau, flags)
    model = HbafModel(model_cfg, seed=0)
    try:
        model.store.load(ckpt_path)
    except CheckpointError as e:
        raise CliError(f"checkpoint does not match manifest dims/architecture: {e}")
    records = load_split(manifest, cfg["split"])
    if not records:
        raise CliError(f"split {cfg['split']!r} is empty")
    report = evaluate(model, records, manifest.label_set.names)
    _write_eval(out, f"eval_{cfg['split']}", report)
    print(report.render())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _resolve("gradcheck", args)
    _echo_and_save("gradcheck", cfg, None)
    subset = tuple(t.strip() for t in cfg["tensors"].split(",") if t.strip()) or None
    try:
        report = grad_check(
            tolerance=cfg["tolerance"],
            width=cfg["width"],
            mu=cfg["mu"],
            seed=cfg["seed"],
            corrupt=cfg["corrupt"] or None,
            tensors=subset,
        )
    except KeyError as e:
        raise CliError(str(e))
    print(report.render())
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_ablate(args) -> int:
    cfg = _resolve("ablate", args)
    if not cfg["data"]:
        raise CliError("ablate: --data (manifest root) is required")
    out = Path(cfg["out"] or _default_out("ablate"))
    cfg["out"] = str(out)
    _echo_and_save("ablate", cfg, out)
    manifest = load_manifest(cfg["data"])
    flags = _parse_flag_list(cfg["flags"])
    if not flags:
        raise CliError("ablate: at least one ablation flag is required")
    model_cfg = _model_config_for(manifest, cfg["width"], cfg["precision"], 0.1, ())
    train_cfg = TrainConfig(
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        l2_weight=cfg["l2_weight"],
        patience=cfg["patience"],
        mu=cfg["mu"],
        max_epochs=cfg["max_epochs"],
        seed=cfg["base_seed"],
    )
    seeds = [cfg["base_seed"] + i for i in range(cfg["seeds"])]
    results = ablation_study(manifest, train_cfg, model_cfg, flags, seeds)
    (out / "ablate.json").write_text(json.dumps(results, indent=2) + "\n")
    print(f"{'variant':<18} {'mean F1':>10} {'sd':>8}   runs")
    for name, r in results.items():
        runs = " ".join(f"{x:.4f}" for x in r["runs"])
        print(f"{name:<18} {r['mean_f1']:>10.4f} {r['sd_f1']:>8.4f}   {runs}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _add_schema_args(parser: argparse.ArgumentParser, command: str) -> None:
    parser.add_argument("--config", help="config file of flat dotted keys")
    for name, (typ, default) in _SCHEMAS[command].items():
        flag = "--" + name.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, action="store_const", const=True, default=None, help=f"default: {default}")
        else:
            parser.add_argument(flag, type=typ, default=None, help=f"default: {default}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbaf", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "synth": ("generate a synthetic feature dataset", cmd_synth),
        "train": ("train on a feature dataset", cmd_train),
        "eval": ("evaluate a checkpoint on a split", cmd_eval),
        "gradcheck": ("finite-difference check of all gradients", cmd_gradcheck),
        "ablate": ("train full model and single-ablation variants", cmd_ablate),
    }
    for name, (help_text, fn) in handlers.items():
        p = sub.add_parser(name, help=help_text)
        _add_schema_args(p, name)
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError, DataError, CheckpointError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
