"""Command line: synth, train, eval, explain, gradcheck.

Configuration comes from an optional `key = value` file (# comments allowed)
with command-line flags taking precedence; the effective configuration is
echoed at startup so any run can be reproduced from its log. All randomness
derives from the single --seed through named substreams.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import explain as ex
from . import featio
from . import metrics as mt
from . import train as tr
from .errors import TcadetError, UsageError
from .gradsuite import TOLERANCE, run_suite
from .model import model_forward
from .ndcore import EVAL

SYNTH_KEYS = {
    "n_train": int,
    "n_dev": int,
    "n_eval": int,
    "frames": int,
    "c_in": int,
    "window_len": int,
    "noise_scale": float,
}

SYNTH_DEFAULTS = {
    "n_train": 600,
    "n_dev": 200,
    "n_eval": 200,
    "frames": 50,
    "c_in": 24,
    "window_len": 12,
    "noise_scale": 0.5,
}


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _parse_weights(text) -> tuple:
    if isinstance(text, tuple):
        return text
    return tuple(float(p) for p in str(text).split(",") if p.strip())


def _train_key_types() -> dict:
    out = {}
    for f in fields(tr.TrainConfig):
        if f.name == "wce_weights":
            out[f.name] = _parse_weights
        elif f.type == "bool" or isinstance(f.default, bool):
            out[f.name] = _parse_bool
        elif isinstance(f.default, int) and not isinstance(f.default, bool):
            out[f.name] = int
        elif isinstance(f.default, float):
            out[f.name] = float
        else:
            out[f.name] = str
    return out


TRAIN_KEYS = _train_key_types()
KNOWN_KEYS = {**TRAIN_KEYS, **SYNTH_KEYS}


def load_config_file(path) -> dict:
    """Parse `key = value` lines; unknown keys are usage errors."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = KNOWN_KEYS[key](raw.strip())
        except (ValueError, UsageError) as err:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {err}") from err
    return values


def effective_config(args, keys: dict) -> dict:
    """defaults < config file < command-line flags, echoed for the run log."""
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = keys[key](flag) if not isinstance(flag, bool) else flag
    return merged


def echo(config: dict, header: str) -> None:
    print(f"# effective {header} configuration")
    for key in sorted(config):
        print(f"config: {key} = {config[key]}")


def build_train_config(merged: dict) -> tr.TrainConfig:
    kwargs = {k: v for k, v in merged.items() if k in TRAIN_KEYS}
    return tr.TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    merged = {**SYNTH_DEFAULTS, "seed": 42}
    merged.update(effective_config(args, {**SYNTH_KEYS, "seed": int}))
    echo(merged, "synth")
    spec = featio.SynthSpec(
        n_per_class=1,
        t=merged["frames"],
        c=merged["c_in"],
        window_len=merged["window_len"],
        noise_scale=merged["noise_scale"],
        seed=merged["seed"],
    )
    out_dir = Path(args.out)
    for split, total in (("train", merged["n_train"]), ("dev", merged["n_dev"]),
                         ("eval", merged["n_eval"])):
        info = featio.synthesize_corpus(spec, out_dir, split=split,
                                        counts=featio.spread_total(total))
        print(f"wrote {len(info.entries)} utterances -> {info.manifest_path}")
    return 0


def cmd_train(args) -> int:
    merged = effective_config(args, TRAIN_KEYS)
    config = build_train_config(merged)
    echo({f.name: getattr(config, f.name) for f in fields(tr.TrainConfig)}, "train")
    data = Path(args.data)
    train_manifest = data / "manifest_train.tsv"
    dev_manifest = data / "manifest_dev.tsv"
    for p in (train_manifest, dev_manifest):
        if not p.exists():
            raise UsageError(f"missing manifest {p}")

    def report(epoch, train_loss, dev_loss):
        if epoch == 0:
            print(f"epoch {epoch:3d}  dev loss {dev_loss:.6f} (untrained)")
        else:
            print(f"epoch {epoch:3d}  train loss {train_loss:.6f}  dev loss {dev_loss:.6f}")

    ckpt = tr.fit(train_manifest, dev_manifest, config, on_epoch=report)
    tr.save_checkpoint(ckpt, args.checkpoint)
    print(f"best epoch {ckpt.epoch} (dev loss {ckpt.best_dev_loss:.6f}) -> {args.checkpoint}")
    return 0


def _score_records(ckpt: tr.Checkpoint, manifest_path) -> list[mt.ScoreRecord]:
    config = ckpt.config
    dataset = tr.load_dataset(manifest_path, config)
    params = ckpt.build()
    records = []
    for row in tr.evaluate(dataset, params, config):
        score = float(row.probs[list(config.class_names).index("bonafide")])
        key = "bonafide" if row.label == "bonafide" else "spoof"
        records.append(mt.ScoreRecord(row.utt_id, row.attack_id, key, score))
    return records


def cmd_eval(args) -> int:
    ckpt = tr.load_checkpoint(args.checkpoint)
    echo({"checkpoint": args.checkpoint, "manifest": args.manifest,
          "scores": args.scores, "mode": ckpt.config.mode,
          "seed": ckpt.config.seed}, "eval")
    records = _score_records(ckpt, args.manifest)
    mt.write_scores(records, args.scores)
    print(f"wrote {len(records)} scores -> {args.scores}")

    costs = mt.load_costs(args.tdcf_config)
    eer, thr = mt.compute_eer(records)
    tdcf, _ = mt.compute_min_tdcf(records, costs)
    table, pooled = mt.breakdown_by_attack(records)
    print(f"pooled EER      : {100 * eer:.3f}% (threshold {thr:.6f})")
    print(f"min t-DCF (norm): {tdcf:.5f} (c1={costs.c1}, c2={costs.c2})")
    print("per-attack EER:")
    for attack in sorted(table):
        print(f"  {attack:>8s}  {100 * table[attack]:7.3f}%")
    print(f"  {'pooled':>8s}  {100 * pooled:7.3f}%")
    return 0


def cmd_explain(args) -> int:
    ckpt = tr.load_checkpoint(args.checkpoint)
    config = ckpt.config
    if args.features:
        seq = featio.read_features(args.features)
    else:
        if not (args.manifest and args.utt):
            raise UsageError("explain needs --features or both --manifest and --utt")
        entries = featio.load_manifest(args.manifest)
        match = [e for e in entries if e.utt_id == args.utt]
        if not match:
            raise UsageError(f"utterance {args.utt!r} not in {args.manifest}")
        seq = featio.read_features(Path(args.manifest).parent / match[0].path,
                                   utt_id=args.utt)
    echo({"checkpoint": args.checkpoint, "utt": seq.utt_id,
          "out_prefix": args.out_prefix}, "explain")
    seq = featio.fix_length(seq, config.t_target)
    params = ckpt.build()
    out = model_forward(seq, params, EVAL)
    tca = ex.extract_tca_map(out.embedding.data, out.gate.data, out.cav_logits.data,
                             config.class_names, seq.utt_id,
                             has_utterance_row=config.use_utterance)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    spec = ex.RenderSpec(scale_x=args.scale_x, scale_y=args.scale_y)
    ex.export_csv(tca, prefix.with_suffix(".csv"))
    ex.export_ppm(tca, spec, prefix.with_suffix(".ppm"))
    print(ex.render_ascii(tca, spec), end="")
    probs = np.exp(out.tca_logits.data - out.tca_logits.data.max())
    probs /= probs.sum()
    verdict = config.class_names[int(np.argmax(probs))]
    print("scores : " + "  ".join(
        f"{n}={p:.4f}" for n, p in zip(config.class_names, probs)))
    print(f"verdict: {verdict}")
    print(f"wrote {prefix.with_suffix('.csv')} and {prefix.with_suffix('.ppm')}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(args.seed)
    worst = 0.0
    for name, err in results:
        status = "PASS" if err <= TOLERANCE else "FAIL"
        print(f"{status}  {name:24s} max rel err {err:.3e}")
        worst = max(worst, err)
    print(f"max relative error: {worst:.3e} (tolerance {TOLERANCE:.0e})")
    return 0 if worst <= TOLERANCE else 1


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tcadet",
        description="Interpretable audio spoofing detection head: synthesize a "
                    "labeled corpus, train, score, and visualize per-frame "
                    "class activations.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a synthetic corpus with plant masks")
    synth.add_argument("--out", required=True, help="output corpus directory")
    synth.add_argument("--config", help="key = value config file")
    synth.add_argument("--seed", type=int)
    for key, typ in SYNTH_KEYS.items():
        synth.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ)
    synth.set_defaults(func=cmd_synth)

    train = sub.add_parser("train", help="fit the head and save the best checkpoint")
    train.add_argument("--data", required=True,
                       help="corpus directory holding manifest_train.tsv / manifest_dev.tsv")
    train.add_argument("--checkpoint", required=True, help="output checkpoint path")
    train.add_argument("--config", help="key = value config file")
    for key, typ in TRAIN_KEYS.items():
        flag = f"--{key.replace('_', '-')}"
        if typ is _parse_bool:
            train.add_argument(flag, dest=key, type=_parse_bool, metavar="BOOL")
        elif typ is _parse_weights:
            train.add_argument(flag, dest=key, type=_parse_weights, metavar="W1,W2,..")
        else:
            train.add_argument(flag, dest=key, type=typ)
    train.set_defaults(func=cmd_train)

    evalp = sub.add_parser("eval", help="score a manifest and print EER / min t-DCF")
    evalp.add_argument("--checkpoint", required=True)
    evalp.add_argument("--manifest", required=True)
    evalp.add_argument("--scores", required=True, help="output score file")
    evalp.add_argument("--tdcf-config", dest="tdcf_config",
                       help="cost file (default: packaged ASVspoof2019 model)")
    evalp.set_defaults(func=cmd_eval)

    explain = sub.add_parser("explain", help="export the activation map of one utterance")
    explain.add_argument("--checkpoint", required=True)
    explain.add_argument("--features", help="FEAT1 file to explain")
    explain.add_argument("--manifest", help="manifest to look the utterance up in")
    explain.add_argument("--utt", help="utterance id within --manifest")
    explain.add_argument("--out-prefix", dest="out_prefix", required=True)
    explain.add_argument("--scale-x", dest="scale_x", type=int, default=4)
    explain.add_argument("--scale-y", dest="scale_y", type=int, default=12)
    explain.set_defaults(func=cmd_explain)

    grad = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    grad.add_argument("--seed", type=int, default=42)
    grad.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except TcadetError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
