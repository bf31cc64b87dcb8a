"""Command line for batch feature export."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import ExportJob, export_features


def read_list(path) -> tuple[list, dict, dict]:
    """TSV rows: wav_path [label [attack_id]]; '#' lines are comments."""
    paths, labels, attacks = [], {}, {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        paths.append(cols[0])
        if len(cols) > 1:
            labels[cols[0]] = cols[1]
        if len(cols) > 2:
            attacks[cols[0]] = cols[2]
    return paths, labels, attacks


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sslfeat-export",
        description="Run a wav2vec 2.0 checkpoint over audio clips and write "
                    "FEAT1 feature files plus a manifest fragment.")
    parser.add_argument("wavs", nargs="*", help="audio files to export")
    parser.add_argument("--list", dest="list_file",
                        help="TSV of wav_path [label [attack_id]] rows")
    parser.add_argument("--checkpoint", required=True,
                        help="hub id or local checkpoint directory")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seconds", type=float, default=4.0)
    parser.add_argument("--layer", type=int, default=-1,
                        help="hidden-state index to export (default: final)")
    parser.add_argument("--label", default="bonafide")
    parser.add_argument("--attack", default="-")
    args = parser.parse_args(argv)

    paths = list(args.wavs)
    labels: dict = {}
    attacks: dict = {}
    if args.list_file:
        extra, labels, attacks = read_list(args.list_file)
        paths.extend(extra)
    if not paths:
        parser.error("no input audio given (positional wavs or --list)")

    job = ExportJob(audio_paths=paths, checkpoint=args.checkpoint, out_dir=args.out,
                    seconds=args.seconds, layer=args.layer, label=args.label,
                    attack_id=args.attack, labels=labels, attack_ids=attacks)
    results = export_features(job)
    failed = 0
    for r in results:
        if r.ok:
            print(f"{r.utt_id}: {r.frames} x {r.channels} -> {r.feat_path}")
        else:
            failed += 1
            print(f"{r.utt_id}: FAILED ({r.error})", file=sys.stderr)
    print(f"exported {len(results) - failed}/{len(results)} files to {args.out}")
    return 1 if failed else 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
