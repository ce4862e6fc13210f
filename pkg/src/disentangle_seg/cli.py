"""Command-line entry point: synth -> train -> eval -> adapt -> report.

Every subcommand writes a run manifest (resolved config, seeds, dataset
hashes, checkpoint ids, tool version) into its --out directory, sufficient
to reproduce the run bit-for-bit on one platform. Exit codes: 0 success,
2 usage error, 3 config schema violation, 1 anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3


def _cap_threads() -> None:
    cap = os.environ.get("DISENTANGLE_SEG_THREADS")
    if cap:
        import torch
        torch.set_num_threads(max(1, int(cap)))


def dataset_hash(ds) -> str:
    """Content hash over samples in iteration order."""
    h = hashlib.sha256()
    for s in ds:
        h.update(s.name.encode())
        h.update(s.image.tobytes())
        h.update(s.mask.tobytes())
    return h.hexdigest()[:16]


def write_manifest(out_dir: Path, command: str, **fields) -> None:
    manifest = {"tool_version": __version__, "command": command, **fields}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _load_domain_spec(arg: str):
    from .synth import CANONICAL_DOMAINS, DomainSpec
    if arg in CANONICAL_DOMAINS:
        return CANONICAL_DOMAINS[arg]
    return DomainSpec.from_dict(json.loads(Path(arg).read_text()))


def cmd_synth(args) -> int:
    from .synth import synth_domain_dataset
    dspec = _load_domain_spec(args.domain_spec)
    out = Path(args.out)
    ds = synth_domain_dataset(dspec, args.n, args.seed,
                              resolution=args.resolution, out=out)
    write_manifest(out, "synth", domain_spec=dspec.to_dict(), n=args.n,
                   seed=args.seed, resolution=args.resolution,
                   dataset_hash=dataset_hash(ds))
    print(f"wrote {len(ds)} samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .core import load_dataset
    from .trainer import TrainConfig, train
    cfg = TrainConfig.from_json(args.config)
    train_ds = load_dataset(args.train_dir, resolution=cfg.arch.resolution)
    val_ds = (load_dataset(args.val_dir, resolution=cfg.arch.resolution)
              if args.val_dir else None)
    out = Path(args.out)
    bundle, history = train(cfg, train_ds, val_ds, out_dir=out)
    write_manifest(out, "train", config=cfg.to_dict(),
                   train_dataset_hash=dataset_hash(train_ds),
                   val_dataset_hash=dataset_hash(val_ds) if val_ds else None,
                   steps=len(history), arch_hash=cfg.arch.hash(),
                   checkpoints=["checkpoint_best.pt", "checkpoint_final.pt"])
    print(f"trained {len(history)} steps; run directory: {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .core import load_dataset
    from .eval_adapt import evaluate
    from .networks import ModelBundle
    bundle = ModelBundle.load(args.checkpoint)
    ds = load_dataset(args.data_dir, resolution=bundle.arch.resolution)
    report = evaluate(bundle, ds, checkpoint_id=Path(args.checkpoint).name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / f"eval_{ds.domain_id}.json")
    write_manifest(out, "eval", checkpoint=str(args.checkpoint),
                   dataset_hash=dataset_hash(ds), mean_dsc=report.mean_dsc)
    print(report.summary())
    return EXIT_OK


def cmd_adapt(args) -> int:
    from .core import load_dataset
    from .eval_adapt import adapt
    from .networks import ModelBundle
    bundle = ModelBundle.load(args.checkpoint)
    ds = load_dataset(args.data_dir, resolution=bundle.arch.resolution)
    bundle, report = adapt(bundle, ds, fraction=args.fraction,
                           epochs=args.epochs, learning_rate=args.learning_rate,
                           seed=args.seed, checkpoint_id=Path(args.checkpoint).name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle.save(out / "checkpoint_adapted.pt")
    report.save(out / f"adapt_{ds.domain_id}.json")
    write_manifest(out, "adapt", checkpoint=str(args.checkpoint),
                   dataset_hash=dataset_hash(ds), fraction=args.fraction,
                   epochs=args.epochs, seed=args.seed, mean_dsc=report.mean_dsc)
    print(report.summary())
    return EXIT_OK


def cmd_report(args) -> int:
    import csv
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(args.run_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    metrics_path = run_dir / "metrics.csv"
    if metrics_path.exists():
        with open(metrics_path) as fh:
            rows = list(csv.DictReader(fh))
        steps = [int(r["step"]) for r in rows]
        fig, axes = plt.subplots(1, 3, figsize=(15, 4))
        axes[0].plot(steps, [float(r["seg_loss"]) for r in rows])
        axes[0].set_title("segmentation loss")
        for key in ("rec_11", "rec_22", "rec_12", "rec_21"):
            axes[1].plot(steps, [float(r[key]) for r in rows], label=key)
        axes[1].set_title("reconstruction losses")
        axes[1].legend()
        for key in ("mi_estimate_1", "mi_estimate_2"):
            axes[2].plot(steps, [float(r[key]) for r in rows], label=key)
        axes[2].set_title("MI estimates")
        axes[2].legend()
        for ax in axes:
            ax.set_xlabel("step")
        fig.tight_layout()
        fig.savefig(out / "loss_curves.png", dpi=120)
        plt.close(fig)

    reports = sorted(run_dir.glob("eval_*.json")) + sorted(run_dir.glob("adapt_*.json"))
    reports += [Path(p) for p in (args.eval_report or [])]
    if reports:
        names, means, stds = [], [], []
        for p in reports:
            d = json.loads(p.read_text())
            names.append(f"{d['domain_id']}\n{d['protocol']}")
            means.append(d["mean_dsc"])
            stds.append(d["std_dsc"])
        fig, ax = plt.subplots(figsize=(1.5 * len(names) + 2, 4))
        ax.bar(range(len(names)), means, yerr=stds, capsize=4)
        ax.set_xticks(range(len(names)), names)
        ax.set_ylabel("DSC")
        ax.set_ylim(0, 1)
        fig.tight_layout()
        fig.savefig(out / "dsc_bars.png", dpi=120)
        plt.close(fig)

    write_manifest(out, "report", run_dir=str(run_dir))
    print(f"report written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disentangle-seg",
        description="Disentangled-representation segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic domain dataset")
    p.add_argument("--domain-spec", required=True,
                   help="JSON file or canonical domain name (A/B/C/D)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=256)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--train-dir", required=True)
    p.add_argument("--val-dir", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("adapt", help="few-shot adaptation on a target domain")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("report", help="render metrics and DSC plots")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-report", action="append", default=None,
                   help="extra eval/adapt report JSONs to include")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    _cap_threads()
    try:
        return args.func(args)
    except ValueError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
