"""Command-line entry points.

Every subcommand accepts --config <path> (line-oriented key=value) and
repeated --set key=value overrides applied on top.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import forge, spectra, trainer


def _run_config(args, base: trainer.RunConfig | None = None) -> trainer.RunConfig:
    config = base or trainer.RunConfig()
    if getattr(args, "config", None):
        config = trainer.load_config(args.config, config)
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "corpus", None):
        overrides.append(f"corpus={args.corpus}")
    if getattr(args, "out", None) and not isinstance(args.out, bool):
        overrides.append(f"out={args.out}")
    if overrides:
        config = trainer.config_from_lines(overrides, config)
    return config


def _load_corpora(root: str, splits=("train", "val", "test")) -> dict[str, forge.Corpus]:
    corpora = {}
    for split in splits:
        directory = os.path.join(root, split)
        if os.path.isdir(directory):
            corpora[split] = forge.load_split(directory)
    if not corpora:
        raise SystemExit(f"no corpus splits found under {root!r}")
    return corpora


def cmd_params(args) -> int:
    config = _run_config(args)
    if args.preset == "all":
        presets = ("b32", "b16", "l14")
    elif args.preset:
        presets = (args.preset,)
    else:
        presets = (config.preset,)
    rows = trainer.params_report(presets=presets,
                                 mole_defaults=config.mole_config() if args.config else None)
    sys.stdout.write(trainer.params_report_tsv(rows))
    return 0


def cmd_forge(args) -> int:
    config = _run_config(args)
    out = args.out or config.corpus
    if not out:
        raise SystemExit("forge needs an output root (--out or config corpus=)")
    spec = forge.SyntheticSpec(image_size=args.image_size)
    train_gens = [forge.parse_generator(t) for t in args.train_generators.split(",")]
    test_gens = [forge.parse_generator(t) for t in args.test_generators.split(",")]
    seed = args.seed if args.seed is not None else config.seed
    paths = forge.build_corpus(out, spec, train_gens, test_gens,
                               args.train_size, args.val_size, args.test_size, seed)
    for split, path in paths.items():
        print(f"{split}\t{path}")
    return 0


def cmd_train(args) -> int:
    config = _run_config(args)
    if not config.corpus:
        raise SystemExit("train needs a corpus (config key corpus= or --corpus)")
    corpora = _load_corpora(config.corpus, splits=("train",))
    checkpoint, log = trainer.train(config, corpora["train"])
    out = config.out or "run"
    checkpoint.save(out)
    with open(os.path.join(out, "train_log.csv"), "w") as f:
        f.write(trainer.log_to_csv(log))
    if log:
        last = log[-1]
        print(f"step {last['step']}: bce={last['bce']:.4f} loss={last['loss']:.4f}")
    print(f"checkpoint saved to {out}")
    return 0


def _parse_perturbation(args):
    if getattr(args, "blur", None) is not None:
        return ("blur", args.blur)
    if getattr(args, "jpeg", None) is not None:
        return ("jpeg", args.jpeg)
    return None


def cmd_eval(args) -> int:
    checkpoint = trainer.Checkpoint.load(args.checkpoint)
    merged = _run_config(args, base=checkpoint.config)
    root = merged.corpus
    if not root:
        raise SystemExit("eval needs a corpus root (--corpus)")
    corpora = _load_corpora(root)
    eval_corpus = corpora.get(args.split)
    if eval_corpus is None:
        raise SystemExit(f"split {args.split!r} not found under {root!r}")
    val = corpora.get("val")
    if args.sweep:
        rows = trainer.robustness_sweep(checkpoint, eval_corpus, val)
        text = trainer.sweep_to_tsv(rows)
    else:
        report = trainer.evaluate(checkpoint, eval_corpus, val,
                                  perturbation=_parse_perturbation(args),
                                  threshold=args.threshold)
        text = report.to_tsv()
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    return 0


def cmd_ablate(args) -> int:
    config = _run_config(args)
    corpora = None
    if not args.dry_run:
        if not config.corpus:
            raise SystemExit("ablate needs a corpus unless --dry-run")
        corpora = _load_corpora(config.corpus)
    rows = trainer.ablate(config, args.axis, corpora, dry_run=args.dry_run)
    text = trainer.ablation_to_tsv(rows)
    sys.stdout.write(text)
    if args.table_out:
        with open(args.table_out, "w") as f:
            f.write(text)
    return 0


def cmd_spectra(args) -> int:
    manifest = args.manifest
    if not manifest:
        config = _run_config(args)
        if not config.corpus:
            raise SystemExit("spectra needs --manifest or a config with corpus=")
        manifest = os.path.join(config.corpus, "test", "manifest.tsv")
    directory = os.path.dirname(manifest)
    corpus = forge.load_split(directory)
    if args.group_by != "generator_id":
        raise SystemExit("only --group-by generator_id is supported")
    groups: dict[str, list] = {}
    for i, item in enumerate(corpus.items):
        groups.setdefault(item.generator_id, []).append(corpus.image(i))
    os.makedirs(args.out, exist_ok=True)
    for gid, images in sorted(groups.items()):
        spectrum = spectra.avg_fft_spectrum(images, filter_mode=args.filter)
        pgm, csv = spectra.export_spectrum(spectrum, os.path.join(args.out, gid))
        print(f"{gid}\t{len(images)}\t{pgm}\t{csv}")
    return 0


def cmd_export_features(args) -> int:
    checkpoint = trainer.Checkpoint.load(args.checkpoint)
    merged = _run_config(args, base=checkpoint.config)
    corpora = _load_corpora(merged.corpus, splits=(args.split,))
    blocks = [int(b) for b in args.blocks.split(",")]
    n = trainer.export_features(checkpoint, corpora[args.split], blocks, args.out)
    print(f"wrote {n} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molex",
                                     description="mixture-of-low-rank-experts workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="line-oriented key=value run config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.set_defaults(fn=fn)
        return p

    p = command("params", cmd_params,
                help="trainable-parameter percentages per adapted-block set")
    p.add_argument("--preset", default="all", choices=("all", "b32", "b16", "l14"))

    p = command("forge", cmd_forge, help="build a synthetic train/val/test corpus")
    p.add_argument("--out")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--train-size", type=int, default=4000)
    p.add_argument("--val-size", type=int, default=512)
    p.add_argument("--test-size", type=int, default=1024)
    p.add_argument("--train-generators", default="grid4,lowfreq")
    p.add_argument("--test-generators", default="checker2,ring")
    p.add_argument("--seed", type=int)
    p.set_defaults(corpus=None)

    p = command("train", cmd_train, help="fine-tune experts/routers/head on a corpus")
    p.add_argument("--corpus")
    p.add_argument("--out")

    p = command("ablate", cmd_ablate, help="run one published ablation grid")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--axis", required=True,
                   choices=("blocks", "placement", "ranks", "data-size"))
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--table-out")

    p = command("eval", cmd_eval, help="evaluate a checkpoint, optionally perturbed")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus")
    p.add_argument("--split", default="test")
    p.add_argument("--blur", type=float)
    p.add_argument("--jpeg", type=int)
    p.add_argument("--sweep", action="store_true",
                   help="run all 11 blur/jpeg perturbation levels")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out")
    p.set_defaults(out=None)

    p = command("spectra", cmd_spectra, help="average FFT spectra per generator group")
    p.add_argument("--manifest")
    p.add_argument("--group-by", default="generator_id")
    p.add_argument("--out", required=True)
    p.add_argument("--filter", default="median", choices=("median", "gaussian"))

    p = command("export-features", cmd_export_features,
                help="per-expert class-token features as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus")
    p.add_argument("--split", default="val")
    p.add_argument("--blocks", required=True)
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
