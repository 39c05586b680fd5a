"""Command-line front end.

Subcommands: gen-data, pretrain, train, evaluate, robustness, gradcheck.
Every flag can also be set through an environment variable named
``ENERGYRANK_<FLAG>`` (upper case, dashes as underscores, e.g.
``ENERGYRANK_SEED=3``); an explicit flag wins over the environment.

Exit codes: 0 success, 1 invalid input or usage, 2 file-system error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, datagen, dataset, diagnostics, msdae, pipeline
from .errors import EnergyRankError, ValidationError
from .evaluator import RunSummary, t_test, write_grid
from .featurizer import encode_intents
from .trainer import TrainConfig

ENV_PREFIX = "ENERGYRANK_"
log = logging.getLogger("energyrank")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _truthy(value: str) -> bool:
    return value.strip().lower() in ("1", "true", "yes", "on")


def _apply_env(parser: argparse.ArgumentParser) -> None:
    """Turn ENERGYRANK_* variables into defaults so explicit flags still win."""
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        raw = os.environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = _truthy(raw)
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (TypeError, ValueError):
            raise UsageError(f"{ENV_PREFIX}{action.dest.upper()}={raw!r} is not a valid value") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{ENV_PREFIX}{action.dest.upper()}={raw!r}: choose from {sorted(action.choices)}")
        action.default = value
        action.required = False


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="energyrank", description="Energy-based intent ranking toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write synthetic train/val/test and unlabeled P/Q sets")
    g.add_argument("--out", type=Path, default=Path("data"))
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--scale", type=float, default=1.0,
                   help="fraction of the full sizes (24,000 labeled, 2x80,000 unlabeled)")
    g.add_argument("--rho", type=float, default=0.8, help="information-state informativeness in [0, 1]")
    g.add_argument("--tau", type=float, default=1.3, help="score temperature of the shifted set Q")
    g.add_argument("--delta", type=float, default=0.25, help="score offset of the shifted set Q")
    g.add_argument("--token-drift", type=float, default=0.2, help="synonym substitution rate in Q")
    g.add_argument("--no-unlabeled", action="store_true", help="skip writing p.jsonl and q.jsonl")

    pt = sub.add_parser("pretrain", help="pretrain the multisource denoising autoencoder")
    pt.add_argument("--data", type=Path, required=True, help="JSONL requests whose intents are used")
    pt.add_argument("--out", type=Path, required=True, help="autoencoder checkpoint to write")
    pt.add_argument("--metrics", type=Path, help="per-epoch loss records (JSONL)")
    pt.add_argument("--epochs", type=_positive_int, default=20)
    _common_optim(pt)
    pt.add_argument("--no-affine-noise", action="store_true", help="skip the affine corruption step")

    t = sub.add_parser("train", help="train a ranker (optionally over several seeds)")
    t.add_argument("--train", type=Path, required=True)
    t.add_argument("--val", type=Path, required=True)
    t.add_argument("--test", type=Path, help="labeled set used for the reported error rate")
    t.add_argument("--out", type=Path, help="checkpoint path (with --runs N, one file per run)")
    t.add_argument("--metrics", type=Path, help="per-epoch records (JSONL)")
    t.add_argument("--model", choices=["energyrank", "logreg"], default="energyrank")
    t.add_argument("--loss", choices=["pairwise", "listwise"], default="pairwise")
    t.add_argument("--phi", choices=["lf", "hf", "ef"], default="lf")
    t.add_argument("--no-affine-noise", action="store_true")
    t.add_argument("--finetune-dae", action="store_true")
    t.add_argument("--dae", type=Path, help="pretrained autoencoder checkpoint (skips pretraining)")
    t.add_argument("--dae-epochs", type=int, default=20)
    t.add_argument("--runs", type=_positive_int, default=1)
    t.add_argument("--epochs", type=_positive_int, default=150)
    t.add_argument("--patience", type=_positive_int, default=15)
    t.add_argument("--lr-decay", type=float, default=0.95)
    _common_optim(t)
    t.add_argument("--name", help="configuration name used in summaries (default: derived from flags)")
    t.add_argument("--summary", type=Path, help="write per-run error rates as JSON")
    t.add_argument("--compare", type=Path, action="append", default=[],
                   help="summary JSON of another configuration to T-test against (repeatable)")

    e = sub.add_parser("evaluate", help="error rate of a checkpoint on a labeled set")
    e.add_argument("--model", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)

    r = sub.add_parser("robustness", help="relative-entropy robustness between two unlabeled sets")
    r.add_argument("--model", type=Path, required=True)
    r.add_argument("--p", type=Path, required=True)
    r.add_argument("--q", type=Path, required=True)
    r.add_argument("--grid-prefix", type=Path, help="write <prefix>.p.txt and <prefix>.q.txt density grids")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--seeds", type=_positive_int, default=1, help="number of consecutive seeds")

    for parser in (p, g, pt, t, e, r, gc):
        _apply_env(parser)
    return p


def _common_optim(parser):
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--batch-size", type=_positive_int, default=32)
    parser.add_argument("--lr", type=float, default=1e-3)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if not 0.0 <= args.rho <= 1.0:
        raise ValidationError("--rho must be in [0, 1]")
    if args.scale <= 0:
        raise ValidationError("--scale must be positive")
    cfg = datagen.GenConfig(rho=args.rho, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, records in datagen.gen_labeled(cfg, scale=args.scale).items():
        dataset.write_jsonl(records, args.out / f"{name}.jsonl")
        print(f"{name}: {len(records)} requests")
    if not args.no_unlabeled:
        shifted = cfg.shifted(tau=args.tau, delta=args.delta, token_drift=args.token_drift)
        p, q = datagen.gen_unlabeled_pair(cfg, shifted, scale=args.scale)
        dataset.write_jsonl(p, args.out / "p.jsonl")
        dataset.write_jsonl(q, args.out / "q.jsonl")
        print(f"p: {len(p)} requests\nq: {len(q)} requests")
    return 0


def _corruption(no_affine: bool) -> msdae.CorruptionConfig:
    base = msdae.CorruptionConfig()
    if no_affine:
        return msdae.CorruptionConfig(1.0, 1.0, 0.0, base.mask_prob)
    return base


def _write_jsonl(path: Path | None, rows) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def cmd_pretrain(args) -> int:
    records = dataset.read_jsonl(args.data)
    if not records:
        raise ValidationError(f"{args.data} holds no requests")
    stacked = np.concatenate([encode_intents(r.intents) for r in records])
    params = msdae.init_params(np.random.default_rng([args.seed, 1]))
    cfg = _corruption(args.no_affine_noise)
    res = msdae.pretrain(stacked, params, cfg, epochs=args.epochs, batch_size=args.batch_size,
                         base_lr=args.lr, seed=args.seed)
    _write_jsonl(args.metrics, ({"epoch": i, "loss": v} for i, v in enumerate(res.loss_curve)))
    meta = {"kind": "msdae", "seed": args.seed, "epochs": args.epochs, "corruption": cfg.to_dict(),
            "loss_curve": res.loss_curve}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(args.out, {k: p.data for k, p in res.params.items()}, meta)
    print(f"dae loss {res.loss_curve[0]:.4f} -> {res.loss_curve[-1]:.4f}")
    return 0


def _load_dae(path: Path):
    blocks, meta = checkpoint.load(path)
    if meta.get("kind") != "msdae":
        raise ValidationError(f"{path} is not an autoencoder checkpoint")
    from . import autodiff as ad
    return {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in blocks.items()}


def config_name(args) -> str:
    if args.name:
        return args.name
    if args.model == "logreg":
        return f"logreg-{args.loss}"
    name = f"energyrank-{args.phi}-{args.loss}"
    if args.no_affine_noise:
        name += "-na"
    if args.finetune_dae:
        name += "-ft"
    return name


def _run_path(out: Path, run: int, runs: int) -> Path:
    return out if runs == 1 else out.with_name(f"{out.stem}.run{run}{out.suffix}")


def cmd_train(args) -> int:
    train = dataset.read_jsonl(args.train, labeled=True)
    val = dataset.read_jsonl(args.val, labeled=True)
    test = dataset.read_jsonl(args.test, labeled=True) if args.test else None
    if not 0 < args.lr_decay <= 1:
        raise ValidationError("--lr-decay must be in (0, 1]")
    name = config_name(args)
    metrics, errors = [], []
    for run in range(args.runs):
        seed = args.seed + run
        tcfg = TrainConfig(batch_size=args.batch_size, max_epochs=args.epochs, base_lr=args.lr,
                           lr_decay=args.lr_decay, seed=seed, loss=args.loss, phi=args.phi,
                           patience=args.patience)
        pcfg = pipeline.PipelineConfig(train=tcfg, corruption=_corruption(args.no_affine_noise),
                                       dae_epochs=args.dae_epochs, finetune_dae=args.finetune_dae,
                                       model=args.model)
        dae = _load_dae(args.dae) if args.dae and args.model == "energyrank" else None

        def on_epoch(rec, run=run, seed=seed):
            metrics.append({"run": run, "seed": seed, **rec.to_dict()})

        res = pipeline.train_model(train, val, pcfg, dae_params=dae, on_epoch=on_epoch)
        err = pipeline.evaluate_run(res.model, test).error_rate if test else res.fit.best_val_error
        errors.append(err)
        print(f"run {run} seed {seed}: best epoch {res.fit.best_epoch}, "
              f"{'test' if test else 'val'} error {err:.4f}")
        if args.out:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            pipeline.save_model(_run_path(args.out, run, args.runs), res.model,
                                {"seed": seed, "best_epoch": res.fit.best_epoch, "config": pcfg.to_dict(),
                                 "error_rate": err, "dae_curve": res.dae_curve})
        _write_jsonl(args.metrics, metrics)
    summary = RunSummary(name, errors)
    print(summary.line())
    if args.summary:
        args.summary.parent.mkdir(parents=True, exist_ok=True)
        args.summary.write_text(json.dumps(summary.to_dict(), sort_keys=True, indent=1) + "\n")
    for other_path in args.compare:
        other = RunSummary.from_dict(json.loads(other_path.read_text()))
        print(f"t-test {summary.name} vs {other.name}: p = {t_test(summary, other):.4g}")
    return 0


def cmd_evaluate(args) -> int:
    model, _ = pipeline.load_model(args.model)
    rep = pipeline.evaluate_run(model, dataset.read_jsonl(args.data, labeled=True))
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return 0


def cmd_robustness(args) -> int:
    model, _ = pipeline.load_model(args.model)
    m, p_pdf, q_pdf = pipeline.robustness_run(model, dataset.read_jsonl(args.p), dataset.read_jsonl(args.q))
    if args.grid_prefix:
        args.grid_prefix.parent.mkdir(parents=True, exist_ok=True)
        write_grid(p_pdf, args.grid_prefix.with_name(args.grid_prefix.name + ".p.txt"))
        write_grid(q_pdf, args.grid_prefix.with_name(args.grid_prefix.name + ".q.txt"))
    print(f"{m:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    results = diagnostics.run_all(range(args.seed, args.seed + args.seeds))
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return 1
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "train": cmd_train,
            "evaluate": cmd_evaluate, "robustness": cmd_robustness, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, EnergyRankError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
