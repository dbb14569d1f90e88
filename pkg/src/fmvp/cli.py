"""Command-line entry point: ``fmvp <subcommand> [flags]``.

Exit status is 0 on success, 1 on a contract violation and 2 on an I/O or
file-format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import classifier as clf
from .attacks import AttackResult, run_attack
from .autodiff import ContractError, ShapeError
from .checks import run_all
from .classifier import TrainingDiverged
from .config import RunConfig, load_config, parse_override, write_resolved
from .data import gen_corpus, split_corpus
from .experiments import (
    detection_study,
    evaluate_defense,
    grid_search,
    psd_study,
    correctly_classified,
)
from .flow import TrainVariant, train_purifier, write_training_log
from .formats import Dataset, FormatError, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .purify import FlowPurifier, IdentityPurifier, PurificationError, PurifyConfig, purify_dataset
from .taint import taint
from .velocity_net import init_params

SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------- helpers


def _config(args, extra: dict | None = None) -> RunConfig:
    overrides = {}
    for text in args.set or ():
        key, value = parse_override(text)
        overrides[key] = value
    overrides.update(extra or {})
    return load_config(args.config, overrides)


def _split(path: str, split: str) -> Dataset:
    return getattr(split_corpus(load_dataset(path)), split)


def _subset(ds: Dataset, n: int) -> Dataset:
    return ds if n <= 0 or n >= len(ds) else ds.subset(np.arange(n))


def _purifier(path: str | None, cfg: RunConfig, seed: int):
    if path is None or path == "identity":
        return IdentityPurifier()
    p = cfg.purifier
    return FlowPurifier(load_checkpoint(path), PurifyConfig(p.gamma, p.xi, p.steps, seed))


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> None:
    cfg = _config(args, {"data.seed": args.seed, "data.num_samples": args.num_samples})
    out = Path(args.out)
    write_resolved(cfg, out.parent, "gen-data", args.seed)
    save_dataset(out, gen_corpus(cfg.data))


def cmd_train_classifier(args) -> None:
    cfg = _config(args, {"classifier.epochs": args.epochs, "classifier.lr": args.lr})
    splits = split_corpus(load_dataset(args.data))
    res = clf.train_classifier(splits.train, splits.val, args.seed, cfg.classifier)
    out = Path(args.out)
    write_resolved(cfg, out.parent, "train-classifier", args.seed)
    save_checkpoint(out, res.params)
    _dump(out.with_suffix(".metrics.json"), {"train_acc": res.train_acc, "val_acc": res.val_acc, "final_loss": res.losses[-1]})


def cmd_attack(args) -> None:
    cfg = _config(args, {"attack.pgd.epsilon": args.epsilon})
    ds = _subset(_split(args.data, args.split), args.num)
    params = load_checkpoint(args.classifier)
    purifier = _purifier(args.purifier, cfg, args.seed) if args.attack == "adaptive" else None
    if args.attack == "adaptive" and args.purifier is None:
        raise ContractError("the adaptive attack needs --purifier")
    res = run_attack(args.attack, ds.x, ds.y, params, cfg.attack, purifier, args.seed)
    out = Path(args.out)
    write_resolved(cfg, out.parent, "attack", args.seed)
    save_dataset(out, Dataset(np.asarray(res.x_adv), ds.y, ds.num_classes))
    res.write_sidecar(out.with_suffix(out.suffix + ".json"))


def cmd_train_purifier(args) -> None:
    cfg = _config(args, {"train.steps": args.steps})
    variant = TrainVariant(args.variant)
    train = split_corpus(load_dataset(args.data)).train
    x_adv = None
    if variant.uses_attack:
        if args.adv is None:
            raise ContractError(f"variant {variant.value} needs --adv (an attack of the train split)")
        adv = load_dataset(args.adv)
        if adv.x.shape != train.x.shape:
            raise ContractError(f"--adv holds {adv.x.shape}, expected the train split {train.x.shape}")
        x_adv = taint(adv.x)
    elif args.adv is not None:
        raise ContractError("the gaussian variant does not read attack artifacts")
    params, log = train_purifier(train.x, variant, init_params(train.x.shape[1], args.seed), args.seed, cfg.train, x_adv)
    out = Path(args.out)
    write_resolved(cfg, out.parent, "train-purifier", args.seed)
    save_checkpoint(out, params)
    write_training_log(out.with_suffix(".log.csv"), log)


def cmd_purify(args) -> None:
    cfg = _config(args, {"purifier.gamma": args.gamma, "purifier.steps": args.euler_steps})
    ds = load_dataset(args.data)
    purifier = _purifier(args.purifier, cfg, args.seed)
    out = Path(args.out)
    x = purify_dataset(purifier, ds.x, args.seed, workers=args.workers)
    write_resolved(cfg, out.parent, "purify", args.seed)
    save_dataset(out, Dataset(x, ds.y, ds.num_classes))


def cmd_detect(args) -> None:
    cfg = _config(args, {"eval.num_eval": args.num})
    clean = _subset(_split(args.data, args.split), cfg.eval.num_eval)
    attacked = {}
    for path in args.adv:
        adv = load_dataset(path)
        attacked[Path(path).stem] = adv.x[: len(clean)] if cfg.eval.num_eval > 0 else adv.x
    study = detection_study(clean.x, attacked, load_checkpoint(args.purifier))
    out = _out_dir(args)
    write_resolved(cfg, out, "detect", None)
    study.write(out)


def cmd_evaluate(args) -> None:
    cfg = _config(args, {"eval.num_eval": args.num, "purifier.gamma": args.gamma, "purifier.steps": args.euler_steps})
    test = _subset(_split(args.data, "test"), cfg.eval.num_eval)
    params = load_checkpoint(args.classifier)
    purifier = _purifier(args.purifier, cfg, args.seed)
    report = evaluate_defense(test, params, args.attack, purifier, cfg.attack, args.seed, workers=args.workers)
    out = _out_dir(args)
    write_resolved(cfg, out, "evaluate", args.seed)
    report.write(out)


def _pgd_filtered(test: Dataset, params, cfg: RunConfig, seed: int) -> tuple[Dataset, AttackResult]:
    _, keep = correctly_classified(test, params)
    if len(keep) == 0:
        raise ContractError("no correctly classified samples to attack")
    ds = test.subset(keep)
    return ds, run_attack("pgd", ds.x, ds.y, params, cfg.attack, None, seed)


def cmd_grid_search(args) -> None:
    cfg = _config(args, {"eval.num_eval": args.num})
    if args.gammas:
        cfg.eval.gammas = args.gammas
    if args.steps_grid:
        cfg.eval.steps = args.steps_grid
    test = _subset(_split(args.data, "test"), cfg.eval.num_eval)
    params = load_checkpoint(args.classifier)
    ds, res = _pgd_filtered(test, params, cfg, args.seed)
    purifier = _purifier(args.purifier, cfg, args.seed)
    grid = grid_search(np.asarray(res.x_adv), ds.y, params, purifier, cfg.eval.gammas, cfg.eval.steps, args.seed, args.workers)
    out = _out_dir(args)
    write_resolved(cfg, out, "grid-search", args.seed)
    grid.write_csv(out / "grid.csv")


def cmd_psd(args) -> None:
    cfg = _config(args, {"eval.num_eval": args.num})
    test = _subset(_split(args.data, "test"), cfg.eval.num_eval)
    params = load_checkpoint(args.classifier)
    ds, res = _pgd_filtered(test, params, cfg, args.seed)
    x_adv = np.asarray(res.x_adv)
    purified = purify_dataset(_purifier(args.purifier, cfg, args.seed), x_adv, args.seed, workers=args.workers)
    study = psd_study(ds.x, x_adv, purified, cfg.eval.psd_bins)
    out = _out_dir(args)
    write_resolved(cfg, out, "psd", args.seed)
    study.write(out)
    _dump(out / "psd_distance.json", {"attacked_l1": study.attacked_distance, "purified_l1": study.purified_distance})


def cmd_grad_check(args) -> None:
    cfg = _config(args)
    reports = run_all(args.seed, args.max_entries)
    out = _out_dir(args)
    write_resolved(cfg, out, "grad-check", args.seed)
    doc = {name: {"max_rel_err": max(r.errors.values()), "passed": r.passed} for name, r in reports.items()}
    _dump(out / "grad_check.json", doc)
    failed = [name for name, r in reports.items() if not r.passed]
    if failed:
        raise ContractError(f"gradient check failed for: {', '.join(failed)}")


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, seed: bool = True, workers: bool = False) -> None:
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field by dotted path")
    if seed:
        p.add_argument("--seed", type=int, required=True, help="seed for every random stream (mandatory)")
    if workers:
        p.add_argument("--workers", type=int, default=1, help="parallel workers over samples")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="fmvp", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"fmvp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic motion corpus", formatter_class=fmt)
    _common(p)
    p.add_argument("--out", required=True, help="dataset file to write")
    p.add_argument("--num-samples", type=int, default=None, help="samples per class (config default 100)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-classifier", help="train the victim classifier", formatter_class=fmt)
    _common(p)
    p.add_argument("--data", required=True, help="dataset file from gen-data")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (config default 3)")
    p.add_argument("--lr", type=float, default=None, help="AdamW learning rate (config default 1e-2)")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("attack", help="attack a split of the corpus", formatter_class=fmt)
    _common(p)
    p.add_argument("--data", required=True, help="dataset file from gen-data")
    p.add_argument("--split", choices=SPLITS, default="test", help="which split to attack")
    p.add_argument("--classifier", required=True, help="victim checkpoint")
    p.add_argument("--attack", choices=("pgd", "cw", "adaptive"), default="pgd",
                   help="pgd: eps 8/255, step 2/255, 10 iters; cw: 9 search steps from c=1e-3; "
                        "adaptive: EOT-PGD through the purifier")
    p.add_argument("--purifier", default=None, help="purifier checkpoint (adaptive attack only)")
    p.add_argument("--epsilon", type=float, default=None, help="PGD L-inf budget (config default 8/255)")
    p.add_argument("--num", type=int, default=0, help="attack only the first N samples (0 = all)")
    p.add_argument("--out", required=True, help="attacked dataset to write; a JSON sidecar goes next to it")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("train-purifier", help="train the flow-matching purifier", formatter_class=fmt)
    _common(p)
    p.add_argument("--data", required=True, help="dataset file from gen-data")
    p.add_argument("--variant", choices=[v.value for v in TrainVariant], default="gaussian",
                   help="source of the masked input: clean video (gaussian) or an attack of the train split")
    p.add_argument("--adv", default=None, help="attacked train split (pgd and cw variants only)")
    p.add_argument("--steps", type=int, default=None, help="optimizer steps (config default 3000)")
    p.add_argument("--out", required=True, help="checkpoint to write; a training log CSV goes next to it")
    p.set_defaults(func=cmd_train_purifier)

    p = sub.add_parser("purify", help="purify every video of a dataset file", formatter_class=fmt)
    _common(p, workers=True)
    p.add_argument("--data", required=True, help="dataset file to purify")
    p.add_argument("--purifier", required=True, help="purifier checkpoint")
    p.add_argument("--gamma", type=float, default=None, help="inference keep ratio (config default 0.5)")
    p.add_argument("--euler-steps", type=int, default=None, help="Euler steps (config default 10)")
    p.add_argument("--out", required=True, help="purified dataset to write")
    p.set_defaults(func=cmd_purify)

    p = sub.add_parser("detect", help="velocity-norm detection scores and ROC", formatter_class=fmt)
    _common(p, seed=False)
    p.add_argument("--data", required=True, help="dataset file holding the clean split")
    p.add_argument("--split", choices=SPLITS, default="test", help="clean split to score")
    p.add_argument("--adv", action="append", required=True, help="attacked dataset file (repeatable)")
    p.add_argument("--purifier", required=True, help="purifier checkpoint providing the velocity field")
    p.add_argument("--num", type=int, default=None, help="score only the first N samples (0 = all)")
    p.add_argument("--out-dir", required=True, help="directory for scores, ROC and AUC files")
    p.set_defaults(func=cmd_detect)

    for name, func, help_ in (
        ("evaluate", cmd_evaluate, "attack, purify and re-classify the test split"),
        ("grid-search", cmd_grid_search, "robust accuracy over keep ratio and Euler steps"),
        ("psd", cmd_psd, "radial power spectra of clean, attacked and purified videos"),
    ):
        p = sub.add_parser(name, help=help_, formatter_class=fmt)
        _common(p, workers=True)
        p.add_argument("--data", required=True, help="dataset file from gen-data")
        p.add_argument("--classifier", required=True, help="victim checkpoint")
        p.add_argument("--purifier", default="identity", help="purifier checkpoint or 'identity'")
        p.add_argument("--num", type=int, default=None, help="evaluate only the first N test samples (0 = all)")
        p.add_argument("--out-dir", required=True, help="directory for reports")
        if name == "evaluate":
            p.add_argument("--attack", choices=("pgd", "cw", "adaptive"), default="pgd", help="attack to defend against")
            p.add_argument("--gamma", type=float, default=None, help="inference keep ratio (config default 0.5)")
            p.add_argument("--euler-steps", type=int, default=None, help="Euler steps (config default 10)")
        if name == "grid-search":
            p.add_argument("--gammas", type=float, nargs="+", default=None, help="keep ratios (default 0.2 to 0.8)")
            p.add_argument("--steps-grid", type=int, nargs="+", default=None, help="Euler steps (default 5 10 12 15 20)")
        p.set_defaults(func=func)

    p = sub.add_parser("grad-check", help="finite-difference checks of every primitive and loss", formatter_class=fmt)
    _common(p)
    p.add_argument("--max-entries", type=int, default=40, help="coordinates probed per velocity-net tensor")
    p.add_argument("--out-dir", required=True, help="directory for the report")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except FormatError as exc:
        print(f"fmvp: format error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fmvp: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, ShapeError, PurificationError, TrainingDiverged) as exc:
        print(f"fmvp: contract error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
