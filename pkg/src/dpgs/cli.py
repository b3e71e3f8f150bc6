"""Command-line entry point: ``dpgs <command> [options]``.

Commands: plant, fit, generate, filter, train-mlp, eval, bench. A flat
``key = value`` file given with ``--config`` supplies option defaults;
explicit flags win. The seed comes from ``--seed``, then ``DPGS_SEED``,
then 0, and fully determines every output file.

Exit codes: 0 success, 1 run failure (bench FAIL, degenerate fit),
2 privacy audit failure, 3 I/O or parse error, 64 bad arguments.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    PLACEMENTS,
    PlantedGmmSpec,
    load_grid_config,
    parse_key_values,
    plant_labeled,
    reference_pipeline_config,
    reference_spec,
    sweep,
)
from .classifier import MlpConfig, evaluate, load_mlp, save_mlp, subsample, train_mlp
from .core.errors import (
    BudgetExceededError,
    ConfigurationError,
    ContractError,
    DegenerateFitError,
    ParseError,
    ShapeError,
)
from .core.io import load_dataset, read_blocks, save_dataset, split_by_label, write_blocks
from .core.rng import derive_rng, derive_seed
from .core.types import BudgetLedger, EmbeddingDataset, GmmModel, LedgerEntry, PrivacyBudget, concat_datasets
from .dp_gaussian import EstimatorConfig
from .dp_kmeans import INIT_METHODS, RESEED_METHODS, KMeansConfig
from .gmm import sample_gmm
from .mechanisms import format_ledger, ledger_audit, split_budget
from .pipeline import (
    CLASS_GROUP,
    RESERVED,
    STAGES,
    PipelineConfig,
    dp_filter_embeddings,
    fit_private_gmm_detailed,
)

EXIT_OK, EXIT_FAIL, EXIT_AUDIT, EXIT_IO, EXIT_USAGE = 0, 1, 2, 3, 64
GMM_MAGIC = b"DPGM"
GMM_VERSION = 1
SEED_ENV = "DPGS_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _float_list(text):
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p):
    p.add_argument("--config", help="key = value file supplying option defaults")
    p.add_argument("--seed", type=int, default=None, help=f"root seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for per-class or per-cell work")


def _add_budget(p, required=True):
    p.add_argument("--epsilon", type=float, default=None, help="total privacy budget epsilon")
    p.add_argument("--delta", type=float, default=1e-5, help="total privacy budget delta")
    if required:
        p.add_argument("--non-private", type=_bool, nargs="?", const=True, default=False,
                       help="disable all noise (oracle mode)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpgs", description="Private Gaussian-mixture synthetic embeddings.")
    parser.add_argument("--version", action="version", version=f"dpgs {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("plant", help="write a planted labeled mixture dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--reference", type=_bool, nargs="?", const=True, default=False,
                   help="start from the two-class reference mixture")
    p.add_argument("--k", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int, help="records per class")
    p.add_argument("--classes", type=int)
    p.add_argument("--weights", type=_float_list)
    p.add_argument("--placement", choices=PLACEMENTS)
    p.add_argument("--separation", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--ball-radius", type=float)
    p.add_argument("--components-out", help="also write generating component ids (CSV)")
    p.add_argument("--test-out", help="also write a held-out draw from the same mixtures")
    p.add_argument("--test-n", type=int, default=None, help="held-out records per class (default n/10)")

    p = sub.add_parser("fit", help="fit one private mixture per class")
    _add_common(p)
    _add_budget(p)
    p.add_argument("--input", required=True, help="labeled dataset (CSV: last column is the label)")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--clip", type=float, default=1.0, help="k-means clip radius about the origin")
    p.add_argument("--cov-clip", type=float, default=None, help="covariance clip radius (default --clip)")
    p.add_argument("--mean-clip", type=float, default=None, help="mean clip radius (default --cov-clip)")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--init", choices=INIT_METHODS, default="overseed")
    p.add_argument("--reseed", choices=RESEED_METHODS, default="split-largest")
    p.add_argument("--covariance", choices=("diagonal", "full"), default="diagonal")
    p.add_argument("--shares", type=_float_list, default=(1.0,) * len(STAGES))

    p = sub.add_parser("generate", help="sample synthetic records from a fitted model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-m", "--generations", type=int, required=True)
    p.add_argument("--multiplier", type=float, default=6.0)
    p.add_argument("--filter", type=_bool, nargs="?", const=True, default=False,
                   help="spend the reserved filtering share on vote filtering")
    p.add_argument("--original", help="labeled private dataset that votes (needed by --filter)")
    p.add_argument("--threshold", type=float, default=6.0)
    p.add_argument("--filter-budget", type=_float_list, default=None,
                   help="override the filtering budget as EPS[,DELTA]")

    p = sub.add_parser("filter", help="vote-filter generated records against private data")
    _add_common(p)
    _add_budget(p)
    p.add_argument("--generated", required=True)
    p.add_argument("--original", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=6.0)

    p = sub.add_parser("train-mlp", help="train the downstream classifier")
    _add_common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    defaults = MlpConfig()
    p.add_argument("--hidden", type=int, default=defaults.hidden_dim)
    p.add_argument("--dropout", type=float, default=defaults.dropout)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--weight-decay", type=float, default=defaults.weight_decay)
    p.add_argument("--label-smoothing", type=float, default=defaults.label_smoothing)
    p.add_argument("--schedule", choices=("constant", "cosine"), default=defaults.lr_schedule)
    p.add_argument("--subsample", type=int, default=None)

    p = sub.add_parser("eval", help="report classifier accuracy on a labeled test set")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("bench", help="parameter sweep on planted mixtures")
    _add_common(p)
    p.add_argument("--grid", help="key = value grid and threshold file")
    p.add_argument("--out", required=True, help="TSV table")
    p.add_argument("--summary", help="write the pass/fail summary here as well")
    p.add_argument("--seeds", type=int, default=None, help="number of seeds (overrides the grid)")
    p.add_argument("--classifier", type=_bool, nargs="?", const=True, default=False,
                   help="also train MLPs on synthetic and real data")
    return parser


def _config_path(argv):
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from the ``--config`` file, if one is named."""
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    command = next((t for t in argv if t in COMMANDS), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from None
    values = parse_key_values(text)
    sub = parser._subparsers._group_actions[0].choices[command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    # argparse runs string defaults through each option's type converter
    sub.set_defaults(**values)
    for action in sub._actions:
        if action.dest in values:
            action.required = False
    return parser.parse_args(argv)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _budget(args) -> PrivacyBudget:
    if getattr(args, "non_private", False):
        return PrivacyBudget.non_private()
    if args.epsilon is None:
        raise UsageError("--epsilon is required unless --non-private is given")
    if not (math.isfinite(args.epsilon) and args.epsilon > 0):
        raise UsageError(f"--epsilon must be a positive finite number, got {args.epsilon}")
    if not 0 <= args.delta < 1:
        raise UsageError(f"--delta must lie in [0, 1), got {args.delta}")
    return PrivacyBudget(args.epsilon, args.delta)


def _check_jobs(args):
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")


def _load_labeled(path) -> EmbeddingDataset:
    ds = load_dataset(path, labels=True)
    if ds.labels is None:
        raise ContractError(f"{path}: dataset has no labels")
    return ds


def _print_audit(ledger: BudgetLedger, out):
    print("[ledger]", file=out)
    print(format_ledger(ledger), file=out)


def _no_budget(out, reason):
    print("[ledger]", file=out)
    print(f"no privacy budget consumed ({reason})", file=out)


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# model container --------------------------------------------------------

def _entry_to_json(e: LedgerEntry):
    return [e.name, e.budget.epsilon, e.budget.delta, e.kind, e.group, e.partition]


def _entry_from_json(row) -> LedgerEntry:
    name, eps, delta, kind, group, partition = row
    return LedgerEntry(name, PrivacyBudget(eps, delta), kind, group, partition)


def save_gmm_models(path, models: dict, ledger: BudgetLedger, shares) -> None:
    """Write per-class mixtures plus the budget ledger that produced them."""
    blocks = {}
    for label in sorted(models):
        m = models[label]
        blocks[f"class.{label}.weights"] = m.weights
        blocks[f"class.{label}.means"] = m.means
        blocks[f"class.{label}.covariances"] = m.covariances
    covariance_model = next(iter(models.values())).covariance_model
    meta = {"classes": sorted(int(c) for c in models), "covariance_model": covariance_model,
            "epsilon": ledger.total.epsilon, "delta": ledger.total.delta, "shares": list(shares),
            "ledger": [_entry_to_json(e) for e in ledger.entries]}
    write_blocks(path, GMM_MAGIC, GMM_VERSION, blocks, meta)


def load_gmm_models(path):
    """Return ``(models, ledger, shares)`` from a file written by save_gmm_models."""
    version, blocks, meta = read_blocks(path, GMM_MAGIC)
    if version != GMM_VERSION or meta is None:
        raise ParseError(f"{path}: unsupported model container (version {version})")
    try:
        models = {}
        for label in meta["classes"]:
            models[label] = GmmModel(blocks[f"class.{label}.weights"], blocks[f"class.{label}.means"],
                                     blocks[f"class.{label}.covariances"], meta["covariance_model"])
        ledger = BudgetLedger(PrivacyBudget(meta["epsilon"], meta["delta"]),
                              [_entry_from_json(row) for row in meta["ledger"]])
        return models, ledger, tuple(meta["shares"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: corrupt model container ({exc})") from None


# commands ---------------------------------------------------------------

def cmd_plant(args, out) -> int:
    seed = _seed(args)
    spec = reference_spec() if args.reference else PlantedGmmSpec()
    overrides = {"k": args.k, "d": args.d, "n": args.n, "classes": args.classes,
                 "weights": args.weights, "placement": args.placement,
                 "separation": args.separation, "sigma": args.sigma, "ball_radius": args.ball_radius}
    overrides = {key: v for key, v in overrides.items() if v is not None}
    if "k" in overrides and "weights" not in overrides and spec.weights is not None \
            and len(spec.weights) != overrides["k"]:
        overrides["weights"] = None
    spec = replace(spec, seed=seed, **overrides)
    plant = plant_labeled(spec, derive_rng(seed, "plant"))
    save_dataset(plant.data, args.out)
    if args.components_out:
        comp = EmbeddingDataset(plant.components[:, None].astype(np.float64), plant.data.labels)
        save_dataset(comp, args.components_out, "csv")
    print(f"wrote {plant.data.n} records ({spec.classes} classes, k={spec.k}, d={spec.d}) to {args.out}",
          file=out)
    if args.test_out:
        test_n = args.test_n if args.test_n is not None else max(1, spec.n // 10)
        if test_n < 1:
            raise UsageError("--test-n must be positive")
        test = concat_datasets(sample_gmm(truth, test_n, derive_rng(seed, "plant-test", c), label=c)
                               for c, truth in enumerate(plant.truths))
        save_dataset(test, args.test_out)
        print(f"wrote {test.n} held-out records to {args.test_out}", file=out)
    if not plant.concentration_ok:
        print("warning: component counts fall outside the concentration window", file=out)
    _no_budget(out, "planted data is public")
    return EXIT_OK


def _fit_config(args, budget):
    cov_clip = args.cov_clip if args.cov_clip is not None else args.clip
    return PipelineConfig(
        budget=budget,
        kmeans=KMeansConfig(k=args.k, clip_radius=args.clip, lloyd_iterations=args.iterations,
                            init=args.init, reseed=args.reseed),
        estimator=EstimatorConfig(clip_radius=cov_clip, covariance_model=args.covariance,
                                  mean_clip_radius=args.mean_clip),
        shares=args.shares,
    )


def cmd_fit(args, out) -> int:
    seed = _seed(args)
    _check_jobs(args)
    budget = _budget(args)
    try:
        cfg = _fit_config(args, budget)
    except (ConfigurationError, ContractError) as exc:
        raise UsageError(str(exc)) from None
    ds = _load_labeled(args.input)
    parts = split_by_label(ds)
    budgets = cfg.stage_budgets

    def work(item):
        label, class_ds = item
        ledger = BudgetLedger(budget)
        fit = fit_private_gmm_detailed(class_ds, cfg, derive_seed(seed, CLASS_GROUP, label), ledger)
        ledger.record("dp_filter_embeddings" + RESERVED, budgets["dp_filter_embeddings"])
        ledger.record("dp_filter_image" + RESERVED, budgets["dp_filter_image"])
        return label, fit, ledger

    results = _map(work, parts, args.jobs)
    ledger = BudgetLedger(budget)
    for label, _, class_ledger in results:
        ledger.extend(class_ledger.as_parallel(CLASS_GROUP, label))
    _print_audit(ledger, out)
    ledger_audit(ledger)
    for label, fit, _ in results:
        print(f"class {label}: n={int(np.sum(ds.labels == label))} weights="
              + ",".join(f"{w:.6g}" for w in fit.model.weights)
              + (f" degenerate={list(fit.degenerate)}" if fit.degenerate else ""), file=out)
    save_gmm_models(args.out, {label: fit.model for label, fit, _ in results}, ledger, cfg.shares)
    print(f"wrote model for {len(results)} classes to {args.out}", file=out)
    return EXIT_OK


def _filter_budget(args, ledger, shares):
    if args.filter_budget is not None:
        values = args.filter_budget
        if len(values) not in (1, 2):
            raise UsageError("--filter-budget takes EPS or EPS,DELTA")
        try:
            return PrivacyBudget(values[0], values[1] if len(values) == 2 else 0.0)
        except ContractError as exc:
            raise UsageError(str(exc)) from None
    return dict(zip(STAGES, split_budget(ledger.total, shares)))["dp_filter_embeddings"]


def cmd_generate(args, out) -> int:
    seed = _seed(args)
    _check_jobs(args)
    if args.filter and not args.original:
        raise UsageError("--filter needs --original")
    if args.generations < 1:
        raise UsageError("-m must be a positive integer")
    if not args.multiplier >= 1:
        raise UsageError("--multiplier must be at least 1")
    models, fit_ledger, shares = load_gmm_models(args.model)
    count = int(round(args.multiplier * args.generations))
    original = None
    if args.filter:
        original = dict(split_by_label(_load_labeled(args.original)))
        missing = [c for c in models if c not in original]
        if missing:
            raise ContractError(f"--original has no records for classes {missing}")
    filter_budget = _filter_budget(args, fit_ledger, shares) if args.filter else None

    ledger = BudgetLedger(fit_ledger.total)
    name = "dp_filter_embeddings"
    for e in fit_ledger.entries:
        if args.filter and e.name == name + RESERVED:
            continue
        ledger.extend([e])
    if args.filter:
        for label in sorted(models):
            ledger.extend([LedgerEntry(name, filter_budget, "parallel", CLASS_GROUP, str(label))])
    _print_audit(ledger, out)
    ledger_audit(ledger)

    def work(label):
        class_seed = derive_seed(seed, CLASS_GROUP, label)
        generated = sample_gmm(models[label], count, derive_rng(class_seed, "sample"), label=label)
        if not args.filter:
            return label, generated, generated.n
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            result = dp_filter_embeddings(generated, original[label], args.threshold, filter_budget,
                                          derive_rng(class_seed, "filter"))
        return label, result.survivors, generated.n

    results = _map(work, sorted(models), args.jobs)
    kept = [ds for _, ds, _ in results if ds is not None]
    for label, ds, n in results:
        print(f"class {label}: generated={n} kept={0 if ds is None else ds.n}", file=out)
        if ds is None:
            print(f"warning: class {label}: vote filtering kept no records", file=out)
    if not kept:
        print("warning: no records survived; nothing written", file=out)
        return EXIT_FAIL
    save_dataset(concat_datasets(kept), args.out)
    print(f"wrote {sum(ds.n for ds in kept)} records to {args.out}", file=out)
    return EXIT_OK


def cmd_filter(args, out) -> int:
    seed = _seed(args)
    budget = _budget(args)
    generated = dict(split_by_label(_load_labeled(args.generated)))
    original = dict(split_by_label(_load_labeled(args.original)))
    missing = [c for c in generated if c not in original]
    if missing:
        raise ContractError(f"--original has no records for classes {missing}")
    ledger = BudgetLedger(budget)
    for label in sorted(generated):
        ledger.extend([LedgerEntry("dp_filter_embeddings", budget, "parallel", CLASS_GROUP, str(label))])
    _print_audit(ledger, out)
    ledger_audit(ledger)
    kept = []
    for label in sorted(generated):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            result = dp_filter_embeddings(generated[label], original[label], args.threshold, budget,
                                          derive_rng(derive_seed(seed, CLASS_GROUP, label), "filter"))
        print(f"class {label}: generated={generated[label].n} kept={result.count}", file=out)
        if result.survivors is not None:
            kept.append(result.survivors)
    if not kept:
        print("warning: no records survived; nothing written", file=out)
        return EXIT_FAIL
    save_dataset(concat_datasets(kept), args.out)
    print(f"wrote {sum(ds.n for ds in kept)} records to {args.out}", file=out)
    return EXIT_OK


def cmd_train_mlp(args, out) -> int:
    seed = _seed(args)
    try:
        cfg = MlpConfig(hidden_dim=args.hidden, dropout=args.dropout, epochs=args.epochs,
                        batch_size=args.batch_size, learning_rate=args.lr,
                        weight_decay=args.weight_decay, label_smoothing=args.label_smoothing,
                        lr_schedule=args.schedule)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    train = _load_labeled(args.train)
    if args.subsample is not None:
        train = subsample(train, args.subsample, derive_rng(seed, "subsample"))
    model = train_mlp(train, cfg, derive_rng(seed, "train"))
    save_mlp(model, args.out)
    print(f"trained on {train.n} records, final loss {model.loss_history[-1]:.6f}", file=out)
    print(f"wrote classifier to {args.out}", file=out)
    _no_budget(out, "training only post-processes its input")
    return EXIT_OK


def cmd_eval(args, out) -> int:
    model = load_mlp(args.model)
    test = _load_labeled(args.test)
    print(f"accuracy = {evaluate(model, test):.6f}", file=out)
    _no_budget(out, "evaluation only post-processes its input")
    return EXIT_OK


def cmd_bench(args, out) -> int:
    _check_jobs(args)
    text = Path(args.grid).read_text(encoding="utf-8") if args.grid else ""
    try:
        grid, thresholds, extras = load_grid_config(text)
        if args.seeds is not None:
            grid = replace(grid, seeds=tuple(range(args.seeds)))
        # planted-data overrides; "components" is the true k (the grid's k is the fitted one)
        overrides = {}
        for key, field_name, cast in (("components", "k", int), ("d", "d", int), ("n", "n", int),
                                      ("classes", "classes", int), ("separation", "separation", float),
                                      ("sigma", "sigma", float)):
            if key in extras:
                overrides[field_name] = cast(extras.pop(key))
        if overrides.get("k", 3) != 3:
            overrides["weights"] = None
        spec = reference_spec(**overrides)
        base = reference_pipeline_config()
        if "kmeans_clip" in extras:
            base = replace(base, kmeans=replace(base.kmeans, clip_radius=float(extras.pop("kmeans_clip"))))
        if "mean_clip" in extras:
            base = replace(base, estimator=replace(base.estimator,
                                                    mean_clip_radius=float(extras.pop("mean_clip"))))
        if extras:
            raise ConfigurationError(f"unknown grid keys: {', '.join(sorted(extras))}")
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    if len(grid.seeds) == 1:
        print("warning: a single seed makes every median degenerate", file=sys.stderr)
        print("warning: a single seed makes every median degenerate", file=out)
    classifier = MlpConfig() if args.classifier else None
    table = sweep(replace(grid, seeds=tuple(s + _seed(args) for s in grid.seeds)), spec, base,
                  classifier=classifier, jobs=args.jobs)
    Path(args.out).write_text(table.to_tsv(), encoding="utf-8")
    passed, lines = table.summary(thresholds)
    failed_rows = [r for r in table.rows if r["status"] != "ok"]
    report = [f"rows = {len(table.rows)}", f"failed_rows = {len(failed_rows)}", *lines,
              f"summary = {'PASS' if passed else 'FAIL'}"]
    if args.summary:
        Path(args.summary).write_text("\n".join(report) + "\n", encoding="utf-8")
    print("\n".join(report), file=out)
    print("[ledger]", file=out)
    for eps in grid.epsilons:
        total = PrivacyBudget(eps, grid.delta)
        cfg = replace(base, budget=total)
        ledger = BudgetLedger(total)
        for label in range(spec.classes):
            part = BudgetLedger(total)
            for name in STAGES[:3]:
                part.record(name, cfg.stage_budgets[name])
            ledger.extend(part.as_parallel(CLASS_GROUP, label))
        print(f"epsilon={eps!r}: per-cell fit ledger", file=out)
        print(format_ledger(ledger), file=out)
        ledger_audit(ledger)
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {"plant": cmd_plant, "fit": cmd_fit, "generate": cmd_generate, "filter": cmd_filter,
            "train-mlp": cmd_train_mlp, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceededError as exc:
        print(f"audit failure: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except (OSError, ParseError, ShapeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractError, DegenerateFitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main_entry():
    sys.exit(main())
