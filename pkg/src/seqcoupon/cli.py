"""Batch command-line entry point wiring all modules together.

Five subcommands form a pipeline over an output directory tree:

    simulate  — generate a catalog and randomized two-round logs
    train     — grid-search the first-round learner, fit both models
    allocate  — plan coupon pairs for every still-unsold catalog item
    evaluate  — ranking curve and delay diagnostics for a trained model
    compare   — train then roll out random / per-round / sequential policies

Every command reads one config file, writes into ``--out``, and stamps the
directory with a manifest (tool version, config hash, seed). Re-running with
the same inputs reproduces every output byte for byte; resuming into a
directory whose manifest disagrees is refused rather than overwritten.

Exit codes: 0 success; 1 internal error; 2 unparseable config or invalid
input data; 3 IO failure or manifest mismatch; 4 unidentifiable training log
(single arm); 5 model/encoder schema mismatch; 6 missing no-coupon holdout.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import __version__, fileio
from .config import RunConfig, load_config
from .decision import allocate_batch, materialize_plans
from .domain import ItemRecord, item_feature_matrix
from .errors import (
    IdentifiabilityError,
    InputError,
    ManifestMismatchError,
    MissingHoldoutError,
    SchemaMismatchError,
)
from .evaluation import UpliftCurve, bootstrap_band, compare_strategies, cumulative_uplift, delay_analysis
from .learner import grid_search
from .simulator import CatalogArrays, GroundTruth, generate_catalog, run_rct
from .uplift import fit_predictor_pair, predict_batch, round1_arm_probabilities, round1_training_dataset

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_IDENTIFIABILITY = 4
EXIT_SCHEMA = 5
EXIT_HOLDOUT = 6

CATALOG_FILE = "catalog.csv"
ROUND1_LOG_FILE = "round1_log.csv"
ROUND2_LOG_FILE = "round2_log.csv"
GRID_TABLE_FILE = "grid_search.csv"
PLANS_FILE = "plans.csv"
CURVE_FILE = "uplift_curve.csv"
BUCKETS_FILE = "delay_buckets.csv"
REPORT_FILE = "comparison.txt"


class _Run:
    """Shared per-invocation state: parsed config, output dir, effective seed."""

    def __init__(self, args: argparse.Namespace, command: str, seed_from):
        self.config: RunConfig = load_config(args.config)
        self.command = command
        self.quiet: bool = args.quiet
        self.out: str = args.out
        self.seed: int = args.seed if args.seed is not None else seed_from(self.config)
        self.config_path: str = args.config

    def start(self) -> None:
        os.makedirs(self.out, exist_ok=True)
        manifest = fileio.build_manifest(
            self.command, fileio.sha256_of_file(self.config_path), self.seed
        )
        fileio.ensure_manifest(self.out, manifest)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def say(self, message: str) -> None:
        if not self.quiet:
            print(message)


def _uniform(n_arms: int) -> list[float]:
    return [1.0 / n_arms] * n_arms


def _load_pair(run: _Run):
    return fileio.load_pair(run.config.io.model_dir)


def _read_catalog(run: _Run) -> list[ItemRecord]:
    return fileio.read_catalog(run.config.io.catalog)


def cmd_simulate(args: argparse.Namespace) -> None:
    run = _Run(args, "simulate", seed_from=lambda cfg: cfg.simulator.rng_seed)
    cfg = run.config
    sim = replace(cfg.simulator, rng_seed=run.seed)
    run.start()
    items = generate_catalog(sim)
    gt = GroundTruth(sim)
    log1, _, log2 = run_rct(
        gt,
        items,
        cfg.round1_set,
        cfg.round2_set,
        _uniform(len(cfg.round1_set)),
        _uniform(len(cfg.round2_set)),
        seed=sim.rng_seed,
    )
    fileio.write_catalog(items, run.path(CATALOG_FILE))
    fileio.write_outcomes(log1, run.path(ROUND1_LOG_FILE))
    fileio.write_outcomes(log2, run.path(ROUND2_LOG_FILE))
    run.say(
        f"simulated {len(items)} items -> {len(log1)} round-1 and "
        f"{len(log2)} round-2 records in {run.out}"
    )


def cmd_train(args: argparse.Namespace) -> None:
    run = _Run(args, "train", seed_from=lambda cfg: cfg.simulator.rng_seed)
    cfg = run.config
    run.start()
    items = _read_catalog(run)
    log1 = fileio.read_outcomes(cfg.io.round1_log)
    log2 = fileio.read_outcomes(cfg.io.round2_log)
    data = round1_training_dataset(items, log1)
    best, results = grid_search(data, cfg.learner.grid, cfg.learner.k_folds, run.seed)
    fileio.write_grid_table(results, run.path(GRID_TABLE_FILE))
    run.say(
        f"grid search over {len(results)} configs; best mean loss "
        f"{min(r.mean_loss for r in results):.6f}"
    )
    pair = fit_predictor_pair(
        items,
        log1,
        log2,
        cfg.round1_set,
        cfg.round2_set,
        config_first=best,
        config_second=cfg.second_learner(),
        epsilon=cfg.ipw_epsilon,
        variant=cfg.ipw_variant,
    )
    fileio.save_pair(pair, run.out)
    run.say(f"wrote model pair and {GRID_TABLE_FILE} in {run.out}")


def _sold_item_ids(cfg: RunConfig) -> set[str]:
    sold = set()
    for path in (cfg.io.round1_log, cfg.io.round2_log):
        if os.path.exists(path):
            for record in fileio.read_outcomes(path):
                if record.sold:
                    sold.add(record.item_id)
    return sold


def cmd_allocate(args: argparse.Namespace) -> None:
    run = _Run(args, "allocate", seed_from=lambda cfg: cfg.simulator.rng_seed)
    cfg = run.config
    run.start()
    pair = _load_pair(run)
    items = _read_catalog(run)
    sold = _sold_item_ids(cfg)
    unsold = sorted(
        (it for it in items if it.item_id not in sold and it.status == "unsold"),
        key=lambda it: it.item_id,
    )
    plans = []
    if unsold:
        p1, _, p2, p_baseline = predict_batch(pair, unsold, cfg.attach_delay_h)
        cat = CatalogArrays.from_items(unsold)
        j, k, feasible = allocate_batch(
            p1, p2, p_baseline, cat.price, cat.ltv,
            pair.round1_set, pair.round2_set, cfg.constraint(),
        )
        plans = materialize_plans(
            [it.item_id for it in unsold], j, k, feasible,
            p1, p2, p_baseline, cat.price, cat.ltv,
            pair.round1_set, pair.round2_set, cfg.constraint(), cfg.attach_delay_h,
        )
    fileio.write_plans(plans, run.path(PLANS_FILE))
    run.say(f"planned {len(plans)} unsold items -> {run.path(PLANS_FILE)}")


def cmd_evaluate(args: argparse.Namespace) -> None:
    run = _Run(args, "evaluate", seed_from=lambda cfg: cfg.simulator.rng_seed)
    cfg = run.config
    run.start()
    pair = _load_pair(run)
    items = _read_catalog(run)
    log1 = fileio.read_outcomes(cfg.io.round1_log)
    if not log1:
        raise InputError(f"{cfg.io.round1_log}: log is empty; nothing to evaluate")
    if not any(r.coupon.is_none for r in log1):
        raise MissingHoldoutError(
            f"{cfg.io.round1_log}: no no-coupon holdout records; lift is undefined"
        )

    index = {it.item_id: i for i, it in enumerate(items)}
    try:
        rows = np.array([index[r.item_id] for r in log1])
    except KeyError as exc:
        raise InputError(f"log references unknown item {exc.args[0]!r}") from None
    matrix = item_feature_matrix(items)[rows]
    delays = np.array([r.attach_delay_h for r in log1])
    p1 = round1_arm_probabilities(pair.first, matrix, pair.round1_set, delays)
    scores = (p1[:, 1:] - p1[:, [0]]).mean(axis=1)
    treated = np.array([not r.coupon.is_none for r in log1])
    sold = np.array([r.sold for r in log1])

    deciles = cfg.evaluation.deciles
    curve = cumulative_uplift(scores, treated, sold, deciles)
    bands = bootstrap_band(
        lambda idx: cumulative_uplift(scores[idx], treated[idx], sold[idx], deciles),
        len(log1),
        cfg.evaluation.bootstrap_b,
        run.seed,
    )
    fileio.write_curve(
        UpliftCurve(points=curve.points, random_reference=curve.random_reference, bands=bands),
        run.path(CURVE_FILE),
    )
    fileio.write_delay_tables(
        delay_analysis(log1, cfg.evaluation.bucket_h), run.path(BUCKETS_FILE)
    )
    run.say(f"wrote {CURVE_FILE} and {BUCKETS_FILE} in {run.out}")


def cmd_compare(args: argparse.Namespace) -> None:
    run = _Run(args, "compare", seed_from=lambda cfg: cfg.evaluation.train_seed)
    cfg = run.config
    run.start()
    train_sim = replace(
        cfg.simulator,
        n_items=cfg.evaluation.train_n_items,
        rng_seed=cfg.evaluation.train_seed,
    )
    items = generate_catalog(train_sim)
    gt = GroundTruth(train_sim)
    log1, _, log2 = run_rct(
        gt,
        items,
        cfg.round1_set,
        cfg.round2_set,
        _uniform(len(cfg.round1_set)),
        _uniform(len(cfg.round2_set)),
        seed=train_sim.rng_seed,
    )
    run.say(f"trained on {len(items)} items ({len(log2)} survivors)")
    pair = fit_predictor_pair(
        items,
        log1,
        log2,
        cfg.round1_set,
        cfg.round2_set,
        config_first=cfg.learner.base,
        config_second=cfg.second_learner(),
        epsilon=cfg.ipw_epsilon,
        variant=cfg.ipw_variant,
    )
    seeds = (run.seed,) if args.seed is not None else cfg.evaluation.seeds
    report = compare_strategies(
        cfg.simulator,
        pair,
        cfg.constraint(),
        seeds,
        attach_delay_h=cfg.attach_delay_h,
    )
    fileio.write_comparison_report(report, run.path(REPORT_FILE))
    run.say(f"compared {len(seeds)} seeds -> {run.path(REPORT_FILE)}")
    if not run.quiet:
        print(fileio.render_comparison_report(report), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqcoupon",
        description="Two-round coupon allocation: simulate, train, allocate, evaluate, compare.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = (
        ("simulate", cmd_simulate, "generate a catalog and randomized two-round logs"),
        ("train", cmd_train, "grid-search and fit the two propensity models"),
        ("allocate", cmd_allocate, "plan coupon pairs for unsold catalog items"),
        ("evaluate", cmd_evaluate, "ranking curve and delay diagnostics"),
        ("compare", cmd_compare, "train then roll out the three strategies"),
    )
    for name, func, help_text in commands:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run config file")
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None, help="override the config's seed")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except MissingHoldoutError as exc:
        return _fail(EXIT_HOLDOUT, exc)
    except SchemaMismatchError as exc:
        return _fail(EXIT_SCHEMA, exc)
    except IdentifiabilityError as exc:
        return _fail(EXIT_IDENTIFIABILITY, exc)
    except (ManifestMismatchError, OSError) as exc:
        return _fail(EXIT_IO, exc)
    except InputError as exc:
        return _fail(EXIT_CONFIG, exc)
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    return EXIT_OK


def _fail(code: int, exc: BaseException) -> int:
    print(f"error: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
