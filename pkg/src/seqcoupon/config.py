"""Run configuration: a flat sectioned key=value file parsed into dataclasses.

Grammar (INI as understood by :mod:`configparser`, ``#``/``;`` comments):

    [simulator]      — any SimConfig field; omitted keys keep their defaults.
                       ``feature_weights``, ``ltv_lognormal_params`` and
                       ``price_lognormal_params`` are comma-separated numbers.
    [coupons.round1] — ``arms = disc:validity_h:cap_yen, ...`` listing the real
    [coupons.round2]   coupon arms. The no-coupon control arm is always present
                       as arm 0 and must not be listed (a 0% arm is an error).
    [learner]        — first-round learner: kind, learning_rate, l2, epochs,
                       max_stumps, rng_seed, k_folds; optional ``grid_<key>``
                       comma lists expand to a cartesian candidate grid.
    [learner.second] — optional overrides for the second-round learner
                       (no grid); defaults to the [learner] point values.
    [policy]         — lift_threshold, attach_delay_h, ipw_epsilon,
                       ipw_variant, optional ltv_override.
    [evaluation]     — deciles, bootstrap_b, bucket_h, seeds (comma list),
                       train_seed, train_n_items.
    [io]             — catalog, round1_log, round2_log, model_dir: the paths
                       commands read their inputs from (relative paths resolve
                       against the process working directory). All must be
                       distinct.

Any unknown section or key is an error, reported with the file name and the
offending section/key so typos fail loudly instead of silently reverting to a
default.
"""

from __future__ import annotations

import configparser
import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

from .decision import DEFAULT_ATTACH_DELAY_H, PolicyConstraint
from .domain import CouponConfig, CouponSet
from .errors import InputError
from .learner import LearnerConfig
from .simulator import SimConfig
from .uplift import IPW_EPSILON_DEFAULT


@dataclass(frozen=True)
class LearnerSection:
    """First-round learner point config plus its optional search grid."""

    base: LearnerConfig
    grid: tuple[LearnerConfig, ...]
    k_folds: int = 5


@dataclass(frozen=True)
class EvaluationSection:
    deciles: int = 10
    bootstrap_b: int = 200
    bucket_h: float = 2.0
    seeds: tuple[int, ...] = (7,)
    train_seed: int = 1000
    train_n_items: int = 50_000

    def __post_init__(self):
        if not self.seeds:
            raise InputError("seeds must be non-empty")
        if self.train_n_items <= 0:
            raise InputError("train_n_items must be > 0")


@dataclass(frozen=True)
class IoSection:
    catalog: str = "catalog.csv"
    round1_log: str = "round1_log.csv"
    round2_log: str = "round2_log.csv"
    model_dir: str = "model"

    def __post_init__(self):
        paths = [self.catalog, self.round1_log, self.round2_log, self.model_dir]
        if len(set(paths)) != len(paths):
            raise InputError("paths must be distinct")


@dataclass(frozen=True)
class RunConfig:
    simulator: SimConfig = field(default_factory=SimConfig)
    round1_set: CouponSet = field(
        default_factory=lambda: _default_set(
            ((5, 72.0, 1000), (10, 72.0, 2000), (15, 72.0, 3000)), "round1"
        )
    )
    round2_set: CouponSet = field(
        default_factory=lambda: _default_set(
            ((5, 48.0, 1000), (10, 48.0, 2000), (15, 48.0, 3000)), "round2"
        )
    )
    learner: LearnerSection = field(
        default_factory=lambda: LearnerSection(
            base=_DEFAULT_LEARNER, grid=(_DEFAULT_LEARNER,)
        )
    )
    learner_second: Optional[LearnerConfig] = None
    lift_threshold: float = 0.01
    attach_delay_h: float = DEFAULT_ATTACH_DELAY_H
    ipw_epsilon: float = IPW_EPSILON_DEFAULT
    ipw_variant: str = "mean"
    ltv_override: Optional[float] = None
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    io: IoSection = field(default_factory=IoSection)

    def constraint(self) -> PolicyConstraint:
        return PolicyConstraint(
            lift_threshold=self.lift_threshold, ltv_override=self.ltv_override
        )

    def second_learner(self) -> LearnerConfig:
        return self.learner_second if self.learner_second is not None else self.learner.base


_DEFAULT_LEARNER = LearnerConfig(kind="logistic", learning_rate=1.0, epochs=1500)


def _default_set(arms, purpose: str) -> CouponSet:
    real = tuple(
        CouponConfig(discount_pct=d, validity_hours=v, cap_yen=c) for d, v, c in arms
    )
    return CouponSet(arms=(CouponConfig.none(),) + real, purpose=purpose)


def _parse_scalar(raw: str, target_type, where: str):
    raw = raw.strip()
    if target_type is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InputError(f"{where}: expected a boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError:
        raise InputError(
            f"{where}: expected {target_type.__name__}, got {raw!r}"
        ) from None


def _parse_tuple(raw: str, target_type, where: str) -> tuple:
    parts = [p for p in (s.strip() for s in raw.split(",")) if p]
    return tuple(_parse_scalar(p, target_type, where) for p in parts)


def _section(parser: configparser.ConfigParser, name: str) -> dict[str, str]:
    if not parser.has_section(name):
        return {}
    return dict(parser.items(name))


def _take(raw: dict[str, str], key: str) -> Optional[str]:
    return raw.pop(key, None)


def _reject_leftovers(raw: dict[str, str], section: str, path: str) -> None:
    if raw:
        key = sorted(raw)[0]
        raise InputError(f"{path}: [{section}] unknown key {key!r}")


_SIM_TYPES = {
    "n_items": int,
    "rng_seed": int,
    "base_logit_r1": float,
    "base_logit_r2": float,
    "effect_scale": float,
    "delay_knee_h": float,
    "delay_floor": float,
    "purchase_time_rate": float,
    "likes_rate": float,
    "max_age_days": int,
    "rct_max_delay_h": float,
}


def _parse_simulator_typed(raw: dict[str, str], path: str) -> SimConfig:
    kwargs = {}
    for name in list(raw):
        cell = raw.pop(name)
        where = f"{path}: [simulator] {name}"
        if name == "feature_weights":
            kwargs[name] = _parse_tuple(cell, float, where)
        elif name in ("ltv_lognormal_params", "price_lognormal_params"):
            pair = _parse_tuple(cell, float, where)
            if len(pair) != 2:
                raise InputError(f"{where}: expected two numbers, got {cell!r}")
            kwargs[name] = pair
        elif name in _SIM_TYPES:
            kwargs[name] = _parse_scalar(cell, _SIM_TYPES[name], where)
        else:
            raise InputError(f"{path}: [simulator] unknown key {name!r}")
    try:
        return SimConfig(**kwargs)
    except InputError as exc:
        raise InputError(f"{path}: [simulator] {exc}") from None


def _parse_coupon_set(raw: dict[str, str], section: str, purpose: str, path: str) -> CouponSet:
    cell = _take(raw, "arms")
    _reject_leftovers(raw, section, path)
    if cell is None:
        raise InputError(f"{path}: [{section}] missing required key 'arms'")
    arms = [CouponConfig.none()]
    for part in (s.strip() for s in cell.split(",")):
        if not part:
            continue
        pieces = part.split(":")
        if len(pieces) != 3:
            raise InputError(
                f"{path}: [{section}] arm {part!r} must be disc:validity_h:cap_yen"
            )
        where = f"{path}: [{section}] arm {part!r}"
        disc = _parse_scalar(pieces[0], int, where)
        if disc == 0:
            raise InputError(
                f"{where}: the no-coupon control arm is implicit; do not list a 0% arm"
            )
        arms.append(
            CouponConfig(
                discount_pct=disc,
                validity_hours=_parse_scalar(pieces[1], float, where),
                cap_yen=_parse_scalar(pieces[2], int, where),
            )
        )
    if len(arms) < 2:
        raise InputError(f"{path}: [{section}] needs at least one real coupon arm")
    try:
        return CouponSet(arms=tuple(arms), purpose=purpose)
    except InputError as exc:
        raise InputError(f"{path}: [{section}] {exc}") from None


_LEARNER_TYPES = {
    "kind": str,
    "learning_rate": float,
    "l2": float,
    "epochs": int,
    "max_stumps": int,
    "rng_seed": int,
}


def _learner_point(raw: dict[str, str], section: str, path: str) -> LearnerConfig:
    kwargs = {}
    for name, typ in _LEARNER_TYPES.items():
        cell = _take(raw, name)
        if cell is not None:
            kwargs[name] = _parse_scalar(cell, typ, f"{path}: [{section}] {name}")
    try:
        return LearnerConfig(**kwargs)
    except InputError as exc:
        raise InputError(f"{path}: [{section}] {exc}") from None


def _parse_learner(raw: dict[str, str], path: str) -> LearnerSection:
    k_folds_cell = _take(raw, "k_folds")
    k_folds = (
        _parse_scalar(k_folds_cell, int, f"{path}: [learner] k_folds")
        if k_folds_cell is not None
        else 5
    )
    grid_cells = {}
    for name in list(raw):
        if name.startswith("grid_"):
            key = name[len("grid_") :]
            if key not in _LEARNER_TYPES or key == "kind":
                raise InputError(f"{path}: [learner] unknown key {name!r}")
            grid_cells[key] = _parse_tuple(
                raw.pop(name), _LEARNER_TYPES[key], f"{path}: [learner] {name}"
            )
    base = _learner_point(raw, "learner", path)
    _reject_leftovers(raw, "learner", path)
    if not grid_cells:
        return LearnerSection(base=base, grid=(base,), k_folds=k_folds)
    for key, values in grid_cells.items():
        if not values:
            raise InputError(f"{path}: [learner] grid_{key} must list at least one value")
    keys = sorted(grid_cells)
    grid = []
    for combo in itertools.product(*(grid_cells[k] for k in keys)):
        try:
            grid.append(replace(base, **dict(zip(keys, combo))))
        except InputError as exc:
            raise InputError(f"{path}: [learner] grid point {combo!r}: {exc}") from None
    return LearnerSection(base=base, grid=tuple(grid), k_folds=k_folds)


def _parse_policy(raw: dict[str, str], path: str) -> dict:
    out = {}
    for name, typ in (
        ("lift_threshold", float),
        ("attach_delay_h", float),
        ("ipw_epsilon", float),
        ("ipw_variant", str),
        ("ltv_override", float),
    ):
        cell = _take(raw, name)
        if cell is not None:
            out[name] = _parse_scalar(cell, typ, f"{path}: [policy] {name}")
    _reject_leftovers(raw, "policy", path)
    if out.get("ipw_variant") not in (None, "mean", "applied"):
        raise InputError(
            f"{path}: [policy] ipw_variant must be 'mean' or 'applied', "
            f"got {out['ipw_variant']!r}"
        )
    return out


def _parse_evaluation(raw: dict[str, str], path: str) -> EvaluationSection:
    kwargs = {}
    for name, typ in (
        ("deciles", int),
        ("bootstrap_b", int),
        ("bucket_h", float),
        ("train_seed", int),
        ("train_n_items", int),
    ):
        cell = _take(raw, name)
        if cell is not None:
            kwargs[name] = _parse_scalar(cell, typ, f"{path}: [evaluation] {name}")
    cell = _take(raw, "seeds")
    if cell is not None:
        kwargs["seeds"] = _parse_tuple(cell, int, f"{path}: [evaluation] seeds")
    _reject_leftovers(raw, "evaluation", path)
    try:
        return EvaluationSection(**kwargs)
    except InputError as exc:
        raise InputError(f"{path}: [evaluation] {exc}") from None


def _parse_io(raw: dict[str, str], path: str) -> IoSection:
    kwargs = {}
    for name in ("catalog", "round1_log", "round2_log", "model_dir"):
        cell = _take(raw, name)
        if cell is not None:
            kwargs[name] = cell.strip()
    _reject_leftovers(raw, "io", path)
    try:
        return IoSection(**kwargs)
    except InputError as exc:
        raise InputError(f"{path}: [io] {exc}") from None


_KNOWN_SECTIONS = (
    "simulator",
    "coupons.round1",
    "coupons.round2",
    "learner",
    "learner.second",
    "policy",
    "evaluation",
    "io",
)


def load_config(path: str) -> RunConfig:
    """Parse and validate a config file; raises InputError with diagnostics."""
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";")
    )
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not a text file: {exc}") from None
    for section in parser.sections():
        if section not in _KNOWN_SECTIONS:
            raise InputError(f"{path}: unknown section [{section}]")

    kwargs: dict = {}
    kwargs["simulator"] = _parse_simulator_typed(_section(parser, "simulator"), path)
    if parser.has_section("coupons.round1"):
        kwargs["round1_set"] = _parse_coupon_set(
            _section(parser, "coupons.round1"), "coupons.round1", "round1", path
        )
    if parser.has_section("coupons.round2"):
        kwargs["round2_set"] = _parse_coupon_set(
            _section(parser, "coupons.round2"), "coupons.round2", "round2", path
        )
    if parser.has_section("learner"):
        kwargs["learner"] = _parse_learner(_section(parser, "learner"), path)
    if parser.has_section("learner.second"):
        raw = _section(parser, "learner.second")
        kwargs["learner_second"] = _learner_point(raw, "learner.second", path)
        _reject_leftovers(raw, "learner.second", path)
    kwargs.update(_parse_policy(_section(parser, "policy"), path))
    kwargs["evaluation"] = _parse_evaluation(_section(parser, "evaluation"), path)
    kwargs["io"] = _parse_io(_section(parser, "io"), path)
    try:
        return RunConfig(**kwargs)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None
