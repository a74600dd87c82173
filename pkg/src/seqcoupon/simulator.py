"""Synthetic C2C marketplace with a declared structural model of sale propensity.

The ground truth is a logistic model over the raw item features with a
multiplicative treatment term: discount size scaled by a per-item
responsiveness factor and an attach-delay multiplier that decays after a knee.
Buyer interest drops between rounds (lower round-2 base logit), purchase
timing slows with price, and a coupon sale landing outside the coupon's
validity window is recorded as unsold. Every downstream estimator in the
package can therefore be checked against exact propensities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng
from .domain import (
    N_ITEM_FEATURES,
    CouponConfig,
    CouponSet,
    ItemRecord,
    OutcomeRecord,
    item_feature_matrix,
)
from .errors import InputError

# Delay multiplier bottoms out here; round-2 attaches never happen earlier,
# which keeps the true round-2 propensity independent of the round-1 arm.
DELAY_FLOOR_AT_H = 48.0
ROUND2_MIN_DELAY_H = 48.0

_KEY_ACTION_EPOCH_H = 473_000.0  # arbitrary base for key-action timestamps


@dataclass(frozen=True)
class SimConfig:
    """Structural-model and sampling parameters. Values are simulator inventions."""

    n_items: int = 50_000
    rng_seed: int = 42
    base_logit_r1: float = 1.1
    base_logit_r2: float = 0.3
    feature_weights: tuple[float, ...] = (-0.30, 0.15, -0.004, 0.06, 0.45, 0.12, 0.08)
    effect_scale: float = 0.045
    delay_knee_h: float = 10.0
    delay_floor: float = 0.3
    purchase_time_rate: float = 0.35
    ltv_lognormal_params: tuple[float, float] = (9.2, 0.6)
    price_lognormal_params: tuple[float, float] = (8.1, 0.75)
    likes_rate: float = 3.0
    max_age_days: int = 90
    rct_max_delay_h: float = 36.0

    def __post_init__(self):
        if self.n_items < 0:
            raise InputError("n_items must be >= 0")
        if self.base_logit_r2 >= self.base_logit_r1:
            raise InputError("base_logit_r2 must be < base_logit_r1 (interest decays)")
        if len(self.feature_weights) != N_ITEM_FEATURES:
            raise InputError(
                f"feature_weights needs {N_ITEM_FEATURES} entries, got {len(self.feature_weights)}"
            )
        if self.effect_scale <= 0:
            raise InputError("effect_scale must be > 0")
        if not 0 < self.delay_floor <= 1:
            raise InputError("delay_floor must be in (0, 1]")
        if not 0 < self.delay_knee_h < DELAY_FLOOR_AT_H:
            raise InputError(f"delay_knee_h must be in (0, {DELAY_FLOOR_AT_H})")
        if self.purchase_time_rate <= 0:
            raise InputError("purchase_time_rate must be > 0")


@dataclass(frozen=True)
class RolloutTotals:
    sales_count: int
    coupon_cost_yen: int
    gmv_yen: int


class GroundTruth:
    """Oracle over the structural model; a deterministic function of SimConfig."""

    def __init__(self, config: SimConfig):
        self.config = config
        self._w = np.asarray(config.feature_weights, dtype=float)

    def delay_multiplier(self, attach_delay_h):
        """1 up to the knee, linear down to the floor at 48h, flat after."""
        cfg = self.config
        d = np.asarray(attach_delay_h, dtype=float)
        span = DELAY_FLOOR_AT_H - cfg.delay_knee_h
        frac = np.clip((d - cfg.delay_knee_h) / span, 0.0, 1.0)
        return 1.0 + (cfg.delay_floor - 1.0) * frac

    @staticmethod
    def responsiveness(likes):
        """Heterogeneous coupon responsiveness: 0.5 + min(likes, 10) / 10."""
        return 0.5 + np.minimum(np.asarray(likes, dtype=float), 10.0) / 10.0

    def base_logit(self, round: int) -> float:
        if round == 1:
            return self.config.base_logit_r1
        if round == 2:
            return self.config.base_logit_r2
        raise InputError(f"round must be 1 or 2, got {round}")

    def propensity_arrays(
        self,
        item_matrix: np.ndarray,
        likes: np.ndarray,
        discount_pct: np.ndarray,
        round: int,
        attach_delay_h: np.ndarray,
    ) -> np.ndarray:
        """Vectorised true propensity; discount 0 gives the untreated propensity."""
        logit = self.base_logit(round) + item_matrix @ self._w
        shift = (
            self.config.effect_scale
            * np.asarray(discount_pct, dtype=float)
            * self.responsiveness(likes)
            * self.delay_multiplier(attach_delay_h)
        )
        p = _sigmoid(logit + shift)
        return np.clip(p, 1e-15, 1.0 - 1e-15)


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def true_propensity(
    gt: GroundTruth,
    item: ItemRecord,
    coupon: CouponConfig,
    round: int,
    attach_delay_h: float,
) -> float:
    """Exact sale propensity for one (item, coupon, round, delay)."""
    if attach_delay_h < 0:
        raise InputError("attach_delay_h must be >= 0")
    m = item_feature_matrix([item])
    p = gt.propensity_arrays(
        m,
        np.array([item.likes]),
        np.array([float(coupon.discount_pct)]),
        round,
        np.array([float(attach_delay_h)]),
    )
    return float(p[0])


def generate_catalog(config: SimConfig) -> list[ItemRecord]:
    """Draw a catalog from the declared distributions; deterministic per seed."""
    n = config.n_items
    if n == 0:
        return []
    gen = np.random.default_rng([config.rng_seed, 0xCA7A])
    price_mu, price_sigma = config.price_lognormal_params
    ltv_mu, ltv_sigma = config.ltv_lognormal_params
    prices = np.maximum(1, np.rint(gen.lognormal(price_mu, price_sigma, n))).astype(int)
    conditions = gen.integers(1, 6, n)
    ages = gen.integers(0, config.max_age_days + 1, n)
    likes = gen.poisson(config.likes_rate, n)
    demand = gen.normal(0.0, 1.0, n)
    season = gen.uniform(0.0, 1.0, n)
    ltv = np.maximum(1, np.rint(gen.lognormal(ltv_mu, ltv_sigma, n))).astype(int)
    key_ts = _KEY_ACTION_EPOCH_H + gen.uniform(0.0, 8760.0, n)
    return [
        ItemRecord(
            item_id=f"it{i:07d}",
            seller_id=f"sl{i:07d}",
            price_yen=int(prices[i]),
            condition=int(conditions[i]),
            age_days=float(ages[i]),
            likes=int(likes[i]),
            demand_index=float(demand[i]),
            season_phase=float(season[i]),
            seller_ltv_yen=int(ltv[i]),
            key_action_ts=float(key_ts[i]),
        )
        for i in range(n)
    ]


@dataclass(frozen=True)
class CatalogArrays:
    """Column view of a catalog for the vectorised simulation and prediction paths."""

    items: tuple[ItemRecord, ...]
    ids: tuple[str, ...]
    keys: np.ndarray
    matrix: np.ndarray  # n x N_ITEM_FEATURES, raw item features
    price: np.ndarray
    likes: np.ndarray
    ltv: np.ndarray
    age_days: np.ndarray

    @classmethod
    def from_items(cls, items: Sequence[ItemRecord]) -> "CatalogArrays":
        items = tuple(items)
        return cls(
            items=items,
            ids=tuple(it.item_id for it in items),
            keys=rng.item_keys([it.item_id for it in items]),
            matrix=item_feature_matrix(items),
            price=np.array([it.price_yen for it in items], dtype=np.int64),
            likes=np.array([it.likes for it in items], dtype=np.int64),
            ltv=np.array([it.seller_ltv_yen for it in items], dtype=np.int64),
            age_days=np.array([it.age_days for it in items], dtype=float),
        )

    def __len__(self) -> int:
        return len(self.items)


def purchase_rate(config: SimConfig, price_yen) -> np.ndarray:
    """Exponential purchase-timing rate; pricier items take longer to sell."""
    price = np.asarray(price_yen, dtype=float)
    return config.purchase_time_rate / (1.0 + np.log(price / 1000.0 + 1.0))


def round2_attach_delay(round1_delay_h, round1_validity_h) -> np.ndarray:
    """Hours after the key action at which the round-2 coupon attaches."""
    d = np.asarray(round1_delay_h, dtype=float) + np.asarray(round1_validity_h, dtype=float)
    return np.maximum(ROUND2_MIN_DELAY_H, d)


def arm_draw(u: np.ndarray, probs: Sequence[float]) -> np.ndarray:
    cum = np.cumsum(np.asarray(probs, dtype=float))
    cum[-1] = 1.0
    return np.searchsorted(cum, u, side="right")


def validate_probs(probs: Sequence[float], n_arms: int, label: str):
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (n_arms,):
        raise InputError(f"{label}: need one probability per arm ({n_arms})")
    if np.any(probs < 0):
        raise InputError(f"{label}: probabilities must be >= 0")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise InputError(f"{label}: probabilities must sum to 1, got {probs.sum()}")


def _simulate_round(
    gt: GroundTruth,
    cat: CatalogArrays,
    idx: np.ndarray,
    coupons: list[CouponConfig],
    attach_delay_h: np.ndarray,
    round: int,
    seed: int,
    sale_tag: int,
    ptime_tag: int,
):
    """Bernoulli sale draws plus purchase timing with validity truncation.

    Returns (sold, purchase_delay_h) for the rows ``idx`` of the catalog;
    purchase_delay_h is NaN where unsold.
    """
    keys = cat.keys[idx]
    disc = np.array([c.discount_pct for c in coupons], dtype=float)
    validity = np.array([c.validity_hours for c in coupons], dtype=float)
    p = gt.propensity_arrays(cat.matrix[idx], cat.likes[idx], disc, round, attach_delay_h)
    sold = rng.uniforms(seed, keys, sale_tag) < p

    u_t = rng.uniforms(seed, keys, ptime_tag)
    lam = purchase_rate(gt.config, cat.price[idx])
    t = -np.log1p(-u_t) / lam

    # A coupon sale drawn past the validity window is recorded as unsold.
    real = disc > 0
    truncated = sold & real & (t > validity)
    sold = sold & ~truncated
    t = np.where(sold, t, np.nan)
    return sold, t


def _outcome(cat: CatalogArrays, i: int, round: int, coupon: CouponConfig,
             delay: float, sold: bool, t: float) -> OutcomeRecord:
    if sold:
        price = int(cat.price[i])
        return OutcomeRecord(
            item_id=cat.ids[i],
            round=round,
            coupon=coupon,
            attach_delay_h=float(delay),
            sold=True,
            purchase_delay_h=float(t),
            sale_price_yen=price,
            coupon_cost_yen=min((price * coupon.discount_pct) // 100, coupon.cap_yen),
        )
    return OutcomeRecord(
        item_id=cat.ids[i], round=round, coupon=coupon,
        attach_delay_h=float(delay), sold=False,
    )


def run_rct(
    gt: GroundTruth,
    items: Sequence[ItemRecord],
    round1_set: CouponSet,
    round2_set: CouponSet,
    round1_probs: Sequence[float],
    round2_probs: Sequence[float],
    seed: int,
) -> tuple[list[OutcomeRecord], list[str], list[OutcomeRecord]]:
    """Randomised two-round trial: independent arm draws per round with holdout.

    Returns (round1_log, survivor item ids, round2_log), each sorted by item_id.
    Survivors are exactly the items unsold after round 1.
    """
    validate_probs(round1_probs, len(round1_set), "round1_probs")
    validate_probs(round2_probs, len(round2_set), "round2_probs")
    if not items:
        return [], [], []
    cat = CatalogArrays.from_items(items)
    n = len(cat)
    order = np.argsort(np.array(cat.ids))

    arm1 = arm_draw(rng.uniforms(seed, cat.keys, rng.ARM_R1), round1_probs)
    delay1 = rng.uniforms(seed, cat.keys, rng.ATTACH_DELAY) * gt.config.rct_max_delay_h
    coupons1 = [round1_set[j] for j in arm1]
    sold1, t1 = _simulate_round(
        gt, cat, np.arange(n), coupons1, delay1, 1, seed, rng.SALE_R1, rng.PURCHASE_R1
    )

    round1_log = [
        _outcome(cat, i, 1, coupons1[i], delay1[i], bool(sold1[i]), t1[i]) for i in order
    ]

    surv_idx = np.flatnonzero(~sold1)
    survivors = sorted(cat.ids[i] for i in surv_idx)

    arm2 = arm_draw(rng.uniforms(seed, cat.keys[surv_idx], rng.ARM_R2), round2_probs)
    validity1 = np.array([coupons1[i].validity_hours for i in surv_idx])
    delay2 = round2_attach_delay(delay1[surv_idx], validity1)
    coupons2 = [round2_set[k] for k in arm2]
    sold2, t2 = _simulate_round(
        gt, cat, surv_idx, coupons2, delay2, 2, seed, rng.SALE_R2, rng.PURCHASE_R2
    )

    surv_order = np.argsort(np.array([cat.ids[i] for i in surv_idx]))
    round2_log = [
        _outcome(cat, surv_idx[s], 2, coupons2[s], delay2[s], bool(sold2[s]), t2[s])
        for s in surv_order
    ]
    return round1_log, survivors, round2_log


PolicyFn = Callable[[ItemRecord], tuple[tuple[CouponConfig, float], CouponConfig]]


def rollout_policy(
    gt: GroundTruth,
    items: Sequence[ItemRecord],
    policy: PolicyFn,
    seed: int,
) -> tuple[list[OutcomeRecord], RolloutTotals]:
    """Simulate both rounds under a per-item policy and tally exact totals.

    ``policy(item)`` returns ((round1 coupon, round1 attach delay), round2 coupon).
    Sale draws share substreams with run_rct, so different policies on the same
    seed are compared under common random numbers.
    """
    if not items:
        return [], RolloutTotals(0, 0, 0)
    cat = CatalogArrays.from_items(items)
    n = len(cat)

    plans = [policy(it) for it in cat.items]
    coupons1 = [p[0][0] for p in plans]
    delay1 = np.array([p[0][1] for p in plans], dtype=float)
    if np.any(delay1 < 0):
        raise InputError("policy produced a negative attach delay")
    sold1, t1 = _simulate_round(
        gt, cat, np.arange(n), coupons1, delay1, 1, seed, rng.SALE_R1, rng.PURCHASE_R1
    )

    surv_idx = np.flatnonzero(~sold1)
    coupons2 = [plans[i][1] for i in surv_idx]
    validity1 = np.array([coupons1[i].validity_hours for i in surv_idx])
    delay2 = round2_attach_delay(delay1[surv_idx], validity1)
    sold2, t2 = _simulate_round(
        gt, cat, surv_idx, coupons2, delay2, 2, seed, rng.SALE_R2, rng.PURCHASE_R2
    )

    order = np.argsort(np.array(cat.ids))
    records = [_outcome(cat, i, 1, coupons1[i], delay1[i], bool(sold1[i]), t1[i]) for i in order]
    surv_order = np.argsort(np.array([cat.ids[i] for i in surv_idx]))
    records += [
        _outcome(cat, surv_idx[s], 2, coupons2[s], delay2[s], bool(sold2[s]), t2[s])
        for s in surv_order
    ]

    sales = sum(1 for r in records if r.sold)
    cost = sum(r.coupon_cost_yen for r in records if r.sold)
    gmv = sum(r.sale_price_yen for r in records if r.sold)
    return records, RolloutTotals(sales_count=sales, coupon_cost_yen=cost, gmv_yen=gmv)
