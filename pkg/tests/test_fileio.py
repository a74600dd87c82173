import json
import math
import os

import numpy as np
import pytest

from seqcoupon.decision import AllocationPlan
from seqcoupon.domain import CouponConfig
from seqcoupon.errors import InputError, ManifestMismatchError
from seqcoupon.evaluation import (
    BucketRow,
    ComparisonReport,
    DelayTables,
    StrategyMetrics,
    UpliftCurve,
)
from seqcoupon.fileio import (
    BUCKET_HEADER,
    CATALOG_HEADER,
    CURVE_HEADER,
    GRID_HEADER,
    MANIFEST_NAME,
    OUTCOME_HEADER,
    PLAN_HEADER,
    build_manifest,
    ensure_manifest,
    fmt,
    load_model,
    load_pair,
    read_catalog,
    read_outcomes,
    render_comparison_report,
    save_model,
    save_pair,
    sha256_of_file,
    write_catalog,
    write_curve,
    write_delay_tables,
    write_grid_table,
    write_outcomes,
    write_plans,
)
from seqcoupon.learner import GridResult, LearnerConfig, train
from seqcoupon.uplift import predict_batch

from test_learner import synthetic_dataset


def assert_records_close(left, right, float_fields, exact_fields):
    assert len(left) == len(right)
    for a, b in zip(left, right):
        for f in exact_fields:
            assert getattr(a, f) == getattr(b, f), f
        for f in float_fields:
            va, vb = getattr(a, f), getattr(b, f)
            if va is None or vb is None:
                assert va == vb, f
            else:
                assert va == pytest.approx(vb, rel=1e-11, abs=1e-11), f


class TestHeadersFrozen:
    def test_literal_headers(self):
        assert CATALOG_HEADER == (
            "item_id,seller_id,price_yen,condition,age_days,likes,"
            "demand_index,season_phase,seller_ltv_yen,key_action_ts"
        )
        assert OUTCOME_HEADER == (
            "item_id,round,discount_pct,validity_hours,cap_yen,attach_delay_h,"
            "sold,purchase_delay_h,sale_price_yen,coupon_cost_yen"
        )
        assert PLAN_HEADER == (
            "item_id,j_discount_pct,j_validity_h,j_cap,k_discount_pct,k_validity_h,"
            "k_cap,attach_delay_h,p_round1,p_round2,p_combined,p_baseline,lift,"
            "expected_cost,roi,feasible"
        )
        assert CURVE_HEADER == "fraction,uplift,lo,hi"
        assert BUCKET_HEADER == "bucket_start_h,metric,value,n"


class TestFmt:
    def test_cells(self):
        assert fmt(None) == ""
        assert fmt(math.inf) == "inf"
        assert fmt(2.0) == "2"
        assert fmt(0.1) == "0.1"
        assert fmt(1 / 3) == "0.333333333333"
        assert fmt(1e-30) == "1e-30"


class TestCatalogRoundTrip:
    def test_round_trip(self, tmp_path, small_world):
        items = small_world["items"][:100]
        path = str(tmp_path / "catalog.csv")
        write_catalog(items, path)
        with open(path) as fh:
            assert fh.readline().rstrip("\n") == CATALOG_HEADER
        back = read_catalog(path)
        assert_records_close(
            items,
            back,
            float_fields=("age_days", "demand_index", "season_phase", "key_action_ts"),
            exact_fields=(
                "item_id", "seller_id", "price_yen", "condition", "likes", "seller_ltv_yen",
            ),
        )

    def test_rerun_byte_identical(self, tmp_path, small_world):
        items = small_world["items"][:50]
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        write_catalog(items, a)
        write_catalog(items, b)
        assert sha256_of_file(a) == sha256_of_file(b)

    def test_empty_catalog_writes_header_only(self, tmp_path):
        path = str(tmp_path / "empty.csv")
        write_catalog([], path)
        with open(path) as fh:
            assert fh.read() == CATALOG_HEADER + "\n"
        assert read_catalog(path) == []

    def test_wrong_header_rejected(self, tmp_path):
        path = str(tmp_path / "bad.csv")
        with open(path, "w") as fh:
            fh.write("item_id,price_yen\nx,100\n")
        with pytest.raises(InputError):
            read_catalog(path)

    def test_empty_file_rejected(self, tmp_path):
        path = str(tmp_path / "nothing.csv")
        open(path, "w").close()
        with pytest.raises(InputError):
            read_catalog(path)

    def test_bad_cell_reported_with_location(self, tmp_path, small_world):
        path = str(tmp_path / "corrupt.csv")
        write_catalog(small_world["items"][:2], path)
        text = open(path).read().splitlines()
        parts = text[2].split(",")
        parts[2] = "not-a-price"
        text[2] = ",".join(parts)
        with open(path, "w") as fh:
            fh.write("\n".join(text) + "\n")
        with pytest.raises(InputError, match=r":3: .*price_yen"):
            read_catalog(path)


class TestOutcomeRoundTrip:
    def test_round_trip(self, tmp_path, small_world):
        records = small_world["log1"][:200] + small_world["log2"][:200]
        path = str(tmp_path / "log.csv")
        write_outcomes(records, path)
        back = read_outcomes(path)
        assert_records_close(
            records,
            back,
            float_fields=("attach_delay_h", "purchase_delay_h"),
            exact_fields=("item_id", "round", "coupon", "sold", "sale_price_yen", "coupon_cost_yen"),
        )

    def test_sold_flag_is_binary(self, tmp_path):
        path = str(tmp_path / "log.csv")
        with open(path, "w") as fh:
            fh.write(OUTCOME_HEADER + "\n")
            fh.write("it-1,1,0,0,0,2,yes,,,\n")
        with pytest.raises(InputError, match="sold"):
            read_outcomes(path)

    def test_zero_discount_reads_as_no_coupon(self, tmp_path):
        path = str(tmp_path / "log.csv")
        with open(path, "w") as fh:
            fh.write(OUTCOME_HEADER + "\n")
            fh.write("it-1,1,0,0,0,2,0,,,\n")
        (record,) = read_outcomes(path)
        assert record.coupon == CouponConfig.none()
        assert record.purchase_delay_h is None


class TestPlanWriter:
    def test_rows_and_inf_sentinel(self, tmp_path):
        free_lift = 0.5 - 0.4
        plan = AllocationPlan(
            item_id="it-free",
            j_index=0,
            k_index=1,
            round1_coupon=CouponConfig.none(),
            round2_coupon=CouponConfig(5, 72.0, 1000),
            attach_delay_h=2.0,
            p_round1=0.5,
            p_round2=0.0,
            p_combined=0.5,
            p_baseline=0.4,
            lift=free_lift,
            expected_cost=0.0,
            roi=math.inf,
            feasible=True,
        )
        path = str(tmp_path / "plans.csv")
        write_plans([plan], path)
        lines = open(path).read().splitlines()
        assert lines[0] == PLAN_HEADER
        cells = lines[1].split(",")
        assert cells[0] == "it-free"
        assert cells[1] == "0" and cells[4] == "5"
        assert cells[14] == "inf"
        assert cells[15] == "1"

    def test_empty_plan_list(self, tmp_path):
        path = str(tmp_path / "plans.csv")
        write_plans([], path)
        assert open(path).read() == PLAN_HEADER + "\n"


class TestCurveAndBuckets:
    def test_curve_without_bands(self, tmp_path):
        curve = UpliftCurve(points=((0.5, 0.12), (1.0, None)), random_reference=0.1)
        path = str(tmp_path / "curve.csv")
        write_curve(curve, path)
        lines = open(path).read().splitlines()
        assert lines == [CURVE_HEADER, "0.5,0.12,,", "1,,,"]

    def test_curve_with_bands(self, tmp_path):
        curve = UpliftCurve(
            points=((0.5, 0.12), (1.0, 0.1)),
            random_reference=0.1,
            bands=((0.05, 0.2), None),
        )
        path = str(tmp_path / "curve.csv")
        write_curve(curve, path)
        lines = open(path).read().splitlines()
        assert lines[1] == "0.5,0.12,0.05,0.2"
        assert lines[2] == "1,0.1,,"

    def test_delay_tables_layout(self, tmp_path):
        tables = DelayTables(
            bucket_h=2.0,
            lift_by_attach_delay=(BucketRow(0.0, 0.25, 40), BucketRow(2.0, None, 0)),
            str_by_purchase_delay=(BucketRow(0.0, 0.5, 20),),
            aov_by_purchase_delay=(BucketRow(0.0, 3200.0, 20),),
        )
        path = str(tmp_path / "buckets.csv")
        write_delay_tables(tables, path)
        lines = open(path).read().splitlines()
        assert lines == [
            BUCKET_HEADER,
            "0,lift_str,0.25,40",
            "2,lift_str,,0",
            "0,str,0.5,20",
            "0,aov,3200,20",
        ]


class TestModelArtifacts:
    def test_model_round_trip_is_exact(self, tmp_path):
        data, probe = synthetic_dataset(n=250)
        gen = np.random.default_rng(3)
        eval_matrix = gen.normal(size=(40, 3))
        for config in (
            LearnerConfig(kind="logistic", learning_rate=1.0, epochs=200),
            LearnerConfig(kind="boosted_stumps", learning_rate=0.3, max_stumps=12),
        ):
            model = train(data, config)
            path = str(tmp_path / f"{config.kind}.json")
            save_model(model, path)
            back = load_model(path)
            assert back.kind == model.kind
            assert back.schema_id == model.schema_id
            assert back.config == model.config
            assert back.stumps == model.stumps
            from seqcoupon.learner import predict_matrix

            assert np.array_equal(
                predict_matrix(back, eval_matrix), predict_matrix(model, eval_matrix)
            )

    def test_pair_round_trip_is_exact(self, tmp_path, trained_pair, small_world):
        out = str(tmp_path / "model")
        os.makedirs(out)
        save_pair(trained_pair, out)
        back = load_pair(out)
        assert back.round1_set == trained_pair.round1_set
        assert back.round2_set == trained_pair.round2_set
        assert back.ipw_epsilon == trained_pair.ipw_epsilon
        items = small_world["items"][:30]
        for got, want in zip(
            predict_batch(back, items, 2.0), predict_batch(trained_pair, items, 2.0)
        ):
            assert np.array_equal(got, want)

    def test_unsupported_format_version(self, tmp_path):
        data, _ = synthetic_dataset(n=60)
        model = train(data, LearnerConfig(epochs=5))
        path = str(tmp_path / "m.json")
        save_model(model, path)
        payload = json.load(open(path))
        payload["format_version"] = 99
        json.dump(payload, open(path, "w"))
        with pytest.raises(InputError, match="format_version"):
            load_model(path)

    def test_malformed_artifacts(self, tmp_path):
        bad = str(tmp_path / "bad.json")
        with open(bad, "w") as fh:
            fh.write("{not json")
        with pytest.raises(InputError):
            load_model(bad)
        with open(bad, "w") as fh:
            fh.write("[1, 2]")
        with pytest.raises(InputError):
            load_model(bad)
        with open(bad, "w") as fh:
            json.dump({"format_version": 1, "kind": "logistic"}, fh)
        with pytest.raises(InputError, match="malformed"):
            load_model(bad)


class TestGridTable:
    def test_layout(self, tmp_path):
        results = [
            GridResult(
                config=LearnerConfig(kind="logistic", learning_rate=0.5, epochs=100),
                mean_loss=0.5,
                fold_losses=(0.4, 0.6),
                prior_folds=(),
            ),
            GridResult(
                config=LearnerConfig(kind="boosted_stumps", max_stumps=7),
                mean_loss=0.25,
                fold_losses=(0.2, 0.3),
                prior_folds=(1,),
            ),
        ]
        path = str(tmp_path / "grid.csv")
        write_grid_table(results, path)
        lines = open(path).read().splitlines()
        assert lines[0] == GRID_HEADER
        assert lines[1] == "logistic,0.5,0,100,400,0,0.5,0.4;0.6,"
        assert lines[2] == "boosted_stumps,0.5,0,300,7,0,0.25,0.2;0.3,1"


class TestComparisonReportRendering:
    def make_report(self):
        metric = StrategyMetrics(
            sales_rate=0.5, lift_str=0.1, total_coupon_cost=1000, gmv=50000,
            roi_realized=12.5,
        )
        return ComparisonReport(
            strategies={"random": metric, "independent": metric, "sequential": metric},
            per_seed={
                "random": (metric,), "independent": (metric,), "sequential": (metric,),
            },
            holdout_sales_rate=0.4,
            seeds=(7,),
            lift_threshold=0.01,
            n_items_per_seed=100,
        )

    def test_stable_block_order(self):
        text = render_comparison_report(self.make_report())
        lines = text.splitlines()
        assert lines[0] == "strategy comparison"
        assert lines[1] == "seeds: 7"
        order = [ln for ln in lines if ln.startswith("[")]
        assert order == [
            "[random]", "[independent]", "[sequential]",
            "[per_seed roi_realized]", "[per_seed lift_str]",
        ]
        assert text == render_comparison_report(self.make_report())


class TestManifest:
    def test_fresh_write_then_match(self, tmp_path):
        out = str(tmp_path)
        manifest = build_manifest("simulate", "abc123", 42)
        ensure_manifest(out, manifest)
        assert os.path.exists(os.path.join(out, MANIFEST_NAME))
        ensure_manifest(out, manifest)  # identical rerun passes

    def test_mismatch_refused(self, tmp_path):
        out = str(tmp_path)
        ensure_manifest(out, build_manifest("simulate", "abc123", 42))
        with pytest.raises(ManifestMismatchError):
            ensure_manifest(out, build_manifest("simulate", "abc123", 43))
        with pytest.raises(ManifestMismatchError):
            ensure_manifest(out, build_manifest("train", "abc123", 42))

    def test_sha256_matches_hashlib(self, tmp_path):
        import hashlib

        path = str(tmp_path / "blob.bin")
        payload = b"deterministic bytes\n" * 100
        with open(path, "wb") as fh:
            fh.write(payload)
        assert sha256_of_file(path) == hashlib.sha256(payload).hexdigest()
