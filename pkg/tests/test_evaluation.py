"""RMSE reporting, method equivalences, sweeps, and the timing bench."""

import numpy as np
import pytest

from difnet.datasets import generate_dataset
from difnet.distribution import InternodalTransform
from difnet.evaluation import (
    bench_fusion_time,
    evaluate_methods,
    position_velocity_split,
    centralized_equivalence_deviation,
    rmse_curve,
    run_method,
    sigma_sweep,
)
from difnet.network import default_dims, init_model


class TestRmseArithmetic:
    def test_single_error_vector(self):
        # one trajectory, one step, error (3,4) in the position components
        errors = np.zeros((1, 1, 4))
        errors[0, 0, 0] = 3.0
        errors[0, 0, 2] = 4.0
        rmse, stderr = rmse_curve(errors, [0, 2])
        np.testing.assert_allclose(rmse, [5.0])
        np.testing.assert_allclose(stderr, [0.0])

    def test_zero_errors(self):
        rmse, _ = rmse_curve(np.zeros((3, 5, 4)), [0, 2])
        np.testing.assert_array_equal(rmse, np.zeros(5))

    def test_order_invariance(self):
        rng = np.random.default_rng(0)
        errors = rng.normal(size=(6, 4, 2))
        a, _ = rmse_curve(errors, [0, 1])
        b, _ = rmse_curve(errors[::-1], [0, 1])
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_split_classification(self):
        t1 = InternodalTransform(1, np.hstack([np.eye(4), np.zeros((4, 2))]))
        pos, vel = position_velocity_split(t1)
        assert pos == [0, 2] and vel == [1, 3]
        t4 = InternodalTransform(4, np.hstack([np.zeros((2, 4)), np.eye(2)]))
        pos, vel = position_velocity_split(t4)
        assert pos == [0] and vel == [1]

    def test_split_rejects_non_selector(self):
        t = InternodalTransform(1, np.array([[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]]))
        with pytest.raises(ValueError):
            position_velocity_split(t)


class TestMethodEquivalences:
    def test_centralized_equals_dif_exact_linear(
        self, linear_scenario, small_linear_dataset
    ):
        cen = run_method("centralized-exact", small_linear_dataset, linear_scenario)
        dec = run_method("dif-exact", small_linear_dataset, linear_scenario)
        for sid in (1, 2, 3, 4):
            np.testing.assert_allclose(
                cen.rmse_pos[sid], dec.rmse_pos[sid], rtol=1e-8
            )
            np.testing.assert_allclose(
                cen.rmse_vel[sid], dec.rmse_vel[sid], rtol=1e-8
            )

    def test_centralized_equivalence_deviation_small(self, linear_scenario, small_linear_dataset):
        dev = centralized_equivalence_deviation(small_linear_dataset, linear_scenario)
        assert dev["max_rel_mean"] < 1e-10
        assert dev["max_rel_cov"] < 1e-10

    def test_unknown_method_rejected(self, linear_scenario, small_linear_dataset):
        with pytest.raises(ValueError, match="unknown method"):
            run_method("nope", small_linear_dataset, linear_scenario)

    def test_difnet_requires_models(self, linear_scenario, small_linear_dataset):
        with pytest.raises(ValueError, match="trained models"):
            run_method("difnet", small_linear_dataset, linear_scenario)

    def test_divergent_lane_excluded_and_reported(
        self, linear_scenario, small_linear_dataset
    ):
        import copy

        ds = copy.deepcopy(small_linear_dataset)
        ds.splits["test"][1].measurements[1][:, :] = np.nan
        dims = default_dims(6, 4)
        models = {i: init_model(dims, seed=0) for i in (1, 2, 3, 4)}
        rep = run_method("difnet", ds, linear_scenario, models=models)
        assert 1 in rep.diverged
        for sid in (1, 2, 3, 4):
            assert np.isfinite(rep.rmse_pos[sid]).all()


class TestSweepAndBench:
    def test_sigma_zero_matches_nominal(self, linear_scenario):
        import dataclasses

        scn = dataclasses.replace(linear_scenario, split_sizes=(2, 1, 2))
        rows = sigma_sweep([0.0], scn, seed=3, methods=["dif-exact"])
        nominal = run_method(
            "dif-exact", generate_dataset(scn, seed=3), scn
        )
        entry = next(r for r in rows if r["sensor"] == 3)
        np.testing.assert_allclose(entry["mean_rmse_pos"], nominal.mean_pos(3))

    def test_sweep_table_shape(self, linear_scenario):
        import dataclasses

        scn = dataclasses.replace(linear_scenario, split_sizes=(1, 1, 2))
        rows = sigma_sweep(
            [0.0, 0.25, 0.5, 0.75], scn, seed=3, methods=["dif-exact", "cumn"]
        )
        assert len(rows) == 4 * 2 * 4  # sigmas x methods x sensors
        assert {r["sigma"] for r in rows} == {0.0, 0.25, 0.5, 0.75}

    def test_bench_reference_ratio_is_one(self, linear_scenario, small_linear_dataset):
        table = bench_fusion_time(
            ["dif-exact", "cumn"],
            small_linear_dataset,
            linear_scenario,
            repetitions=5,
            warmup=1,
        )
        assert table["dif-exact"]["ratio_vs_dif_exact"] == pytest.approx(1.0)
        assert table["cumn"]["median_seconds"] > 0

    def test_bench_requires_reference(self, linear_scenario, small_linear_dataset):
        with pytest.raises(ValueError, match="dif-exact"):
            bench_fusion_time(
                ["cumn"], small_linear_dataset, linear_scenario, repetitions=2
            )


class TestReports:
    def test_report_rows_cover_all_methods(self, linear_scenario, small_linear_dataset):
        report = evaluate_methods(
            ["dif-exact", "cumn"], small_linear_dataset, linear_scenario
        )
        rows = report.rows()
        assert {r["method"] for r in rows} == {"dif-exact", "cumn"}
        assert len(rows) == 2 * 4 * 50
        summary = report.summary_rows()
        assert len(summary) == 2 * 4
        assert all(r["mean_rmse_pos"] >= 0 for r in summary)

    def test_fingerprints_distinguish_parameter_sets(
        self, linear_scenario, small_linear_dataset
    ):
        report = evaluate_methods(
            ["dif-exact", "dif-inexact"], small_linear_dataset, linear_scenario
        )
        fp_exact = report.methods["dif-exact"].fingerprint
        fp_inexact = report.methods["dif-inexact"].fingerprint
        assert fp_exact["q"] == 1.0
        assert fp_inexact["q"] == 5.0
        assert fp_exact["r_sha256"] != fp_inexact["r_sha256"]
