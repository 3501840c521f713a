"""Tests for the experiment protocols and their summaries."""

import csv
import math

import numpy as np
import pytest

from vega_align.errors import ProbeError
from vega_align.experiments import (
    ENCODER_VARIANTS,
    FRACTION_HEADER,
    TEACHER_ARMS,
    VARIANT_METRICS,
    ExperimentData,
    convergence_curves,
    data_sweep_summary,
    depth_probe,
    encoder_variant_experiment,
    fit_depth_probe,
    fraction_gaps,
    plain_teacher,
    summarize,
    summary_header,
    sweep_data_fraction,
    sweep_lambda,
    teacher_ablation,
    training_curves,
    write_rows,
)


@pytest.fixture
def short_config(tiny_train_config):
    return tiny_train_config.model_copy(update={"steps": 4, "decay_step": 2, "eval_interval": 2})


@pytest.fixture
def data(train_split, eval_easy_split, eval_hard_split):
    return ExperimentData(train_split, eval_easy_split, eval_hard_split)


def rate_row(fraction, variant, seed, easy, hard):
    return {
        "data_fraction": fraction, "variant": variant, "seed": seed,
        "easy_rate": easy, "hard_rate": hard,
    }


class TestProtocols:
    def test_lambda_sweep_rows(self, short_config, data, teacher):
        rows = sweep_lambda(short_config, data, teacher, grid=(0.05, 0.2), seeds=(0,))
        assert [r["align_lambda"] for r in rows] == [0.05, 0.2]
        assert all(0.0 <= r["easy_rate"] <= 1.0 for r in rows)

    def test_fraction_sweep_pairs_each_run_with_a_baseline(self, short_config, data, teacher):
        rows = sweep_data_fraction(short_config, data, teacher, fractions=(0.5,), seeds=(0, 1))
        assert [(r["variant"], r["seed"]) for r in rows] == [
            ("aligned", 0), ("baseline", 0), ("aligned", 1), ("baseline", 1),
        ]
        assert all(r["data_fraction"] == 0.5 for r in rows)

    def test_encoder_variants(self, short_config, data, teacher):
        rows = encoder_variant_experiment(short_config, data, teacher, seeds=(0,))
        assert [r["variant"] for r in rows] == list(ENCODER_VARIANTS)
        assert all(math.isfinite(r["final_action_loss"]) for r in rows)
        summary = summarize(rows, ("variant",), VARIANT_METRICS)
        assert summary[0]["final_action_loss_mean"] == rows[0]["final_action_loss"]

    def test_teacher_ablation_arms(self, short_config, data, teacher):
        rows = teacher_ablation(short_config, data, teacher, seeds=(0,))
        assert [r["teacher"] for r in rows] == list(TEACHER_ARMS)
        assert all(math.isfinite(r["probe_mse"]) and r["probe_mse"] >= 0.0 for r in rows)

    def test_plain_teacher_is_frozen_and_seeded(self, short_config, teacher):
        plain = plain_teacher(short_config, 0)
        assert plain.frozen
        assert plain.digest() != teacher.digest()
        assert plain.digest() == plain_teacher(short_config, 0).digest()
        assert plain.digest() != plain_teacher(short_config, 1).digest()

    def test_training_curves(self, short_config, data, teacher):
        rows = training_curves(short_config, data, teacher, seeds=(3,))
        assert [(r["variant"], r["step"]) for r in rows] == [
            ("aligned", 2), ("aligned", 4), ("baseline", 2), ("baseline", 4),
        ]
        assert all(r["seed"] == 3 for r in rows)

    def test_convergence_curves_compare_inits(self, short_config, data, teacher):
        rows = convergence_curves(short_config, data, teacher, seeds=(1,))
        assert [(r["variant"], r["step"]) for r in rows] == [
            ("plain-init", 2), ("plain-init", 4), ("teacher-init", 2), ("teacher-init", 4),
        ]
        assert all(math.isfinite(r["action_loss"]) for r in rows)
        plain, init = rows[0]["action_loss"], rows[2]["action_loss"]
        assert plain != init


class TestSummaries:
    def test_summarize_mean_and_sample_std(self):
        rows = [rate_row(0.5, "aligned", s, e, 0.0) for s, e in enumerate((0.2, 0.4, 0.6))]
        (entry,) = summarize(rows, ("data_fraction", "variant"))
        assert entry["runs"] == 3
        assert entry["easy_rate_mean"] == pytest.approx(0.4)
        assert entry["easy_rate_std"] == pytest.approx(0.2)
        assert entry["hard_rate_std"] == 0.0

    def test_single_run_has_zero_std(self):
        (entry,) = summarize([rate_row(1.0, "baseline", 0, 0.3, 0.1)], ("variant",))
        assert entry["easy_rate_std"] == 0.0

    def test_groups_keep_first_seen_order(self):
        rows = [rate_row(1.0, v, 0, 0.0, 0.0) for v in ("baseline", "aligned", "baseline")]
        assert [e["variant"] for e in summarize(rows, ("variant",))] == ["baseline", "aligned"]

    def test_fraction_gaps(self):
        rows = [
            rate_row(0.25, "aligned", 0, 0.6, 0.4),
            rate_row(0.25, "baseline", 0, 0.5, 0.1),
            rate_row(1.0, "aligned", 0, 0.9, 0.5),
            rate_row(1.0, "baseline", 0, 0.9, 0.4),
        ]
        gaps = fraction_gaps(rows)
        assert gaps[0.25]["easy_gap"] == pytest.approx(0.1)
        assert gaps[0.25]["hard_gap"] == pytest.approx(0.3)
        assert gaps[1.0]["easy_gap"] == pytest.approx(0.0)

    def test_missing_baseline_gives_nan_gap(self):
        summary = data_sweep_summary([rate_row(0.5, "aligned", 0, 0.5, 0.5)])
        assert math.isnan(summary[0]["easy_gap"])
        assert set(summary_header(("data_fraction", "variant"))) <= set(summary[0])

    def test_summary_header_follows_metrics(self):
        header = summary_header(("teacher",), ("probe_mse",))
        assert header == ("teacher", "runs", "probe_mse_mean", "probe_mse_std")

    def test_write_rows(self, tmp_path):
        rows = [rate_row(0.5, "aligned", 0, 0.25, 0.125)]
        write_rows(tmp_path / "out" / "rows.csv", FRACTION_HEADER, rows)
        with open(tmp_path / "out" / "rows.csv", newline="") as f:
            read = list(csv.DictReader(f))
        assert read == [
            {"data_fraction": "0.5", "variant": "aligned", "seed": "0",
             "easy_rate": "0.25", "hard_rate": "0.125"}
        ]


class TestDepthProbe:
    def test_exact_linear_target(self, np_rng):
        x = np_rng.normal(size=(40, 3))
        w = np.array([0.5, -1.0, 2.0])
        z = x @ w + 0.3
        result = fit_depth_probe(x[:30], z[:30], x[30:], z[30:], ridge=0.0)
        assert result.mse < 1e-20
        np.testing.assert_allclose(result.weights, [0.5, -1.0, 2.0, 0.3], atol=1e-10)
        assert (result.num_train, result.num_eval) == (30, 10)

    def test_singular_system(self, np_rng):
        col = np_rng.normal(size=(10, 1))
        x = np.hstack([col, col])
        with pytest.raises(ProbeError, match="singular"):
            fit_depth_probe(x, np.zeros(10), x, np.zeros(10), ridge=0.0)

    def test_probe_on_encoder(self, student, train_split, eval_easy_split):
        result = depth_probe(student, train_split, eval_easy_split)
        assert math.isfinite(result.mse) and result.mse >= 0.0
        assert result.weights.shape == (student.config.embed_dim + 1,)
        assert result.to_dict()["num_eval"] == len(eval_easy_split)
