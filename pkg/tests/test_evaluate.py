from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerocensus.errors import InputError
from aerocensus.evaluate import EvaluationReport, evaluate_predictions, score


class TestScore:
    def test_perfect_prediction(self):
        y = np.array([1.0, 2.0, 3.0])
        assert score(y, y) == (0.0, 1.0, False)

    def test_mean_predictor_r2_zero(self):
        y = np.array([1.0, 2.0, 3.0, 6.0])
        yhat = np.full(4, y.mean())
        mae, r2, flag = score(y, yhat)
        assert mae == pytest.approx(np.abs(y - y.mean()).mean())
        assert r2 == pytest.approx(0.0, abs=1e-12)
        assert not flag

    def test_hand_arithmetic(self):
        mae, r2, _ = score([1, 2, 3], [2, 2, 2])
        assert mae == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert r2 == pytest.approx(0.0, abs=1e-12)

    def test_zero_variance_flagged(self):
        mae, r2, flag = score([5, 5, 5], [4, 5, 6])
        assert flag is True and r2 == 0.0
        assert mae == pytest.approx(2.0 / 3.0)

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            score([1, 2], [1, 2, 3])
        with pytest.raises(InputError):
            score([], [])

    @given(
        y=st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=40),
        shift=st.floats(-1e5, 1e5),
        seed=st.integers(0, 100),
    )
    @settings(max_examples=150, deadline=None)
    def test_translation_consistency(self, y, shift, seed):
        y = np.asarray(y)
        yhat = y + np.random.default_rng(seed).normal(0, 1.0, len(y))
        mae0, r20, flag0 = score(y, yhat)
        mae1, r21, flag1 = score(y + shift, yhat + shift)
        assert mae1 == pytest.approx(mae0, rel=1e-9, abs=1e-9)
        if not flag0:
            assert r21 == pytest.approx(r20, rel=1e-6, abs=1e-9)


def test_evaluate_predictions_and_report_io(tmp_path):
    labels = pd.DataFrame({"geoid": ["a", "b", "c"], "label_density": [10.0, 20.0, 30.0]})
    preds = pd.DataFrame({"geoid": ["a", "b", "c"], "prediction": [12.0, 18.0, 33.0]})
    report = evaluate_predictions(labels, preds, "density", "supervised_resizing", "test")
    assert report.mae == pytest.approx((2 + 2 + 3) / 3)
    assert report.r2 < 1.0
    path = report.write(tmp_path)
    assert path.exists()
    per_item = pd.read_csv(tmp_path / "supervised_resizing_density_test.csv")
    assert list(per_item.columns) == ["geoid", "truth", "prediction"]
    assert len(per_item) == 3


def test_evaluate_predictions_rejects_unknown_geoid():
    labels = pd.DataFrame({"geoid": ["a"], "label_density": [1.0]})
    preds = pd.DataFrame({"geoid": ["a", "zz"], "prediction": [1.0, 2.0]})
    with pytest.raises(InputError, match="zz"):
        evaluate_predictions(labels, preds, "density", "m", "test")
