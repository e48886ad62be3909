import numpy as np
import pytest

from common.errors import SelectionError
from common.selection_controller import (
    Dimension,
    SearchSpace,
    search,
    select_classifier,
    tscv_plan,
)

SPACE = SearchSpace((Dimension.parse("x", "real:0:1"), Dimension.parse("y", "real:0:1")))


def bowl(params):
    return -((params["x"] - 0.3) ** 2) - (params["y"] - 0.7) ** 2


def test_tscv_plan_splits_into_growing_windows():
    plan = tscv_plan(90, 3)
    assert plan.folds == ((0, 30), (30, 60), (60, 90))
    assert plan.iterations == (((0, 30), (30, 60)), ((0, 60), (60, 90)))


def test_tscv_last_fold_takes_the_remainder():
    plan = tscv_plan(10, 3)
    assert plan.folds == ((0, 3), (3, 6), (6, 10))


def test_tscv_rejects_bad_fold_counts():
    with pytest.raises(SelectionError):
        tscv_plan(90, 1)
    with pytest.raises(SelectionError):
        tscv_plan(2, 3)


def test_budget_of_one_runs_a_single_trial():
    result = search(SPACE, bowl, 1, seed=0)
    assert len(result.trace) == 1
    assert result.trace[0].phase == "random"
    assert result.best_score == result.trace[0].score


def test_search_is_deterministic_per_seed():
    a = search(SPACE, bowl, 20, seed=5)
    b = search(SPACE, bowl, 20, seed=5)
    assert [t.params for t in a.trace] == [t.params for t in b.trace]
    assert a.best_params == b.best_params


def test_bayes_warms_up_then_models():
    result = search(SPACE, bowl, 12, seed=1, strategy="bayes")
    assert [t.phase for t in result.trace] == ["random"] * 3 + ["model"] * 9


def test_bayes_beats_random_median():
    bayes = [search(SPACE, bowl, 50, seed=s, strategy="bayes").best_score for s in range(20)]
    random = [search(SPACE, bowl, 50, seed=s, strategy="random").best_score for s in range(20)]
    assert np.median(bayes) >= np.median(random)


def test_failing_trial_scores_zero():
    def objective(params):
        if params["x"] > 0.5:
            raise RuntimeError("boom")
        return -1.0

    result = search(SPACE, objective, 10, seed=3, strategy="random")
    for trial in result.trace:
        assert trial.score == (0.0 if trial.params["x"] > 0.5 else -1.0)


def test_best_is_earliest_among_ties():
    result = search(SPACE, lambda params: 1.0, 5, seed=0)
    assert result.best_params == result.trace[0].params


def test_trace_rows_serialize_params():
    rows = search(SPACE, bowl, 3, seed=0).trace_rows()
    assert [r["trial"] for r in rows] == [0, 1, 2]
    assert rows[0]["params_json"].startswith('{"x": ')


def test_dimension_parse_and_decode():
    ints = Dimension.parse("max_depth", "int:2:5")
    assert (ints.decode(0.0), ints.decode(1.0)) == (2, 5)
    logs = Dimension.parse("l2_penalty", "real:0.01:100:log")
    assert logs.log and logs.decode(0.5) == pytest.approx(1.0)
    cats = Dimension.parse("kind", "cat:gbt|logreg")
    assert cats.choices == ("gbt", "logreg") and cats.decode(1) == "logreg"
    assert logs.to_text() == "real:0.01:100:log"


@pytest.mark.parametrize("text", ["int:5", "real:a:b", "real:1:2:ln", "poly:1:2", "real:5:1", "real:0:1:log"])
def test_dimension_parse_rejects_malformed_text(text):
    with pytest.raises(SelectionError):
        Dimension.parse("d", text)


def test_search_rejects_bad_arguments():
    with pytest.raises(SelectionError, match="budget"):
        search(SPACE, bowl, 0, seed=0)
    with pytest.raises(SelectionError, match="strategy"):
        search(SPACE, bowl, 5, seed=0, strategy="grid")


def _stream(rows=240, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(rows, 3))
    y = (X[:, 0] + 0.3 * rng.normal(size=rows) > 1.0).astype(int)
    return X, y


def test_select_classifier_returns_searched_spec():
    X, y = _stream()
    space = SearchSpace((Dimension.parse("max_depth", "int:1:3"),))
    spec, result = select_classifier("gbt", {"n_trees": 10}, space, X, [y], budget=3, seed=2)
    assert spec.kind == "gbt"
    assert spec.hyperparameters["n_trees"] == 10
    assert spec.hyperparameters["max_depth"] == result.best_params["max_depth"]
    assert len(result.trace) == 3
    assert 0.0 <= result.best_score <= 1.0


def test_select_classifier_keeps_fixed_on_too_few_rows():
    X, y = _stream(rows=2)
    space = SearchSpace((Dimension.parse("max_depth", "int:1:3"),))
    spec, result = select_classifier("gbt", {"max_depth": 2}, space, X, [y], budget=3, seed=2)
    assert spec.hyperparameters["max_depth"] == 2
    assert result.trace == ()


def test_bayes_single_run_reaches_random_median_on_a_peak():
    space = SearchSpace((Dimension.parse("x", "real:0:1"),))

    def peak(params):
        return 1.0 - abs(params["x"] - 0.7)

    bayes = search(space, peak, 50, seed=0, strategy="bayes").best_score
    random = [search(space, peak, 50, seed=s, strategy="random").best_score for s in range(20)]
    assert bayes >= np.median(random)
