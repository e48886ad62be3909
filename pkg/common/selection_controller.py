import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from common.errors import SelectionError
from common.evaluation_controller import DEFAULT_BETA, rowwise_fbeta
from common.learner_controller import ClassifierSpec, fit, predict_proba
from utils.log import get_logger

logger = get_logger(__name__)

# --- Configuration ---
STRATEGIES = ("random", "bayes")
GOOD_FRACTION = 0.25
N_CANDIDATES = 24
MIN_BANDWIDTH = 1e-3
DIMENSION_TYPES = ("real", "int", "cat")


# --- Time-series cross-validation ---
@dataclass(frozen=True)
class TSCVPlan:
    K: int
    folds: tuple
    iterations: tuple  # ((train_start, train_stop), (val_start, val_stop))


def tscv_plan(length, K):
    """K contiguous folds; iteration k trains on folds 1..k and validates on fold k+1."""
    if K < 2:
        raise SelectionError(f"TSCV needs K >= 2 folds, got {K}")
    if length < K:
        raise SelectionError(f"TSCV cannot split {length} rows into {K} folds")
    size = length // K
    folds = tuple((i * size, (i + 1) * size if i < K - 1 else length) for i in range(K))
    iterations = tuple(((0, folds[k - 1][1]), folds[k]) for k in range(1, K))
    return TSCVPlan(K, folds, iterations)


# --- Search space ---
@dataclass(frozen=True)
class Dimension:
    name: str
    type: str
    low: Optional[float] = None
    high: Optional[float] = None
    choices: tuple = ()
    log: bool = False

    def __post_init__(self):
        if self.type not in DIMENSION_TYPES:
            raise SelectionError(f"{self.name}: unknown dimension type '{self.type}'")
        if self.type == "cat":
            if not self.choices:
                raise SelectionError(f"{self.name}: categorical dimension needs choices")
            return
        if self.low is None or self.high is None or not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise SelectionError(f"{self.name}: bounds must be finite")
        if self.low > self.high:
            raise SelectionError(f"{self.name}: low {self.low} above high {self.high}")
        if self.log and self.low <= 0:
            raise SelectionError(f"{self.name}: log scale requires positive bounds")

    @classmethod
    def parse(cls, name, text):
        """`int:2:5`, `real:0.03:0.3:log` or `cat:a|b`."""
        parts = [p.strip() for p in str(text).split(":")]
        kind = parts[0]
        try:
            if kind == "cat" and len(parts) == 2:
                return cls(name, "cat", choices=tuple(c.strip() for c in parts[1].split("|") if c.strip()))
            if kind in ("int", "real") and len(parts) in (3, 4):
                log = len(parts) == 4 and parts[3] == "log"
                if len(parts) == 4 and not log:
                    raise ValueError(f"unknown scale '{parts[3]}'")
                return cls(name, kind, float(parts[1]), float(parts[2]), log=log)
        except ValueError as e:
            raise SelectionError(f"{name}: malformed search dimension '{text}': {e}") from e
        raise SelectionError(f"{name}: malformed search dimension '{text}'")

    def to_text(self):
        if self.type == "cat":
            return "cat:" + "|".join(self.choices)
        bounds = f"{self.type}:{self.low:g}:{self.high:g}"
        return bounds + (":log" if self.log else "")

    def decode(self, u):
        """Maps a unit-interval coordinate (or a choice index for categoricals) to a value."""
        if self.type == "cat":
            return self.choices[int(u)]
        if self.log:
            value = math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))
        else:
            value = self.low + u * (self.high - self.low)
        if self.type == "int":
            return int(min(max(round(value), math.ceil(self.low)), math.floor(self.high)))
        return float(value)


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple = ()

    def __len__(self):
        return len(self.dimensions)

    def decode(self, point):
        return {d.name: d.decode(u) for d, u in zip(self.dimensions, point)}


@dataclass(frozen=True)
class Trial:
    trial: int
    params: dict
    score: float
    phase: str


@dataclass(frozen=True)
class SearchResult:
    best_params: dict
    best_score: float
    trace: tuple = field(default_factory=tuple)

    def trace_rows(self):
        return [
            {"trial": t.trial, "params_json": json.dumps(t.params, sort_keys=True), "score": t.score, "phase": t.phase}
            for t in self.trace
        ]


def _random_point(rng, space):
    return [
        float(rng.integers(len(d.choices))) if d.type == "cat" else float(rng.random())
        for d in space.dimensions
    ]


def _bandwidth(points):
    if len(points) < 2:
        return 1.0 / 3.0
    return max(MIN_BANDWIDTH, float(np.std(points)) * len(points) ** (-1.0 / 5.0))


def _parzen_logpdf(u, centers):
    """Log density on [0, 1] of a uniform prior plus Gaussian kernels at the given centers."""
    mass = 1.0
    if len(centers):
        bw = _bandwidth(centers)
        mass = 1.0 + norm.pdf(u[:, None], loc=np.asarray(centers)[None, :], scale=bw).sum(axis=1)
    return np.log(mass) - np.log(len(centers) + 1.0)


def _tpe_point(rng, space, history):
    """One quantile-split density-ratio proposal from past (point, score) pairs."""
    ranked = sorted(range(len(history)), key=lambda i: -history[i][1])
    n_good = max(1, int(math.ceil(GOOD_FRACTION * len(history))))
    good = [history[i][0] for i in ranked[:n_good]]
    bad = [history[i][0] for i in ranked[n_good:]]
    point = []
    for d_index, dim in enumerate(space.dimensions):
        good_values = np.array([p[d_index] for p in good])
        bad_values = np.array([p[d_index] for p in bad])
        if dim.type == "cat":
            n_choices = len(dim.choices)
            l_prob = (np.bincount(good_values.astype(int), minlength=n_choices) + 1.0) / (len(good_values) + n_choices)
            g_prob = (np.bincount(bad_values.astype(int), minlength=n_choices) + 1.0) / (len(bad_values) + n_choices)
            candidates = rng.choice(n_choices, size=N_CANDIDATES, p=l_prob)
            ratio = np.log(l_prob[candidates]) - np.log(g_prob[candidates])
            point.append(float(candidates[int(np.argmax(ratio))]))
            continue
        bw = _bandwidth(good_values)
        component = rng.integers(len(good_values) + 1, size=N_CANDIDATES)
        uniform = rng.random(N_CANDIDATES)
        noise = rng.normal(size=N_CANDIDATES)
        centers = np.concatenate([good_values, [0.5]])[component]
        candidates = np.where(component == len(good_values), uniform, centers + bw * noise)
        candidates = np.clip(candidates, 0.0, 1.0)
        ratio = _parzen_logpdf(candidates, good_values) - _parzen_logpdf(candidates, bad_values)
        point.append(float(candidates[int(np.argmax(ratio))]))
    return point


def search(space, objective, budget, seed, strategy="bayes"):
    """
    Maximizes objective(params) over the space. random: budget seeded
    draws. bayes: ceil(budget / 4) seeded warm-up draws, then one
    good/bad density-ratio proposal per remaining trial. A trial whose
    objective raises scores 0.
    """
    if budget < 1:
        raise SelectionError(f"search budget must be >= 1, got {budget}")
    if strategy not in STRATEGIES:
        raise SelectionError(f"unknown search strategy '{strategy}'")
    rng = np.random.default_rng(seed)
    warmup = budget if strategy == "random" else int(math.ceil(budget / 4))
    history, trace = [], []
    for trial in range(budget):
        if trial < warmup or not len(space):
            point, phase = _random_point(rng, space), "random"
        else:
            point, phase = _tpe_point(rng, space, history), "model"
        params = space.decode(point)
        try:
            score = float(objective(params))
        except Exception as e:
            logger.warning(f"⚠️ trial {trial} failed ({e}); scored 0")
            score = 0.0
        if not math.isfinite(score):
            score = 0.0
        history.append((point, score))
        trace.append(Trial(trial, params, score, phase))
    best = max(range(len(trace)), key=lambda i: (trace[i].score, -i))
    return SearchResult(trace[best].params, trace[best].score, tuple(trace))


# --- Layered model selection ---
def validation_objective(kind, fixed, X, targets, seed, folds, beta, theta):
    """Mean validation event-wise F-beta over TSCV iterations and targets (rows as time)."""
    X = np.asarray(X, dtype=np.float64)
    targets = [np.asarray(t) for t in targets]
    plan = tscv_plan(len(X), folds)

    def objective(params):
        spec = ClassifierSpec(kind, {**fixed, **params}, seed)
        scores = []
        for (train_lo, train_hi), (val_lo, val_hi) in plan.iterations:
            for y in targets:
                model = fit(spec, X[train_lo:train_hi], y[train_lo:train_hi])
                p = predict_proba(model, X[val_lo:val_hi])
                scores.append(rowwise_fbeta(p, y[val_lo:val_hi], theta, beta))
        return float(np.mean(scores))

    return objective


def select_classifier(kind, fixed, space, X, targets, budget, seed, strategy="bayes", folds=3,
                      beta=DEFAULT_BETA, theta=0.5):
    """
    Picks hyperparameters for one layer by TSCV search and returns the
    winning ClassifierSpec with the search result. The caller refits it on
    all rows. Too few rows for the folds, or an empty space, keeps the
    fixed parameters.
    """
    fixed = dict(fixed)
    if len(X) < folds or not len(space):
        if len(X) < folds:
            logger.warning(f"⚠️ {len(X)} row(s) cannot fill {folds} folds; keeping fixed {kind} parameters")
        return ClassifierSpec(kind, fixed, seed), SearchResult({}, 0.0, ())
    objective = validation_objective(kind, fixed, X, targets, seed, folds, beta, theta)
    result = search(space, objective, budget, seed, strategy)
    return ClassifierSpec(kind, {**fixed, **result.best_params}, seed), result
