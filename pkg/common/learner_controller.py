from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from common.errors import LearnerError

# --- Configuration ---
FORMAT_VERSION = 1
KINDS = ("gbt", "logreg")
PROBA_CLIP = 1e-9
CONSTANT_CLAMP = 1e-6
BACKTRACK_STEPS = 10
LINE_SEARCH_HALVINGS = 30
MIN_GAIN = 1e-12

GBT_DEFAULTS = {
    "n_trees": 100,
    "max_depth": 3,
    "learning_rate": 0.1,
    "min_leaf": 5,
    "subsample": 1.0,
    "reg_lambda": 1.0,
}
LOGREG_DEFAULTS = {
    "l2_penalty": 1.0,
    "max_iter": 100,
    "tol": 1e-6,
}
DEFAULTS = {"gbt": GBT_DEFAULTS, "logreg": LOGREG_DEFAULTS}

# (low, high, low_inclusive, integer)
RANGES = {
    "n_trees": (0, 2000, True, True),
    "max_depth": (1, 12, True, True),
    "learning_rate": (0.0, 1.0, False, False),
    "min_leaf": (1, 10**6, True, True),
    "subsample": (0.0, 1.0, False, False),
    "reg_lambda": (0.0, 1000.0, True, False),
    "l2_penalty": (0.0, 1e6, True, False),
    "max_iter": (1, 10**5, True, True),
    "tol": (0.0, 1.0, False, False),
}


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LearnerError(f"unknown classifier kind '{self.kind}' (expected one of {', '.join(KINDS)})")
        defaults = DEFAULTS[self.kind]
        unknown = sorted(set(self.hyperparameters) - set(defaults))
        if unknown:
            raise LearnerError(f"unknown {self.kind} hyperparameter(s): {', '.join(unknown)}")
        params = dict(defaults)
        for name, value in self.hyperparameters.items():
            low, high, low_inclusive, integer = RANGES[name]
            if integer:
                if float(value) != int(float(value)):
                    raise LearnerError(f"{name} must be an integer, got {value}")
                value = int(float(value))
            else:
                value = float(value)
            below = value < low if low_inclusive else value <= low
            if below or value > high:
                raise LearnerError(f"{name}={value} outside its declared range [{low}, {high}]")
            params[name] = value
        object.__setattr__(self, "hyperparameters", params)

    def to_dict(self):
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters), "seed": self.seed}

    @classmethod
    def from_dict(cls, data):
        return cls(data["kind"], dict(data["hyperparameters"]), int(data["seed"]))


@dataclass(frozen=True, eq=False)
class TrainedClassifier:
    spec: ClassifierSpec
    state: dict
    feature_dim: int
    feature_names: tuple = ()

    def predict_proba(self, X):
        return predict_proba(self, X)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "feature_dim": self.feature_dim,
            "feature_names": list(self.feature_names),
            "state": _state_to_dict(self.state),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != FORMAT_VERSION:
            raise LearnerError(f"unsupported model format {data.get('format_version')}")
        return cls(
            ClassifierSpec.from_dict(data["spec"]),
            _state_from_dict(data["state"]),
            int(data["feature_dim"]),
            tuple(data["feature_names"]),
        )


def _check_matrix(X, feature_dim=None):
    X = np.asarray(getattr(X, "rows", X), dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if feature_dim in (None, 1) else X.reshape(1, -1)
    if feature_dim is not None and X.shape[1] != feature_dim:
        raise LearnerError(f"dimension mismatch: model expects {feature_dim} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise LearnerError("non-finite features")
    return X


def class_weights(y):
    """Positive rows weigh negatives/positives so both classes carry equal total weight."""
    positives = int(y.sum())
    negatives = len(y) - positives
    weight = negatives / positives if positives else 1.0
    return np.where(y == 1, weight, 1.0)


def weighted_log_loss(y, logits, weights):
    return float(np.sum(weights * (np.logaddexp(0.0, logits) - y * logits)) / np.sum(weights))


# --- Gradient-boosted trees ---
class _TreeBuilder:
    """Grows one regression tree on gradient/hessian pairs into flat node arrays."""

    def __init__(self, X, g, h, max_depth, min_leaf, reg_lambda):
        self.X, self.g, self.h = X, g, h
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.reg_lambda = reg_lambda
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def _new_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.value) - 1

    def _best_split(self, rows):
        m = len(rows)
        if m < 2 * self.min_leaf:
            return None
        Xn = self.X[rows]
        order = np.argsort(Xn, axis=0, kind="stable")
        xs = np.take_along_axis(Xn, order, axis=0)
        gs = self.g[rows][order]
        hs = self.h[rows][order]
        G, H = gs[:, 0].sum(), hs[:, 0].sum()
        GL = np.cumsum(gs, axis=0)[:-1]
        HL = np.cumsum(hs, axis=0)[:-1]
        GR, HR = G - GL, H - HL
        lam = self.reg_lambda
        gain = GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam)
        left_count = np.arange(1, m)[:, None]
        valid = (xs[:-1] < xs[1:]) & (left_count >= self.min_leaf) & (m - left_count >= self.min_leaf)
        gain = np.where(valid, gain, -np.inf)
        # feature-major flattening: argmax picks the lowest feature, then the lowest threshold
        flat = gain.T.ravel()
        best = int(np.argmax(flat))
        if not np.isfinite(flat[best]) or flat[best] <= MIN_GAIN:
            return None
        f, i = divmod(best, m - 1)
        threshold = 0.5 * (xs[i, f] + xs[i + 1, f])
        if threshold >= xs[i + 1, f]:
            threshold = xs[i, f]
        return f, float(threshold)

    def build(self, rows, depth=0):
        node = self._new_node()
        split = self._best_split(rows) if depth < self.max_depth else None
        if split is None:
            self.value[node] = float(-self.g[rows].sum() / (self.h[rows].sum() + self.reg_lambda))
            return node
        f, threshold = split
        go_left = self.X[rows, f] <= threshold
        self.feature[node] = f
        self.threshold[node] = threshold
        self.left[node] = self.build(rows[go_left], depth + 1)
        self.right[node] = self.build(rows[~go_left], depth + 1)
        return node

    def arrays(self):
        return {
            "feature": np.array(self.feature, dtype=np.int64),
            "threshold": np.array(self.threshold, dtype=np.float64),
            "left": np.array(self.left, dtype=np.int64),
            "right": np.array(self.right, dtype=np.int64),
            "value": np.array(self.value, dtype=np.float64),
        }


def _tree_predict(tree, X):
    node = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    while True:
        internal = tree["left"][node] >= 0
        if not internal.any():
            return tree["value"][node]
        go_left = X[rows, np.maximum(tree["feature"][node], 0)] <= tree["threshold"][node]
        step = np.where(go_left, tree["left"][node], tree["right"][node])
        node = np.where(internal, step, node)


def _fit_gbt(params, X, y, seed):
    rng = np.random.default_rng(seed)
    weights = class_weights(y)
    rate = float(np.sum(weights * y) / np.sum(weights))
    base_score = float(np.log(rate / (1.0 - rate)))
    logits = np.full(len(y), base_score)
    loss = weighted_log_loss(y, logits, weights)
    trees, loss_trace = [], [loss]
    n_sample = max(1, int(round(params["subsample"] * len(y))))

    for _ in range(params["n_trees"]):
        p = expit(logits)
        g = weights * (p - y)
        h = np.maximum(weights * p * (1.0 - p), 1e-16)
        if n_sample < len(y):
            rows = np.sort(rng.choice(len(y), size=n_sample, replace=False))
        else:
            rows = np.arange(len(y))
        builder = _TreeBuilder(X, g, h, params["max_depth"], params["min_leaf"], params["reg_lambda"])
        builder.build(rows)
        tree = builder.arrays()
        step = params["learning_rate"] * _tree_predict(tree, X)

        scale = 1.0
        for _ in range(BACKTRACK_STEPS):
            candidate = weighted_log_loss(y, logits + scale * step, weights)
            if candidate <= loss:
                break
            scale *= 0.5
        else:
            scale = 0.0
        if scale > 0.0:
            tree["value"] = tree["value"] * (params["learning_rate"] * scale)
            trees.append(tree)
            logits = logits + scale * step
            loss = weighted_log_loss(y, logits, weights)
        loss_trace.append(loss)
    return {"kind": "gbt", "base_score": base_score, "trees": trees, "loss_trace": loss_trace}


def _predict_gbt(state, X):
    logits = np.full(len(X), state["base_score"])
    for tree in state["trees"]:
        logits += _tree_predict(tree, X)
    return expit(logits)


def _tree_to_nested(tree, node=0):
    if tree["left"][node] < 0:
        return {"leaf": float(tree["value"][node])}
    return {
        "feature": int(tree["feature"][node]),
        "threshold": float(tree["threshold"][node]),
        "left": _tree_to_nested(tree, int(tree["left"][node])),
        "right": _tree_to_nested(tree, int(tree["right"][node])),
    }


def _tree_from_nested(nested):
    columns = {"feature": [], "threshold": [], "left": [], "right": [], "value": []}

    def visit(item):
        node = len(columns["value"])
        for name, blank in (("feature", -1), ("threshold", 0.0), ("left", -1), ("right", -1), ("value", 0.0)):
            columns[name].append(blank)
        if "leaf" in item:
            columns["value"][node] = float(item["leaf"])
            return node
        columns["feature"][node] = int(item["feature"])
        columns["threshold"][node] = float(item["threshold"])
        columns["left"][node] = visit(item["left"])
        columns["right"][node] = visit(item["right"])
        return node

    visit(nested)
    return {
        "feature": np.array(columns["feature"], dtype=np.int64),
        "threshold": np.array(columns["threshold"], dtype=np.float64),
        "left": np.array(columns["left"], dtype=np.int64),
        "right": np.array(columns["right"], dtype=np.int64),
        "value": np.array(columns["value"], dtype=np.float64),
    }


# --- Logistic regression ---
def logreg_objective(theta, design, y, weights, l2_penalty):
    """
    Weighted mean negative log-likelihood plus l2/2 * |beta|^2 / sum(weights),
    intercept theta[0] unpenalized. Returns (value, gradient, hessian).
    """
    total = np.sum(weights)
    logits = design @ theta
    p = expit(logits)
    penalty = np.concatenate([[0.0], np.full(len(theta) - 1, l2_penalty)])
    value = (np.sum(weights * (np.logaddexp(0.0, logits) - y * logits)) + 0.5 * np.sum(penalty * theta**2)) / total
    gradient = (design.T @ (weights * (p - y)) + penalty * theta) / total
    curvature = weights * p * (1.0 - p)
    hessian = ((design * curvature[:, None]).T @ design + np.diag(penalty)) / total
    return value, gradient, hessian


def standardized_design(state, X):
    Z = (X - state["mean"]) / state["scale"]
    return np.column_stack([np.ones(len(X)), Z])


def _line_search(objective, theta, value, direction):
    """Halves the Newton step until the objective does not rise; None when no halving helps."""
    step = 1.0
    for _ in range(LINE_SEARCH_HALVINGS):
        candidate = theta - step * direction
        evaluated = objective(candidate)
        if evaluated[0] <= value:
            return candidate, evaluated
        step *= 0.5
    return None


def _fit_logreg(params, X, y):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    state = {"kind": "logreg", "mean": mean, "scale": scale}
    design = standardized_design(state, X)
    weights = class_weights(y)
    l2 = params["l2_penalty"]

    def objective(theta):
        return logreg_objective(theta, design, y, weights, l2)

    theta = np.zeros(design.shape[1])
    value, gradient, hessian = objective(theta)
    iterations = 0
    for iterations in range(1, params["max_iter"] + 1):
        try:
            direction = np.linalg.solve(hessian + 1e-12 * np.eye(len(theta)), gradient)
        except np.linalg.LinAlgError:
            direction = np.linalg.lstsq(hessian, gradient, rcond=None)[0]
        accepted = _line_search(objective, theta, value, direction)
        if accepted is None:
            break
        candidate, (value, gradient, hessian) = accepted
        update = np.max(np.abs(candidate - theta))
        theta = candidate
        if update < params["tol"]:
            break
    state.update({"theta": theta, "iterations": iterations})
    return state


def _predict_logreg(state, X):
    return expit(standardized_design(state, X) @ state["theta"])


# --- Interface ---
def fit(spec, X, y, feature_names=None):
    """Fits a classifier; a single-class target yields a constant-probability model."""
    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(X) != len(y):
        raise LearnerError(f"dimension mismatch: {len(X)} rows but {len(y)} labels")
    if len(y) < 1:
        raise LearnerError("cannot fit on zero rows")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise LearnerError("labels must be binary")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(X.shape[1]))

    if y.min() == y.max():
        rate = min(max(float(y.mean()), CONSTANT_CLAMP), 1.0 - CONSTANT_CLAMP)
        state = {"kind": "constant", "rate": rate}
    elif spec.kind == "gbt":
        state = _fit_gbt(spec.hyperparameters, X, y, spec.seed)
    else:
        state = _fit_logreg(spec.hyperparameters, X, y)
    return TrainedClassifier(spec, state, X.shape[1], names)


def predict_proba(model, X):
    X = _check_matrix(X, model.feature_dim)
    state = model.state
    if state["kind"] == "constant":
        return np.full(len(X), state["rate"])
    if state["kind"] == "gbt":
        p = _predict_gbt(state, X)
    else:
        p = _predict_logreg(state, X)
    return np.clip(p, PROBA_CLIP, 1.0 - PROBA_CLIP)


def _state_to_dict(state):
    if state["kind"] == "constant":
        return {"kind": "constant", "rate": float(state["rate"])}
    if state["kind"] == "gbt":
        return {
            "kind": "gbt",
            "base_score": float(state["base_score"]),
            "trees": [_tree_to_nested(t) for t in state["trees"]],
            "loss_trace": [float(v) for v in state["loss_trace"]],
        }
    return {
        "kind": "logreg",
        "intercept": float(state["theta"][0]),
        "weights": [float(v) for v in state["theta"][1:]],
        "mean": [float(v) for v in state["mean"]],
        "scale": [float(v) for v in state["scale"]],
        "iterations": int(state["iterations"]),
    }


def _state_from_dict(data):
    if data["kind"] == "constant":
        return {"kind": "constant", "rate": float(data["rate"])}
    if data["kind"] == "gbt":
        return {
            "kind": "gbt",
            "base_score": float(data["base_score"]),
            "trees": [_tree_from_nested(t) for t in data["trees"]],
            "loss_trace": list(data["loss_trace"]),
        }
    return {
        "kind": "logreg",
        "theta": np.array([data["intercept"]] + list(data["weights"]), dtype=np.float64),
        "mean": np.array(data["mean"], dtype=np.float64),
        "scale": np.array(data["scale"], dtype=np.float64),
        "iterations": int(data["iterations"]),
    }
