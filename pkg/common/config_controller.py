import dataclasses
import os
from dataclasses import dataclass, field

from common.errors import ConfigError, DataError, LearnerError, SelectionError
from common.learner_controller import DEFAULTS as LEARNER_DEFAULTS, ClassifierSpec
from common.selection_controller import STRATEGIES, Dimension, SearchSpace
from common.synthetic_controller import SynthConfig

# --- Configuration ---
LAYERS = ("base", "stack", "cca")
DEFAULT_SPACES = {
    "gbt": {
        "n_trees": "int:20:150",
        "max_depth": "int:2:5",
        "learning_rate": "real:0.03:0.3:log",
    },
    "logreg": {
        "l2_penalty": "real:0.01:100:log",
    },
}
DEFAULT_LAYER_KINDS = {"base": "gbt", "stack": "logreg", "cca": "logreg"}


def check_threshold(theta):
    if not 0.0 < theta < 1.0:
        raise ConfigError(f"ensemble.theta must lie in (0, 1), got {theta}")
    return theta


def default_space(kind):
    return SearchSpace(tuple(Dimension.parse(name, text) for name, text in DEFAULT_SPACES[kind].items()))


@dataclass(frozen=True)
class LayerConfig:
    """Learner kind, fixed hyperparameters and search settings of one ensemble layer."""

    kind: str
    params: dict = field(default_factory=dict)
    space: SearchSpace = SearchSpace()
    budget: int = 20
    strategy: str = "bayes"

    def __post_init__(self):
        try:
            ClassifierSpec(self.kind, self.params)
        except LearnerError as e:
            raise ConfigError(str(e)) from e
        allowed = LEARNER_DEFAULTS[self.kind]
        for dim in self.space.dimensions:
            if dim.name not in allowed:
                raise ConfigError(f"search dimension '{dim.name}' is not a {self.kind} hyperparameter")
        if self.budget < 1:
            raise ConfigError(f"search budget must be >= 1, got {self.budget}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown search strategy '{self.strategy}'")

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "space": {d.name: d.to_text() for d in self.space.dimensions},
            "budget": self.budget,
            "strategy": self.strategy,
        }


def _default_layer(layer):
    kind = DEFAULT_LAYER_KINDS[layer]
    params = {"min_leaf": 5} if kind == "gbt" else {}
    return LayerConfig(kind, params, default_space(kind))


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    workers: int = 1
    grid_step: int = 30
    segment_lengths: tuple = (50, 200)
    segment_strides: tuple = (10, 40)
    shapelet_lengths: tuple = (50,)
    pool_window: int = 4
    pool_stride: int = 2
    N: int = 3
    M: int = 3
    cca_len: int = 8000
    K: int = 10
    shp_len: int = 20
    dilation: int = 1
    bias: float = 0.0
    padding: bool = True
    max_candidates: int = 0
    base: LayerConfig = field(default_factory=lambda: _default_layer("base"))
    stack: LayerConfig = field(default_factory=lambda: _default_layer("stack"))
    cca: LayerConfig = field(default_factory=lambda: _default_layer("cca"))
    gamma: float = 2.0
    theta: float = 0.5
    folds: int = 3
    beta: float = 0.5

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("pipeline.seed is mandatory")
        if not self.segment_lengths:
            raise ConfigError("at least one segment length is required")
        if len(self.segment_strides) != len(self.segment_lengths):
            raise ConfigError("segment.strides needs one stride per segment length")
        if any(L < 2 for L in self.segment_lengths) or any(s < 1 for s in self.segment_strides):
            raise ConfigError("segment lengths must be >= 2 and strides >= 1")
        if len(set(self.segment_lengths)) != len(self.segment_lengths):
            raise ConfigError("segment lengths must be distinct")
        extra = set(self.shapelet_lengths) - set(self.segment_lengths)
        if extra:
            raise ConfigError(f"segment.shapelet_lengths names unknown length(s) {sorted(extra)}")
        if self.workers < 1 or self.grid_step < 1:
            raise ConfigError("pipeline.workers and data.grid_step must be >= 1")
        if self.pool_window < 1 or self.pool_stride < 1:
            raise ConfigError("pooling window and stride must be >= 1")
        if self.N < 2 or self.M < 1 or self.cca_len < 0:
            raise ConfigError("masking needs N >= 2, M >= 1 and cca_len >= 0")
        if self.K < 1 or self.shp_len < 3 or self.dilation < 1 or self.max_candidates < 0:
            raise ConfigError("shapelets need K >= 1, length >= 3, dilation >= 1 and max_candidates >= 0")
        check_threshold(self.theta)
        if self.gamma < 1.0:
            raise ConfigError(f"ensemble.gamma must be >= 1, got {self.gamma}")
        if self.folds < 2 or self.beta <= 0:
            raise ConfigError("selection needs folds >= 2 and beta > 0")
        for length in self.shapelet_lengths:
            span = (self.shp_len - 1) * self.dilation + 1
            padded = length + 2 * (span // 2) if self.padding else length
            if span > padded:
                raise ConfigError(f"shapelet footprint {span} does not fit segment length {length}")

    def segment_plan(self):
        """(length, stride, use_shapelets) per configured segment length."""
        return [
            (L, s, L in self.shapelet_lengths) for L, s in zip(self.segment_lengths, self.segment_strides)
        ]

    def with_overrides(self, seed=None, workers=None, threshold=None):
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if workers is not None:
            changes["workers"] = int(workers)
        if threshold is not None:
            changes["theta"] = float(threshold)
        return dataclasses.replace(self, **changes) if changes else self

    def to_dict(self):
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, LayerConfig):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out


# --- Parsing ---
def _int(text):
    return int(text)


def _float(text):
    return float(text)


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text}")


def _int_list(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _str_list(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


PIPELINE_KEYS = {
    "pipeline.seed": ("seed", _int),
    "pipeline.workers": ("workers", _int),
    "data.grid_step": ("grid_step", _int),
    "segment.lengths": ("segment_lengths", _int_list),
    "segment.strides": ("segment_strides", _int_list),
    "segment.shapelet_lengths": ("shapelet_lengths", _int_list),
    "pooling.window": ("pool_window", _int),
    "pooling.stride": ("pool_stride", _int),
    "masking.n": ("N", _int),
    "masking.m": ("M", _int),
    "masking.cca_len": ("cca_len", _int),
    "shapelet.k": ("K", _int),
    "shapelet.length": ("shp_len", _int),
    "shapelet.dilation": ("dilation", _int),
    "shapelet.bias": ("bias", _float),
    "shapelet.padding": ("padding", _bool),
    "shapelet.max_candidates": ("max_candidates", _int),
    "ensemble.gamma": ("gamma", _float),
    "ensemble.theta": ("theta", _float),
    "selection.folds": ("folds", _int),
    "selection.beta": ("beta", _float),
}

SYNTH_KEYS = {
    "synth.channels": ("channels", _int),
    "synth.groups": ("groups", _int),
    "synth.length": ("length", _int),
    "synth.grid_step": ("grid_step", _int),
    "synth.start": ("start", _int),
    "synth.density": ("density", _float),
    "synth.archetypes": ("archetypes", _str_list),
    "synth.group_event_fraction": ("group_event_fraction", _float),
    "synth.min_event_len": ("min_event_len", _int),
    "synth.max_event_len": ("max_event_len", _int),
    "synth.amplitude": ("amplitude", _float),
    "synth.noise": ("noise", _float),
    "synth.motif_length": ("motif_length", _int),
    "synth.min_gap": ("min_gap", _int),
}


def read_key_values(path):
    """`key = value` pairs with `#` comments; returns {key: (value, line_number)}."""
    if not os.path.exists(path):
        raise ConfigError(f"missing config file: {path}")
    entries = {}
    with open(path, "r", encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got '{raw.strip()}'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.lower()
            if key in entries:
                raise ConfigError(f"{path}:{number}: duplicate key '{key}'")
            entries[key] = (value, number)
    return entries


def _layer_from_entries(layer, entries, path):
    kind = DEFAULT_LAYER_KINDS[layer]
    if f"{layer}.kind" in entries:
        kind = entries[f"{layer}.kind"][0]
        if kind not in LEARNER_DEFAULTS:
            raise ConfigError(f"{path}:{entries[f'{layer}.kind'][1]}: unknown {layer}.kind '{kind}'")
    params = {"min_leaf": 5} if kind == "gbt" else {}
    space = {}
    budget, strategy = 20, "bayes"
    for key, (value, number) in entries.items():
        if not key.startswith(layer + "."):
            continue
        rest = key[len(layer) + 1:]
        try:
            if rest == "kind":
                continue
            elif rest == "budget":
                budget = int(value)
            elif rest == "strategy":
                strategy = value
            elif rest.startswith("params."):
                params[rest[len("params."):]] = float(value)
            elif rest.startswith("space."):
                name = rest[len("space."):]
                space[name] = Dimension.parse(name, value)
            else:
                raise ConfigError(f"{path}:{number}: unknown key '{key}'")
        except (ValueError, SelectionError) as e:
            raise ConfigError(f"{path}:{number}: malformed value for '{key}': {e}") from e
    dims = tuple(space.values()) if space else default_space(kind).dimensions
    return LayerConfig(kind, params, SearchSpace(dims), budget, strategy)


def load_config(path):
    """Parses a run configuration into (PipelineConfig, SynthConfig)."""
    entries = read_key_values(path)
    pipeline, synth = {}, {}
    for key, (value, number) in entries.items():
        if key.split(".", 1)[0] in LAYERS:
            continue
        table = PIPELINE_KEYS if key in PIPELINE_KEYS else SYNTH_KEYS if key in SYNTH_KEYS else None
        if table is None:
            raise ConfigError(f"{path}:{number}: unknown key '{key}'")
        name, parse = table[key]
        try:
            (pipeline if table is PIPELINE_KEYS else synth)[name] = parse(value)
        except ValueError as e:
            raise ConfigError(f"{path}:{number}: malformed value for '{key}': {e}") from e
    if "seed" not in pipeline:
        raise ConfigError(f"{path}: pipeline.seed is mandatory")
    for layer in LAYERS:
        pipeline[layer] = _layer_from_entries(layer, entries, path)
    try:
        synth_config = SynthConfig(**synth)
    except DataError as e:
        raise ConfigError(f"{path}: {e}") from e
    return PipelineConfig(**pipeline), synth_config
