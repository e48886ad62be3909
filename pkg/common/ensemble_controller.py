import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from tqdm import tqdm

from common.data_controller import labels_to_events
from common.errors import LeakageError, StructureError, TelemetryError, TrainingError
from common.evaluation_controller import (
    precision_weight,
    rasterize_probabilities,
    rasterize_windows,
)
from common.feature_controller import (
    BASE_FEATURE_NAMES,
    FeatureMatrix,
    rolling_minmax_pool,
    segment_windows,
    window_feature_matrix,
)
from common.learner_controller import fit, predict_proba
from common.masking_controller import audit_plan, build_masking_plan, view
from common.selection_controller import select_classifier, tscv_plan
from common.shapelet_controller import ANOMALY_SOURCE, mine_shapelets, shapelet_feature_matrix
from utils.log import get_logger

logger = get_logger(__name__)

# --- Configuration ---
LAYER_BASE = 1
LAYER_STACK = 2
LAYER_CCA = 3
LAYER_POOL = 4


def derive_seed(seed, *coordinates):
    """Independent per-job seed from the run seed and integer job coordinates."""
    return int(np.random.SeedSequence([int(seed), *[int(c) for c in coordinates]]).generate_state(1)[0])


def _run_jobs(fn, jobs, workers, desc):
    """Ordered map over jobs: inline for one worker, else a process pool."""
    if not jobs:
        return []
    if workers <= 1 or len(jobs) == 1:
        return [fn(job) for job in tqdm(jobs, desc=desc, leave=False)]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs), os.cpu_count() or 1)) as executor:
        return list(tqdm(executor.map(fn, jobs), total=len(jobs), desc=desc, leave=False))


# --- Model types ---
@dataclass(frozen=True)
class SegmentSettings:
    """Everything inference needs to rebuild the features one hierarchy was trained on."""

    seg_len: int
    stride: int
    use_shapelets: bool
    pool_window: int
    pool_stride: int
    K: int
    shp_len: int
    dilation: int
    bias: float
    padding: bool
    grid_step: int
    N: int
    M: int
    cca_len: int
    gamma: float
    theta: float
    folds: int
    beta: float
    max_candidates: int = 0

    @classmethod
    def from_config(cls, config, seg_len, stride, use_shapelets):
        return cls(
            seg_len, stride, bool(use_shapelets), config.pool_window, config.pool_stride,
            config.K, config.shp_len, config.dilation, config.bias, config.padding,
            config.grid_step, config.N, config.M, config.cca_len, config.gamma,
            config.theta, config.folds, config.beta, config.max_candidates,
        )

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True, eq=False)
class BaseModel:
    n: int
    m: int
    classifier: object
    pool: Optional[object] = None
    train_rows: int = 0


@dataclass(frozen=True, eq=False)
class ChannelModel:
    channel_id: str
    plan: object
    base: dict
    stack: dict
    weight: float


@dataclass(frozen=True, eq=False)
class HierarchicalModel:
    settings: SegmentSettings
    channels: dict
    groups: dict
    cca: dict
    traces: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def weights(self):
        return {cid: cm.weight for cid, cm in self.channels.items()}

    @property
    def group_order(self):
        return sorted(self.groups)

    def counts(self):
        return {
            "base_models": sum(len(cm.base) for cm in self.channels.values()),
            "stack_models": sum(len(cm.stack) for cm in self.channels.values()),
            "cca_heads": len(self.cca),
        }


@dataclass(frozen=True, eq=False)
class ChannelPrediction:
    channel_id: str
    spans: np.ndarray
    probabilities: np.ndarray
    row_labels: np.ndarray
    decisions: Optional[np.ndarray] = None
    step_probabilities: Optional[np.ndarray] = None
    step_decisions: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class PredictionFrame:
    timestamps: np.ndarray
    channels: dict
    provenance: str

    @property
    def channel_ids(self):
        return list(self.channels)

    def events(self):
        out = []
        for channel_id, pred in self.channels.items():
            out.extend(labels_to_events(pred.step_decisions, self.timestamps, channel_id))
        return out


# --- Features ---
def _pooled(batch, base_rows, pool, cache, settings):
    extra, names = None, ()
    if pool is not None:
        extra = shapelet_feature_matrix(batch.windows, pool, cache)
        names = pool.feature_names
    rows = base_rows if extra is None else np.hstack([base_rows, extra])
    fm = FeatureMatrix(rows, batch.spans, batch.labels, BASE_FEATURE_NAMES + tuple(names), batch.runs)
    return rolling_minmax_pool(fm, settings.pool_window, settings.pool_stride)


def _batch(series, index, settings):
    batch = segment_windows(series.values, series.labels, index, settings.seg_len, settings.stride)
    base_rows = window_feature_matrix(batch).rows
    return batch, base_rows


def index_features(series, index, pool, settings):
    """Pooled feature matrix of one index set, with shapelet columns when a pool is given."""
    batch, base_rows = _batch(series, index, settings)
    if len(batch) == 0:
        return None
    return _pooled(batch, base_rows, pool, {}, settings)


# --- Layer 1 ---
@dataclass(frozen=True, eq=False)
class _BaseJob:
    series: object
    plan: object
    n: int
    m: int
    settings: SegmentSettings
    layer: object
    seed: int
    pool_seed: int


def _train_base_job(job):
    cid, n, m, s = job.series.channel_id, job.n, job.m, job.settings
    try:
        v = view(job.plan, n, m)
        pool = None
        if s.use_shapelets:
            pool = mine_shapelets(
                job.series, v.xhat_nm, s.shp_len, s.K, job.pool_seed, s.seg_len, s.stride,
                s.dilation, s.bias, s.padding, s.max_candidates,
            )
        train = index_features(job.series, v.remainder, pool, s)
        if train is None:
            raise TrainingError("zero training rows for the base model")
        spec, result = select_classifier(
            job.layer.kind, job.layer.params, job.layer.space, train.rows, [train.labels],
            job.layer.budget, job.seed, job.layer.strategy, s.folds, s.beta, s.theta,
        )
        classifier = fit(spec, train.rows, train.labels, train.feature_names)
        stacking = index_features(job.series, v.x_n, pool, s)
        if stacking is None:
            raise TrainingError("zero stacking rows in x_n")
        probabilities = predict_proba(classifier, stacking.rows)
    except TrainingError as e:
        if e.channel_id is None:
            raise TrainingError(str(e), cid, n, m) from e
        raise
    except TelemetryError as e:
        raise TrainingError(str(e), cid, n, m) from e
    model = BaseModel(n, m, classifier, pool, len(train))
    return model, result, probabilities, stacking.labels, stacking.spans


# --- Layer 2 ---
@dataclass(frozen=True, eq=False)
class _StackJob:
    channel_id: str
    n: int
    X: np.ndarray
    y: np.ndarray
    spans: np.ndarray
    settings: SegmentSettings
    layer: object
    seed: int


def _train_stack_job(job):
    s = job.settings
    try:
        spec, result = select_classifier(
            job.layer.kind, job.layer.params, job.layer.space, job.X, [job.y],
            job.layer.budget, job.seed, job.layer.strategy, s.folds, s.beta, s.theta,
        )
        names = tuple(f"bm_m{m}" for m in range(1, job.X.shape[1] + 1))
        classifier = fit(spec, job.X, job.y, names)
        held_spans = np.zeros((0, 2), dtype=np.int64)
        held_probabilities = np.zeros(0)
        if len(job.X) >= s.folds:
            plan = tscv_plan(len(job.X), s.folds)
            lo, hi = plan.folds[-1]
            train_stop = plan.folds[-2][1]
            held = fit(spec, job.X[:train_stop], job.y[:train_stop], names)
            held_spans = job.spans[lo:hi]
            held_probabilities = predict_proba(held, job.X[lo:hi])
    except TelemetryError as e:
        raise TrainingError(str(e), job.channel_id, job.n) from e
    return classifier, result, held_spans, held_probabilities


# --- Inference ---
def _check_grid(model, series):
    step = series.grid_step
    if step is not None and step != model.settings.grid_step:
        raise StructureError(
            f"grid mismatch on channel {series.channel_id}: step {step}, model trained on {model.settings.grid_step}"
        )


def channel_predict(model, series, index=None):
    """
    Channel-level probability per pooled window: every BM[n][m] sees the
    input through its own shapelet pool, ICS[n] stacks the M columns, and
    the N stacking outputs are averaged.
    """
    if series.channel_id not in model.channels:
        raise StructureError(f"channel {series.channel_id} is not part of the trained model")
    _check_grid(model, series)
    cm = model.channels[series.channel_id]
    s = model.settings
    index = np.arange(len(series)) if index is None else index
    batch, base_rows = _batch(series, index, s)
    if len(batch) == 0:
        empty = np.zeros(0)
        return ChannelPrediction(series.channel_id, np.zeros((0, 2), dtype=np.int64), empty, empty.astype(np.int8))
    cache = {}
    stacked, fm = [], None
    for n in sorted(cm.stack):
        columns = []
        for m in range(1, s.M + 1):
            bm = cm.base[(n, m)]
            fm = _pooled(batch, base_rows, bm.pool, cache, s)
            columns.append(predict_proba(bm.classifier, fm.rows))
        stacked.append(predict_proba(cm.stack[n], np.column_stack(columns)))
    probabilities = np.mean(stacked, axis=0)
    return ChannelPrediction(series.channel_id, fm.spans, probabilities, fm.labels)


def group_reduce(p, G, w, gamma):
    """Power-weighted group sum: sum over c in G of w_c * p_c ** gamma (scalars or arrays)."""
    total = 0.0
    for channel_id in G:
        if channel_id not in p:
            raise StructureError(f"channel {channel_id} of the group has no probability")
        total = total + w[channel_id] * np.power(p[channel_id], gamma)
    return total


def cca_inputs(model, probabilities):
    """One group-reduced column per group, in sorted group order."""
    weights = model.weights
    return np.column_stack(
        [group_reduce(probabilities, model.groups[g], weights, model.settings.gamma) for g in model.group_order]
    )


@dataclass(frozen=True, eq=False)
class _PredictJob:
    model: HierarchicalModel
    series: object
    index: Optional[np.ndarray] = None


def _predict_channel_job(job):
    return channel_predict(job.model, job.series, job.index)


def check_structure(model, dataset):
    expected = set(model.channels)
    present = set(dataset.channel_ids)
    missing = sorted(expected - present)
    if missing:
        raise StructureError(f"missing channel(s): {', '.join(missing)}")
    unexpected = sorted(present - expected)
    if unexpected:
        raise StructureError(f"channel(s) unknown to the model: {', '.join(unexpected)}")
    for group_id, members in model.groups.items():
        if group_id not in dataset.groups:
            raise StructureError(f"missing group: {group_id}")
        if set(dataset.groups[group_id]) != set(members):
            raise StructureError(f"group {group_id} members differ from training")
    extra_groups = sorted(set(dataset.groups) - set(model.groups))
    if extra_groups:
        raise StructureError(f"group(s) unknown to the model: {', '.join(extra_groups)}")


def predict(model, dataset, workers=1, theta=None):
    """
    Full inference: channel_predict per channel, group reduction per
    window, one CCA head per channel, threshold, then OR-rasterization of
    flagged windows back to timesteps.
    """
    check_structure(model, dataset)
    theta = model.settings.theta if theta is None else theta
    timestamps = dataset.timestamps
    jobs = [_PredictJob(model, dataset.channel(cid)) for cid in model.channels]
    channel_preds = _run_jobs(_predict_channel_job, jobs, workers, "Channel inference")
    probabilities = {cp.channel_id: cp.probabilities for cp in channel_preds}
    spans = channel_preds[0].spans
    X = cca_inputs(model, probabilities) if len(spans) else np.zeros((0, len(model.groups)))
    length = len(timestamps)
    channels = {}
    for cp in channel_preds:
        head = model.cca[cp.channel_id]
        p = predict_proba(head, X) if len(X) else np.zeros(0)
        decisions = p >= theta
        channels[cp.channel_id] = ChannelPrediction(
            cp.channel_id,
            spans,
            p,
            cp.row_labels,
            decisions.astype(np.int8),
            rasterize_probabilities(p, spans, length),
            rasterize_windows(decisions, spans, length),
        )
    flagged = sum(int(c.step_decisions.sum()) for c in channels.values())
    logger.info(f"✅ Predicted {len(channels)} channel(s), {flagged} flagged timestep(s) at θ={theta}")
    return PredictionFrame(timestamps, channels, f"len_{model.settings.seg_len}")


def or_combine(frames):
    """Per-timestep OR of decisions and max of probabilities across frames on one grid."""
    if not frames:
        raise StructureError("nothing to combine")
    first = frames[0]
    for frame in frames[1:]:
        if len(frame.timestamps) != len(first.timestamps) or np.any(frame.timestamps != first.timestamps):
            raise StructureError("frames do not share a timestamp grid")
        if list(frame.channels) != list(first.channels):
            raise StructureError("frames do not share a channel structure")
    channels = {}
    for channel_id in first.channels:
        decisions = np.zeros(len(first.timestamps), dtype=np.int8)
        probabilities = np.zeros(len(first.timestamps))
        for frame in frames:
            decisions |= frame.channels[channel_id].step_decisions.astype(np.int8)
            probabilities = np.maximum(probabilities, frame.channels[channel_id].step_probabilities)
        channels[channel_id] = ChannelPrediction(
            channel_id,
            np.zeros((0, 2), dtype=np.int64),
            np.zeros(0),
            np.zeros(0, dtype=np.int8),
            None,
            probabilities,
            decisions,
        )
    provenance = "or(" + "|".join(f.provenance for f in frames) + ")"
    return PredictionFrame(first.timestamps, channels, provenance)


# --- Training ---
def _grid_step_of(dataset):
    if dataset.grid_step is not None:
        return dataset.grid_step
    steps = {s.grid_step for s in dataset.channels}
    if len(steps) != 1 or None in steps:
        raise StructureError("dataset is not on a uniform shared grid; align it first")
    return steps.pop()


def train_hierarchy(dataset, config, segment=None, workers=None):
    """
    Trains the three layers for one segment length. Layer 1 fits C*N*M base
    models on their masked remainders, layer 2 stacks them on x_n, layer 3
    fits the cross-channel heads on the x_cca tail.
    """
    seg_len, stride, use_shapelets = segment or config.segment_plan()[0]
    settings = SegmentSettings.from_config(config, seg_len, stride, use_shapelets)
    workers = config.workers if workers is None else workers
    timestamps = dataset.timestamps
    grid_step = _grid_step_of(dataset)
    if grid_step != settings.grid_step:
        raise StructureError(f"grid mismatch: dataset step {grid_step}, config step {settings.grid_step}")
    channel_ids = dataset.channel_ids

    plans = {}
    for cid in channel_ids:
        try:
            plans[cid] = build_masking_plan(
                len(dataset.channel(cid)), settings.N, settings.M, settings.cca_len, seg_len, cid
            )
        except TelemetryError as e:
            raise TrainingError(str(e), cid) from e

    logger.info(
        f"--- Layer 1: {len(channel_ids) * settings.N * settings.M} base model(s), "
        f"length {seg_len}, {len(timestamps)} step(s) ---"
    )
    jobs = [
        _BaseJob(
            dataset.channel(cid), plans[cid], n, m, settings, config.base,
            derive_seed(config.seed, LAYER_BASE, seg_len, c, n, m),
            derive_seed(config.seed, LAYER_POOL, seg_len, c, n, m),
        )
        for c, cid in enumerate(channel_ids)
        for n in range(1, settings.N + 1)
        for m in range(1, settings.M + 1)
    ]
    base_results = _run_jobs(_train_base_job, jobs, workers, "Base models")
    traces = {}
    base = {cid: {} for cid in channel_ids}
    stack_inputs = {}
    for job, (model, result, probabilities, labels, spans) in zip(jobs, base_results):
        cid = job.series.channel_id
        base[cid][(job.n, job.m)] = model
        traces[f"base_{cid}_n{job.n}_m{job.m}"] = result
        columns, _, _ = stack_inputs.setdefault((cid, job.n), ([], labels, spans))
        columns.append(probabilities)

    logger.info(f"--- Layer 2: {len(channel_ids) * settings.N} stacking model(s) ---")
    stack_jobs = [
        _StackJob(
            cid, n, np.column_stack(stack_inputs[(cid, n)][0]), stack_inputs[(cid, n)][1],
            stack_inputs[(cid, n)][2], settings, config.stack,
            derive_seed(config.seed, LAYER_STACK, seg_len, c, n),
        )
        for c, cid in enumerate(channel_ids)
        for n in range(1, settings.N + 1)
    ]
    stack_results = _run_jobs(_train_stack_job, stack_jobs, workers, "Stacking models")
    stack = {cid: {} for cid in channel_ids}
    held = {cid: ([], []) for cid in channel_ids}
    for job, (classifier, result, held_spans, held_probabilities) in zip(stack_jobs, stack_results):
        stack[job.channel_id][job.n] = classifier
        traces[f"stack_{job.channel_id}_n{job.n}"] = result
        held[job.channel_id][0].append(held_spans)
        held[job.channel_id][1].append(held_probabilities)

    channels = {}
    for cid in channel_ids:
        spans = np.concatenate(held[cid][0]) if held[cid][0] else np.zeros((0, 2), dtype=np.int64)
        probabilities = np.concatenate(held[cid][1]) if held[cid][1] else np.zeros(0)
        weight = precision_weight(probabilities, spans, dataset.channel(cid).labels, settings.theta)
        channels[cid] = ChannelModel(cid, plans[cid], base[cid], stack[cid], float(weight))
        logger.info(f"channel {cid}: precision weight w = {weight:.3f}")

    logger.info(f"--- Layer 3: cross-channel aggregation on the last {settings.cca_len} step(s) ---")
    partial = HierarchicalModel(settings, channels, dict(dataset.groups), {}, traces, config.to_dict())
    tail_jobs = [
        _PredictJob(partial, dataset.channel(cid), np.arange(*plans[cid].cca_span)) for cid in channel_ids
    ]
    tail_preds = _run_jobs(_predict_channel_job, tail_jobs, workers, "Tail inference")
    if len(tail_preds[0].spans) == 0:
        raise TrainingError(f"zero training rows for the cross-channel layer (cca_len={settings.cca_len})")
    X = cca_inputs(partial, {cp.channel_id: cp.probabilities for cp in tail_preds})
    targets = [cp.row_labels for cp in tail_preds]
    try:
        spec, result = select_classifier(
            config.cca.kind, config.cca.params, config.cca.space, X, targets, config.cca.budget,
            derive_seed(config.seed, LAYER_CCA, seg_len), config.cca.strategy, settings.folds,
            settings.beta, settings.theta,
        )
        names = tuple(f"gr_{g}" for g in partial.group_order)
        cca = {cp.channel_id: fit(spec, X, cp.row_labels, names) for cp in tail_preds}
    except TelemetryError as e:
        raise TrainingError(f"cross-channel layer: {e}") from e
    traces["cca"] = result

    model = HierarchicalModel(settings, channels, dict(dataset.groups), cca, traces, config.to_dict())
    audit_leakage(model)
    counts = model.counts()
    logger.info(
        f"✅ Trained length {seg_len}: {counts['base_models']} BM, {counts['stack_models']} ICS, "
        f"{counts['cca_heads']} CCA head(s)"
    )
    return model


def audit_leakage(model):
    """
    Re-checks, from the recorded masking plans, that mining, base training,
    stacking and CCA index sets are pairwise disjoint and that every
    anomaly-sourced shapelet lies inside its mining set.
    """
    checked = 0
    for cid, cm in model.channels.items():
        audit_plan(cm.plan)
        for (n, m), bm in cm.base.items():
            v = view(cm.plan, n, m)
            sets = {"mining": v.xhat_nm, "base": v.remainder, "stacking": v.x_n, "cca": v.cca}
            names = list(sets)
            for i, a in enumerate(names):
                for b in names[i + 1:]:
                    if np.intersect1d(sets[a], sets[b]).size:
                        raise LeakageError(f"channel {cid} (n={n}, m={m}): {a} and {b} index sets overlap")
            if bm.pool is not None:
                mining = set(v.xhat_nm.tolist())
                for shp in bm.pool.shapelets:
                    if shp.source != ANOMALY_SOURCE:
                        continue
                    covered = range(shp.source_start, shp.source_start + shp.footprint)
                    if not mining.issuperset(covered):
                        raise LeakageError(
                            f"channel {cid} (n={n}, m={m}): shapelet source at {shp.source_start} leaves the mining set"
                        )
            checked += 1
    return checked
