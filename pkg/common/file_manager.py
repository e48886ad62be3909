import hashlib
import json
import os

import numpy as np
import pandas as pd

from common.data_controller import write_events_csv
from common.ensemble_controller import BaseModel, ChannelModel, HierarchicalModel, SegmentSettings
from common.errors import StructureError
from common.learner_controller import TrainedClassifier
from common.masking_controller import MaskingPlan
from common.selection_controller import SearchResult, Trial
from common.shapelet_controller import ShapeletPool

# --- Configuration ---
FORMAT_VERSION = 1
MODEL_FILE = "model.json"
COMBINER_FILE = "combiner.json"
MANIFEST_FILE = "manifest.json"
CCA_FILE = "cca.json"
PREDICTION_COLUMNS = ["channel_id", "timestamp", "probability", "decision"]
TRACE_COLUMNS = ["trial", "params_json", "score", "phase"]


def write_json(data, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(data, sort_keys=True, indent=2) + "\n")
    return path


def read_json(path):
    if not os.path.exists(path):
        raise StructureError(f"missing file: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def file_digest(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def directory_digests(root, skip=(MANIFEST_FILE,)):
    """sha256 of every file under root, keyed by relative path."""
    digests = {}
    for folder, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            if name in skip:
                continue
            path = os.path.join(folder, name)
            digests[os.path.relpath(path, root)] = file_digest(path)
    return dict(sorted(digests.items()))


def write_trace_csv(result, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pd.DataFrame(result.trace_rows(), columns=TRACE_COLUMNS).to_csv(path, index=False)
    return path


def read_trace_csv(path):
    frame = pd.read_csv(path, keep_default_na=False)
    trace = tuple(
        Trial(int(row.trial), json.loads(row.params_json), float(row.score), str(row.phase))
        for row in frame.itertuples(index=False)
    )
    if not trace:
        return SearchResult({}, 0.0, ())
    best = max(trace, key=lambda t: (t.score, -t.trial))
    return SearchResult(best.params, best.score, trace)


# --- Hierarchies ---
def _base_name(n, m):
    return f"n{n}_m{m}.json"


def save_hierarchy(model, out_dir):
    """
    Writes one trained hierarchy: model.json (settings, structure, plans,
    weights), base/ and stack/ classifiers, pools/, cca.json and traces/.
    """
    os.makedirs(out_dir, exist_ok=True)
    channels = {}
    for cid, cm in model.channels.items():
        base_entries = []
        for (n, m), bm in sorted(cm.base.items()):
            write_json(bm.classifier.to_dict(), os.path.join(out_dir, "base", cid, _base_name(n, m)))
            if bm.pool is not None:
                write_json(bm.pool.to_dict(), os.path.join(out_dir, "pools", cid, _base_name(n, m)))
            base_entries.append({"n": n, "m": m, "train_rows": bm.train_rows, "pool": bm.pool is not None})
        for n, classifier in sorted(cm.stack.items()):
            write_json(classifier.to_dict(), os.path.join(out_dir, "stack", cid, f"n{n}.json"))
        channels[cid] = {
            "plan": cm.plan.to_dict(),
            "weight": cm.weight,
            "base": base_entries,
            "stack": sorted(cm.stack),
        }
    write_json({cid: head.to_dict() for cid, head in model.cca.items()}, os.path.join(out_dir, CCA_FILE))
    for name, result in sorted(model.traces.items()):
        write_trace_csv(result, os.path.join(out_dir, "traces", f"{name}.csv"))
    write_json(
        {
            "format_version": FORMAT_VERSION,
            "settings": model.settings.to_dict(),
            "channel_order": list(model.channels),
            "groups": {g: list(members) for g, members in model.groups.items()},
            "channels": channels,
            "counts": model.counts(),
            "config": model.config,
        },
        os.path.join(out_dir, MODEL_FILE),
    )
    return out_dir


def load_hierarchy(model_dir):
    meta = read_json(os.path.join(model_dir, MODEL_FILE))
    if meta.get("format_version") != FORMAT_VERSION:
        raise StructureError(f"{model_dir}: unsupported model format {meta.get('format_version')}")
    channels = {}
    for cid in meta["channel_order"]:
        entry = meta["channels"][cid]
        base = {}
        for item in entry["base"]:
            n, m = int(item["n"]), int(item["m"])
            classifier = TrainedClassifier.from_dict(read_json(os.path.join(model_dir, "base", cid, _base_name(n, m))))
            pool = None
            if item["pool"]:
                pool = ShapeletPool.from_dict(read_json(os.path.join(model_dir, "pools", cid, _base_name(n, m))))
            base[(n, m)] = BaseModel(n, m, classifier, pool, int(item["train_rows"]))
        stack = {
            int(n): TrainedClassifier.from_dict(read_json(os.path.join(model_dir, "stack", cid, f"n{n}.json")))
            for n in entry["stack"]
        }
        channels[cid] = ChannelModel(cid, MaskingPlan.from_dict(entry["plan"]), base, stack, float(entry["weight"]))
    heads = read_json(os.path.join(model_dir, CCA_FILE))
    cca = {cid: TrainedClassifier.from_dict(heads[cid]) for cid in meta["channel_order"]}
    traces = {}
    trace_dir = os.path.join(model_dir, "traces")
    if os.path.isdir(trace_dir):
        for name in sorted(os.listdir(trace_dir)):
            traces[os.path.splitext(name)[0]] = read_trace_csv(os.path.join(trace_dir, name))
    return HierarchicalModel(
        SegmentSettings.from_dict(meta["settings"]),
        channels,
        {g: tuple(members) for g, members in meta["groups"].items()},
        cca,
        traces,
        meta.get("config", {}),
    )


def save_run(models, out_dir, theta):
    """One `len_<L>` directory per hierarchy plus the OR-combination recipe."""
    lengths = []
    for model in models:
        save_hierarchy(model, os.path.join(out_dir, f"len_{model.settings.seg_len}"))
        lengths.append(model.settings.seg_len)
    write_json({"format_version": FORMAT_VERSION, "lengths": lengths, "combine": "or", "theta": theta},
               os.path.join(out_dir, COMBINER_FILE))
    return out_dir


def load_run(model_dir):
    combiner = read_json(os.path.join(model_dir, COMBINER_FILE))
    models = [load_hierarchy(os.path.join(model_dir, f"len_{L}")) for L in combiner["lengths"]]
    return models, combiner


# --- Predictions ---
def prediction_frame_to_table(frame):
    parts = []
    for cid, pred in frame.channels.items():
        parts.append(
            pd.DataFrame(
                {
                    "channel_id": cid,
                    "timestamp": frame.timestamps,
                    "probability": pred.step_probabilities,
                    "decision": pred.step_decisions.astype(np.int8),
                },
                columns=PREDICTION_COLUMNS,
            )
        )
    return pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=PREDICTION_COLUMNS)


def events_path_for(out_csv):
    stem, _ = os.path.splitext(out_csv)
    return f"{stem}_events.csv"


def write_predictions(frame, out_csv):
    """Per-timestep CSV plus the `<stem>_events.csv` event list."""
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    prediction_frame_to_table(frame).to_csv(out_csv, index=False, float_format="%.10g")
    events_csv = events_path_for(out_csv)
    write_events_csv(frame.events(), events_csv)
    return out_csv, events_csv
