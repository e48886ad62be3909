import bisect
from dataclasses import dataclass

import numpy as np

from common.data_controller import AnomalyEvent, event_sort_key, labels_to_events
from common.errors import EventError

# --- Configuration ---
DEFAULT_BETA = 0.5


@dataclass(frozen=True)
class EventScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_beta: float
    beta: float = DEFAULT_BETA

    @classmethod
    def from_counts(cls, tp, fp, fn, beta=DEFAULT_BETA):
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        denominator = beta**2 * precision + recall
        f_beta = (1 + beta**2) * precision * recall / denominator if denominator else 0.0
        return cls(tp, fp, fn, precision, recall, f_beta, beta)

    def to_dict(self):
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f_beta": self.f_beta,
            "beta": self.beta,
            "f_beta_percent": round(100.0 * self.f_beta, 1),
        }


def _by_channel(events, name):
    """Sorted per-channel lists; overlapping events inside one list raise EventError."""
    lists = {}
    for event in sorted(events, key=event_sort_key):
        lists.setdefault(event.channel_id, []).append(event)
    for channel_id, items in lists.items():
        for prev, cur in zip(items, items[1:]):
            if cur.start <= prev.end:
                raise EventError(
                    f"{name} events overlap on channel {channel_id or '<system>'}: "
                    f"[{prev.start},{prev.end}] and [{cur.start},{cur.end}]"
                )
    return lists


def eventwise_score(predicted, truth, beta=DEFAULT_BETA):
    """
    Event-wise overlap scoring. A truth event is a true positive when at
    least one compatible predicted event overlaps it; a predicted event is a
    false positive when it overlaps no compatible truth event. Channel-less
    events are compatible with every channel.
    """
    predicted_lists = _by_channel(predicted, "predicted")
    truth_lists = _by_channel(truth, "truth")
    index = {
        channel_id: ([e.end for e in items], items) for channel_id, items in truth_lists.items()
    }
    matched = set()
    fp = 0
    for channel_id, items in predicted_lists.items():
        if channel_id is None:
            keys = list(index)
        else:
            keys = [k for k in (channel_id, None) if k in index]
        for event in items:
            hit = False
            for key in keys:
                ends, truths = index[key]
                i = bisect.bisect_left(ends, event.start)
                while i < len(truths) and truths[i].start <= event.end:
                    matched.add((key, i))
                    hit = True
                    i += 1
            if not hit:
                fp += 1
    total_truth = sum(len(items) for items in truth_lists.values())
    tp = len(matched)
    return EventScore.from_counts(tp, fp, total_truth - tp, beta)


def merge_events(events):
    """Channel-less union of events: overlapping intervals from any channel collapse into one."""
    merged = []
    for event in sorted(events, key=lambda e: (e.start, e.end)):
        if merged and event.start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], event.end)
        else:
            merged.append([event.start, event.end])
    return [AnomalyEvent(start, end, None) for start, end in merged]


def evaluation_report(predicted, truth, beta=DEFAULT_BETA):
    """Per-channel scores plus the system-level aggregate over channel-merged events."""
    channels = sorted({e.channel_id for e in list(predicted) + list(truth) if e.channel_id is not None})
    per_channel = {}
    for channel_id in channels:
        per_channel[channel_id] = eventwise_score(
            [e for e in predicted if e.channel_id == channel_id],
            [e for e in truth if e.channel_id == channel_id],
            beta,
        )
    aggregate = eventwise_score(merge_events(predicted), merge_events(truth), beta)
    return {"channels": per_channel, "aggregate": aggregate, "beta": beta}


# --- Rasterization ---
def rasterize_windows(decisions, spans, length):
    """A position is flagged iff at least one flagged window [start, end) covers it."""
    decisions = np.asarray(decisions).astype(bool)
    spans = np.asarray(spans, dtype=np.int64).reshape(-1, 2)
    delta = np.zeros(length + 1, dtype=np.int64)
    flagged = spans[decisions]
    np.add.at(delta, np.clip(flagged[:, 0], 0, length), 1)
    np.add.at(delta, np.clip(flagged[:, 1], 0, length), -1)
    return (np.cumsum(delta[:-1]) > 0).astype(np.int8)


def rasterize_probabilities(probabilities, spans, length):
    """Per-position maximum probability over covering windows (0 where none covers)."""
    spans = np.asarray(spans, dtype=np.int64).reshape(-1, 2)
    out = np.zeros(length)
    if len(spans) == 0:
        return out
    starts = np.clip(spans[:, 0], 0, length)
    stops = np.clip(spans[:, 1], 0, length)
    widths = stops - starts
    positions = np.concatenate([np.arange(a, b) for a, b in zip(starts, stops)])
    np.maximum.at(out, positions, np.repeat(np.asarray(probabilities, dtype=np.float64), widths))
    return out


def precision_weight(probabilities, spans, labels, theta, timestamps=None):
    """Event-wise precision of thresholded window predictions; 0 when nothing is predicted."""
    labels = np.asarray(labels)
    if timestamps is None:
        timestamps = np.arange(len(labels))
    decisions = np.asarray(probabilities) >= theta
    flagged = rasterize_windows(decisions, spans, len(labels))
    predicted = labels_to_events(flagged, timestamps)
    if not predicted:
        return 0.0
    return eventwise_score(predicted, labels_to_events(labels, timestamps)).precision


def rowwise_fbeta(probabilities, labels, theta, beta=DEFAULT_BETA):
    """Event-wise F-beta with feature rows as the time axis (model-selection objective)."""
    rows = np.arange(len(labels))
    predicted = labels_to_events((np.asarray(probabilities) >= theta).astype(np.int8), rows)
    truth = labels_to_events(np.asarray(labels), rows)
    return eventwise_score(predicted, truth, beta).f_beta
