import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from common.errors import DataError
from utils.log import get_logger

logger = get_logger(__name__)

# --- Configuration ---
CHANNELS_SUBDIR = "channels"
GROUPS_FILENAME = "groups.csv"
EVENTS_FILENAME = "events.csv"
CHANNEL_COLUMNS = ["timestamp", "value", "label"]
GROUP_COLUMNS = ["channel_id", "group_id"]
EVENT_COLUMNS = ["channel_id", "start", "end"]
VALUE_FLOAT_FORMAT = "%.10g"


def _frozen(array, dtype):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ChannelSeries:
    """One channel's timestamped values and per-timestep anomaly labels."""

    channel_id: str
    timestamps: np.ndarray
    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        timestamps = _frozen(self.timestamps, np.int64)
        values = _frozen(self.values, np.float64)
        labels = _frozen(self.labels, np.int8)
        if not (len(timestamps) == len(values) == len(labels)):
            raise DataError(
                f"channel {self.channel_id}: timestamps, values and labels differ in length "
                f"({len(timestamps)}, {len(values)}, {len(labels)})"
            )
        if len(timestamps) > 1 and np.any(np.diff(timestamps) <= 0):
            raise DataError(f"channel {self.channel_id}: non-monotone timestamps")
        if not np.all(np.isin(labels, (0, 1))):
            raise DataError(f"channel {self.channel_id}: label not in {{0,1}}")
        if not np.all(np.isfinite(values)):
            raise DataError(f"channel {self.channel_id}: non-finite values are not supported")
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.timestamps)

    @property
    def grid_step(self):
        """The uniform step of the timestamp grid, or None when irregular."""
        if len(self.timestamps) < 2:
            return None
        steps = np.unique(np.diff(self.timestamps))
        return int(steps[0]) if len(steps) == 1 else None


@dataclass(frozen=True)
class AnomalyEvent:
    start: int
    end: int
    channel_id: Optional[str] = None

    def __post_init__(self):
        if self.start > self.end:
            raise DataError(f"event start {self.start} after end {self.end}")


def event_sort_key(event):
    return (event.channel_id or "", event.start, event.end)


@dataclass(frozen=True, eq=False)
class MultiChannelDataset:
    channels: tuple
    groups: dict
    events: tuple = ()
    grid_step: Optional[int] = None
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        channels = tuple(self.channels)
        groups = {str(g): tuple(members) for g, members in self.groups.items()}
        ids = [c.channel_id for c in channels]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate channel ids in dataset")
        membership = {}
        for group_id, members in groups.items():
            for channel_id in members:
                if channel_id in membership:
                    raise DataError(
                        f"channel {channel_id} belongs to groups {membership[channel_id]} and {group_id}"
                    )
                membership[channel_id] = group_id
        for channel_id in ids:
            if channel_id not in membership:
                raise DataError(f"channel {channel_id} is not assigned to any group")
        for channel_id in membership:
            if channel_id not in ids:
                raise DataError(f"group member {channel_id} has no channel series")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "events", tuple(sorted(self.events, key=event_sort_key)))
        object.__setattr__(self, "_index", {c.channel_id: c for c in channels})

    @property
    def channel_ids(self):
        return [c.channel_id for c in self.channels]

    def channel(self, channel_id):
        try:
            return self._index[channel_id]
        except KeyError:
            raise DataError(f"unknown channel {channel_id}") from None

    def group_of(self, channel_id):
        for group_id, members in self.groups.items():
            if channel_id in members:
                return group_id
        raise DataError(f"unknown channel {channel_id}")

    @property
    def timestamps(self):
        """The shared grid; only defined once every channel sits on the same timestamps."""
        first = self.channels[0].timestamps
        for series in self.channels[1:]:
            if len(series.timestamps) != len(first) or np.any(series.timestamps != first):
                raise DataError("channels do not share a timestamp grid; align the dataset first")
        return first


# --- Resampling ---
def _hold_onto(series, grid):
    """Zero-order hold of values and labels onto the given grid."""
    frame = pd.DataFrame({"value": series.values, "label": series.labels}, index=series.timestamps)
    held = frame.reindex(grid, method="ffill")
    return ChannelSeries(
        series.channel_id,
        grid,
        held["value"].to_numpy(),
        held["label"].to_numpy().astype(np.int8),
    )


def resample_zoh(series, grid_step):
    """
    Resamples a series onto an arithmetic grid from its first to its last
    timestamp. Each grid point takes the most recent sample at or before it,
    for labels as well as values.
    """
    if len(series) == 0:
        raise DataError(f"channel {series.channel_id}: empty series")
    if grid_step <= 0:
        raise DataError(f"grid step must be positive, got {grid_step}")
    grid = np.arange(series.timestamps[0], series.timestamps[-1] + 1, grid_step, dtype=np.int64)
    return _hold_onto(series, grid)


def align_dataset(dataset, grid_step):
    """ZOH-resamples every channel onto one grid covering the overlap of all channels."""
    for series in dataset.channels:
        if len(series) == 0:
            raise DataError(f"channel {series.channel_id}: empty series")
    start = max(int(s.timestamps[0]) for s in dataset.channels)
    end = min(int(s.timestamps[-1]) for s in dataset.channels)
    if start > end:
        raise DataError("channels do not overlap in time")
    grid = np.arange(start, end + 1, grid_step, dtype=np.int64)
    channels = [_hold_onto(series, grid) for series in dataset.channels]
    return MultiChannelDataset(channels, dataset.groups, dataset.events, grid_step)


# --- Events ---
def labels_to_events(labels, timestamps, channel_id=None):
    """One event per maximal run of 1s, bounded by the run's first and last timestamps."""
    flags = np.asarray(labels).astype(bool).astype(np.int8)
    timestamps = np.asarray(timestamps)
    if len(flags) != len(timestamps):
        raise DataError(f"labels ({len(flags)}) and timestamps ({len(timestamps)}) differ in length")
    edges = np.diff(np.concatenate([[0], flags, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [
        AnomalyEvent(int(timestamps[s]), int(timestamps[e]), channel_id)
        for s, e in zip(starts, ends)
    ]


def events_to_labels(events, timestamps):
    """Rasterizes events back onto a timestamp vector (inclusive bounds)."""
    timestamps = np.asarray(timestamps)
    labels = np.zeros(len(timestamps), dtype=np.int8)
    for event in events:
        lo = np.searchsorted(timestamps, event.start, side="left")
        hi = np.searchsorted(timestamps, event.end, side="right")
        labels[lo:hi] = 1
    return labels


# --- Ingestion ---
def _numeric_column(frame, column, channel_id, path):
    numbers = pd.to_numeric(frame[column], errors="coerce")
    bad = numbers.isna() & frame[column].notna()
    if bad.any():
        line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
        value = frame[column][bad].iloc[0]
        raise DataError(f"channel {channel_id}: {path} line {line}: non-numeric {column} '{value}'")
    return numbers.to_numpy(dtype=np.float64)


def _read_channel_csv(path, channel_id):
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"channel {channel_id}: could not read {path}: {e}") from e
    missing = [c for c in ("timestamp", "value") if c not in frame.columns]
    if missing:
        raise DataError(f"channel {channel_id}: {path} lacks column(s) {', '.join(missing)}")
    if frame["value"].isna().any() or frame["timestamp"].isna().any():
        raise DataError(f"channel {channel_id}: missing values are not supported")
    timestamps = _numeric_column(frame, "timestamp", channel_id, path)
    values = _numeric_column(frame, "value", channel_id, path)
    fractional = np.flatnonzero(timestamps != np.floor(timestamps))
    if len(fractional):
        row = int(fractional[0])
        raise DataError(f"channel {channel_id}: {path} line {row + 2}: timestamp {timestamps[row]} is not integral")
    if "label" in frame.columns:
        labels = frame["label"].to_numpy()
    else:
        labels = np.zeros(len(frame), dtype=np.int8)
    if not np.all(np.isin(labels, (0, 1))):
        raise DataError(f"channel {channel_id}: label not in {{0,1}}")
    return ChannelSeries(channel_id, timestamps.astype(np.int64), values, labels)


def read_groups_csv(groups_file):
    if not os.path.exists(groups_file):
        raise DataError(f"missing file: {groups_file}")
    frame = pd.read_csv(groups_file, dtype=str, keep_default_na=False)
    missing = [c for c in GROUP_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{groups_file} lacks column(s) {', '.join(missing)}")
    groups = {}
    for channel_id, group_id in zip(frame["channel_id"], frame["group_id"]):
        groups.setdefault(group_id, []).append(channel_id)
    return {g: tuple(members) for g, members in groups.items()}


def load_dataset(channels_dir, groups_file, events_file=None):
    """
    Reads every `<channel_id>.csv` in channels_dir plus the groups file.
    Channels come back in groups-file order. Missing labels default to 0.
    """
    channels_dir = Path(channels_dir)
    if not channels_dir.is_dir():
        raise DataError(f"missing file: {channels_dir}")
    groups = read_groups_csv(groups_file)
    listed = [c for members in groups.values() for c in members]
    files = {p.stem: p for p in sorted(channels_dir.glob("*.csv"))}
    for channel_id in files:
        if channel_id not in listed:
            raise DataError(f"channel {channel_id} in CSV absent from groups file {groups_file}")
    channels = []
    for channel_id in listed:
        if channel_id not in files:
            raise DataError(f"missing file: {channels_dir / (channel_id + '.csv')}")
        channels.append(_read_channel_csv(files[channel_id], channel_id))
    events = ()
    if events_file is not None and os.path.exists(events_file):
        events = tuple(read_events_csv(events_file))
    dataset = MultiChannelDataset(channels, groups, events)
    logger.info(f"✅ Loaded {len(channels)} channel(s) in {len(groups)} group(s) from {channels_dir}")
    return dataset


def load_dataset_dir(data_dir):
    """Loads the standard layout: channels/, groups.csv and (optional) events.csv."""
    data_dir = Path(data_dir)
    return load_dataset(
        data_dir / CHANNELS_SUBDIR,
        data_dir / GROUPS_FILENAME,
        data_dir / EVENTS_FILENAME,
    )


# --- Event files ---
def read_events_csv(path):
    """Reads `channel_id,start,end`; an empty channel_id means a system-level event."""
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        return []
    missing = [c for c in EVENT_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: header lacks column(s) {', '.join(missing)}")
    events = []
    for row_number, (channel_id, start, end) in enumerate(
        zip(frame["channel_id"], frame["start"], frame["end"]), start=2
    ):
        try:
            event = AnomalyEvent(int(start), int(end), channel_id.strip() or None)
        except (ValueError, DataError) as e:
            raise DataError(f"{path}: malformed row at line {row_number}: {e}") from e
        events.append(event)
    return sorted(events, key=event_sort_key)


def write_events_csv(events, path):
    rows = [
        (e.channel_id or "", e.start, e.end) for e in sorted(events, key=event_sort_key)
    ]
    pd.DataFrame(rows, columns=EVENT_COLUMNS).to_csv(path, index=False)
    return path


def write_dataset(dataset, out_dir):
    """Writes the standard directory layout read back by load_dataset_dir."""
    out_dir = Path(out_dir)
    channels_dir = out_dir / CHANNELS_SUBDIR
    channels_dir.mkdir(parents=True, exist_ok=True)
    for series in dataset.channels:
        frame = pd.DataFrame(
            {"timestamp": series.timestamps, "value": series.values, "label": series.labels},
            columns=CHANNEL_COLUMNS,
        )
        frame.to_csv(channels_dir / f"{series.channel_id}.csv", index=False, float_format=VALUE_FLOAT_FORMAT)
    group_rows = [
        (channel_id, group_id)
        for group_id, members in dataset.groups.items()
        for channel_id in members
    ]
    pd.DataFrame(group_rows, columns=GROUP_COLUMNS).to_csv(out_dir / GROUPS_FILENAME, index=False)
    write_events_csv(dataset.events, out_dir / EVENTS_FILENAME)
    return out_dir
