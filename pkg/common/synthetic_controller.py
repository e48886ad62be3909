from dataclasses import dataclass

import numpy as np

from common.data_controller import AnomalyEvent, ChannelSeries, MultiChannelDataset
from common.errors import DataError
from utils.log import get_logger

logger = get_logger(__name__)

# --- Configuration ---
ARCHETYPES = ("spike", "level_shift", "oscillation", "motif")
MAX_DENSITY = 0.2
PLACEMENT_RETRIES = 500
LATENT_KNOT_SPACING = 100


@dataclass(frozen=True)
class SynthConfig:
    channels: int = 5
    groups: int = 2
    length: int = 50000
    grid_step: int = 30
    start: int = 1_600_000_000
    density: float = 0.018
    archetypes: tuple = ARCHETYPES
    group_event_fraction: float = 0.3
    min_event_len: int = 10
    max_event_len: int = 60
    amplitude: float = 3.0
    noise: float = 0.1
    motif_length: int = 20
    min_gap: int = 50

    def __post_init__(self):
        if self.density > MAX_DENSITY:
            raise DataError(
                f"anomaly density {self.density} > {MAX_DENSITY} rejected (low-density regime only)"
            )
        if self.density < 0:
            raise DataError(f"anomaly density must be non-negative, got {self.density}")
        if self.channels < 1 or not 1 <= self.groups <= self.channels:
            raise DataError(f"need 1 <= groups <= channels, got {self.groups} groups for {self.channels} channels")
        if self.length < 1 or self.grid_step < 1:
            raise DataError("length and grid_step must be positive")
        if not 1 <= self.min_event_len <= self.max_event_len:
            raise DataError("need 1 <= min_event_len <= max_event_len")
        if not 0.0 <= self.group_event_fraction <= 1.0:
            raise DataError("group_event_fraction must lie in [0, 1]")
        unknown = [a for a in self.archetypes if a not in ARCHETYPES]
        if unknown or not self.archetypes:
            raise DataError(f"unknown anomaly archetype(s): {unknown}")
        if self.motif_length < 3:
            raise DataError("motif_length must be at least 3")
        if self.min_gap < 1:
            raise DataError(f"min_gap must be >= 1 so planted events stay separate, got {self.min_gap}")


def group_assignment(channels, groups):
    """Channel i goes to group floor(i * G / C)."""
    return [i * groups // channels for i in range(channels)]


class _Occupancy:
    """Tracks planted intervals per channel, keeping min_gap nominal steps between them."""

    def __init__(self, channels, length, min_gap):
        self.taken = np.zeros((channels, length), dtype=bool)
        self.length = length
        self.min_gap = min_gap

    def free(self, channel, start, stop):
        lo = max(0, start - self.min_gap)
        hi = min(self.length, stop + self.min_gap)
        return not self.taken[channel, lo:hi].any()

    def take(self, channel, start, stop):
        self.taken[channel, start:stop] = True


def _find_start(rng, occupancy, members, event_len, config):
    lo = config.min_gap
    hi = config.length - config.min_gap - event_len
    if hi <= lo:
        return None
    for _ in range(PLACEMENT_RETRIES):
        start = int(rng.integers(lo, hi))
        if all(occupancy.free(c, start, start + event_len) for c in members):
            return start
    return None


def _make_motif(rng, motif_length):
    knots = rng.normal(size=max(4, motif_length // 4))
    shape = np.interp(np.linspace(0, len(knots) - 1, motif_length), np.arange(len(knots)), knots)
    shape = shape - shape.mean()
    scale = shape.std()
    return shape / scale if scale > 0 else np.sin(np.linspace(0, 2 * np.pi, motif_length))


def _anomaly_shape(archetype, event_len, sign, motif, rng):
    steps = np.arange(event_len)
    if archetype == "spike":
        return sign * 1.5 * (1.0 - np.abs(np.linspace(-1.0, 1.0, event_len)))
    if archetype == "level_shift":
        return np.full(event_len, sign * 0.8)
    if archetype == "oscillation":
        period = rng.uniform(4.0, 8.0)
        return 0.7 * np.sin(2 * np.pi * steps / period)
    tiles = int(np.ceil(event_len / len(motif)))
    return sign * 0.8 * np.tile(motif, tiles)[:event_len]


def _plan_events(rng, config, membership):
    """Places group events first, then per-channel events, until each channel's budget is spent."""
    occupancy = _Occupancy(config.channels, config.length, config.min_gap)
    budget = np.full(config.channels, int(round(config.density * config.length)))
    planned = []  # (members, start, event_len, archetype, sign)

    group_budget = int(round(config.group_event_fraction * budget.sum()))
    spent = 0
    while spent < group_budget:
        progressed = False
        for g in range(config.groups):
            members = [c for c in range(config.channels) if membership[c] == g and budget[c] >= config.min_event_len]
            if len(members) < 2 or spent >= group_budget:
                continue
            k = int(rng.integers(2, len(members) + 1))
            chosen = sorted(int(c) for c in rng.choice(members, size=k, replace=False))
            event_len = int(rng.integers(config.min_event_len, config.max_event_len + 1))
            event_len = int(min(event_len, min(budget[c] for c in chosen)))
            start = _find_start(rng, occupancy, chosen, event_len, config)
            if start is None:
                raise DataError("could not place a group event; lower synth.density or synth.min_gap")
            archetype = config.archetypes[int(rng.integers(len(config.archetypes)))]
            sign = 1.0 if rng.random() < 0.5 else -1.0
            for c in chosen:
                occupancy.take(c, start, start + event_len)
                budget[c] -= event_len
            planned.append((chosen, start, event_len, archetype, sign))
            spent += event_len * len(chosen)
            progressed = True
        if not progressed:
            break

    for c in range(config.channels):
        while budget[c] >= config.min_event_len:
            event_len = int(rng.integers(config.min_event_len, config.max_event_len + 1))
            event_len = int(min(event_len, budget[c]))
            start = _find_start(rng, occupancy, [c], event_len, config)
            if start is None:
                raise DataError(f"could not place an event on channel_{c}; lower synth.density or synth.min_gap")
            archetype = config.archetypes[int(rng.integers(len(config.archetypes)))]
            sign = 1.0 if rng.random() < 0.5 else -1.0
            occupancy.take(c, start, start + event_len)
            budget[c] -= event_len
            planned.append(([c], start, event_len, archetype, sign))
    return planned


def generate_synthetic(config, seed):
    """
    Builds a seeded multichannel telemetry dataset with planted anomalies.
    Nominal signal per channel: an orbit-like sinusoid, a smooth latent
    shared within the channel's group, and white noise. Anomalies are drawn
    from the configured archetypes; some events hit several channels of one
    group over the same interval.
    """
    rng = np.random.default_rng(seed)
    membership = group_assignment(config.channels, config.groups)
    steps = np.arange(config.length)
    timestamps = config.start + steps.astype(np.int64) * config.grid_step

    knots = config.length // LATENT_KNOT_SPACING + 2
    latents = []
    for _ in range(config.groups):
        walk = np.cumsum(rng.normal(scale=0.3, size=knots))
        latents.append(np.interp(steps, np.arange(knots) * LATENT_KNOT_SPACING, walk))

    signals = []
    scales = []
    for c in range(config.channels):
        scale = rng.uniform(0.5, 2.0)
        period = rng.uniform(200.0, 2000.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        loading = rng.uniform(0.5, 1.5)
        signal = scale * np.sin(2 * np.pi * steps / period + phase)
        signal += loading * latents[membership[c]]
        signal += rng.normal(scale=config.noise, size=config.length)
        signals.append(signal)
        scales.append(scale)

    motif = _make_motif(rng, config.motif_length)
    labels = np.zeros((config.channels, config.length), dtype=np.int8)
    events = []
    for members, start, event_len, archetype, sign in _plan_events(rng, config, membership):
        shape = _anomaly_shape(archetype, event_len, sign, motif, rng)
        for c in members:
            signals[c][start:start + event_len] += config.amplitude * scales[c] * shape
            labels[c, start:start + event_len] = 1
            events.append(
                AnomalyEvent(int(timestamps[start]), int(timestamps[start + event_len - 1]), f"channel_{c}")
            )

    channels = [
        ChannelSeries(f"channel_{c}", timestamps, signals[c], labels[c]) for c in range(config.channels)
    ]
    groups = {}
    for c, g in enumerate(membership):
        groups.setdefault(f"group_{g}", []).append(f"channel_{c}")
    dataset = MultiChannelDataset(channels, groups, events, config.grid_step)

    realized = float(labels.mean()) if labels.size else 0.0
    logger.info(
        f"✅ Synthesized {config.channels} channel(s) x {config.length} steps, "
        f"{len(events)} event(s), anomaly density {realized:.4f} (target {config.density})"
    )
    return dataset


def realized_density(dataset):
    total = sum(len(s) for s in dataset.channels)
    return sum(int(s.labels.sum()) for s in dataset.channels) / total if total else 0.0
