class TelemetryError(Exception):
    """Base class for every error raised by the pipeline."""


class DataError(TelemetryError):
    pass


class MaskingError(TelemetryError):
    pass


class LeakageError(MaskingError):
    pass


class FeatureError(TelemetryError):
    pass


class ShapeletError(TelemetryError):
    pass


class LearnerError(TelemetryError):
    pass


class SelectionError(TelemetryError):
    pass


class EventError(TelemetryError):
    pass


class StructureError(TelemetryError):
    pass


class ConfigError(TelemetryError):
    pass


class TrainingError(TelemetryError):
    """Wraps a failure inside one training job with its channel/(n, m) context."""

    def __init__(self, message, channel_id=None, n=None, m=None):
        context = []
        if channel_id is not None:
            context.append(f"channel {channel_id}")
        if n is not None:
            context.append(f"n={n}" if m is None else f"(n={n}, m={m})")
        prefix = " ".join(context)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.channel_id = channel_id
        self.n = n
        self.m = m
