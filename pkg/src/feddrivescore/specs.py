"""Metric specifications: expectation type and fitted distribution family."""
import json
from dataclasses import asdict, dataclass

from .exceptions import ConfigurationError

EXPECTATIONS = ("positive", "negative", "oscillator")
DISTRIBUTIONS = ("exponential", "normal")


@dataclass(frozen=True)
class MetricSpec:
    name: str
    expectation: str
    distribution: str

    def __post_init__(self):
        if not self.name:
            raise ConfigurationError("metric name must be non-empty")
        if self.expectation not in EXPECTATIONS:
            raise ConfigurationError(f"{self.name}: expectation must be one of {EXPECTATIONS}")
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigurationError(f"{self.name}: distribution must be one of {DISTRIBUTIONS}")

    def to_dict(self):
        return asdict(self)


def specs_from_json(obj):
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        specs = tuple(MetricSpec(d["name"], d["expectation"], d["distribution"]) for d in obj)
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed metric spec list: {exc}") from exc
    check_specs(specs)
    return specs


def specs_to_json(specs):
    return [s.to_dict() for s in specs]


def check_specs(specs):
    specs = tuple(specs)
    if not specs:
        raise ConfigurationError("at least one metric is required")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigurationError("metric names must be unique")
    return specs


FLEET_SPECS = (
    MetricSpec("HarshAccel", "negative", "exponential"),
    MetricSpec("HarshDecel", "negative", "exponential"),
    MetricSpec("SharpTurn", "negative", "exponential"),
    MetricSpec("IdleRatio", "negative", "normal"),
    MetricSpec("AvgSpeed", "positive", "normal"),
    MetricSpec("AvgRPM", "oscillator", "normal"),
)

UBI_SPECS = (
    MetricSpec("AvgSpeed", "oscillator", "exponential"),
    MetricSpec("Accel", "negative", "exponential"),
    MetricSpec("SuddenStart", "negative", "exponential"),
    MetricSpec("AbruptLaneChange", "negative", "exponential"),
    MetricSpec("IntenseBrake", "negative", "exponential"),
    MetricSpec("SuddenStop", "negative", "exponential"),
    MetricSpec("AbruptSteering", "negative", "exponential"),
)
