"""Scenario configuration and its YAML/JSON representation.

A config file is a mapping with top-level scenario keys and one section per
sub-model::

    pcm_enabled: true
    latency_profile: HL
    initial_speed: 27.78      # m/s
    initial_lane: 1
    duration: 120.0
    seed: 7
    dt: 0.01
    road:     {length: 2000, lane_count: 3, ...}
    traffic:  {inflow_rate: 1.2, ...}
    pcm:      {d_brake: 30, d_cut: 20, ...}
    sut:      {time_gap: 2.0, ...}
    dynamics: {time_constant: 0.3, ...}
    metrics:  {dhw_threshold: 50, pet_threshold: 1, pet_delta: 1, absolute_accel: true}
    profiles:
      CL: {kind: distribution, distribution: {family: gamma, params: {shape: 4, scale: 5}}}

Every section is optional; omitted keys take the dataclass defaults.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Mapping, Optional

import yaml

from .cloud import EgoDynamics, SutConfig
from .errors import ConfigurationError
from .latency import DEFAULT_PROFILES, LatencyProfile
from .pcm import PcmConfig
from .traffic import RoadSegment, TrafficConfig

# initial speeds of the test matrix, km/h
MATRIX_SPEEDS_KMH = (90.0, 100.0, 110.0, 120.0, 130.0)
MATRIX_LANES = (0, 1, 2)


@dataclass(frozen=True)
class MetricsOptions:
    dhw_threshold: float = 50.0
    pet_threshold: float = 1.0
    pet_delta: float = 1.0
    absolute_accel: bool = True
    band: tuple = (0.5, 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    pcm_enabled: bool = True
    latency_profile: str = "NL"
    initial_speed: float = 100.0 / 3.6
    initial_lane: int = 1
    duration: float = 120.0
    seed: int = 0
    dt: float = 0.01
    # ACC set speed; None cruises at the initial speed
    cruise_speed: Optional[float] = None
    # natural lane changes into the ego lane count as cut-ins when the
    # actor starts at most this far ahead of the ego
    natural_cutin_window: float = 100.0
    road: RoadSegment = field(default_factory=RoadSegment)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    pcm: PcmConfig = field(default_factory=PcmConfig)
    sut: SutConfig = field(default_factory=SutConfig)
    dynamics: EgoDynamics = field(default_factory=EgoDynamics)
    metrics: MetricsOptions = field(default_factory=MetricsOptions)
    profiles: Mapping[str, LatencyProfile] = field(default_factory=lambda: dict(DEFAULT_PROFILES))

    def validate(self) -> "ScenarioConfig":
        if not self.duration > 0:
            raise ConfigurationError("must be > 0", "duration")
        if not self.dt > 0:
            raise ConfigurationError("must be > 0", "dt")
        if self.duration < self.dt:
            raise ConfigurationError("must cover at least one step", "duration")
        if not self.initial_speed >= 0:
            raise ConfigurationError("must be >= 0", "initial_speed")
        if not 0 <= self.initial_lane < self.road.lane_count:
            raise ConfigurationError(
                f"must lie in [0, {self.road.lane_count - 1}]", "initial_lane")
        if self.latency_profile not in self.profiles:
            raise ConfigurationError(
                f"unknown profile {self.latency_profile!r}; known: {sorted(self.profiles)}",
                "latency_profile")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("must be a 64-bit unsigned integer", "seed")
        if self.cruise_speed is not None and not self.cruise_speed > 0:
            raise ConfigurationError("must be > 0", "cruise_speed")
        return self

    @property
    def profile(self) -> LatencyProfile:
        return self.profiles[self.latency_profile]

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    def effective_pcm(self) -> PcmConfig:
        return replace(self.pcm, enabled=self.pcm_enabled)

    def effective_sut(self) -> SutConfig:
        speed = self.cruise_speed if self.cruise_speed is not None else max(self.initial_speed, 1.0)
        return replace(self.sut, desired_speed=speed, travel_lane=self.initial_lane)

    # -- (de)serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "profiles":
                out[f.name] = {k: v.to_dict() for k, v in value.items()}
            elif dataclasses.is_dataclass(value):
                out[f.name] = dataclasses.asdict(value)
                if f.name == "metrics":
                    out[f.name]["band"] = list(value.band)
            else:
                out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioConfig":
        data = dict(data or {})
        sections = {
            "road": RoadSegment, "traffic": TrafficConfig, "pcm": PcmConfig,
            "sut": SutConfig, "dynamics": EgoDynamics, "metrics": MetricsOptions,
        }
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise ConfigurationError("unknown key", key)
            if key in sections:
                kwargs[key] = _build(sections[key], value, key)
            elif key == "profiles":
                profiles = dict(DEFAULT_PROFILES)
                for name, spec in (value or {}).items():
                    spec = dict(spec)
                    spec.setdefault("name", name)
                    try:
                        profiles[name] = LatencyProfile.from_dict(spec)
                    except (KeyError, TypeError, ValueError) as exc:
                        raise ConfigurationError(str(exc), f"profiles.{name}") from exc
                kwargs[key] = profiles
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _build(cls, value, section):
    value = dict(value or {})
    names = {f.name for f in fields(cls)}
    for key in value:
        if key not in names:
            raise ConfigurationError("unknown key", f"{section}.{key}")
    if cls is MetricsOptions and "band" in value:
        value["band"] = tuple(value["band"])
    try:
        return cls(**value)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc), section) from exc


def load_config(path) -> ScenarioConfig:
    """Read a YAML (or JSON) scenario file."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, Mapping):
        raise ConfigurationError("top level must be a mapping", str(path))
    return ScenarioConfig.from_dict(data or {})
