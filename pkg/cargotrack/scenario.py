"""Simulation worlds read from YAML.

A scenario names the routes trucks drive, where along each route the GSM and
GPS signals drop, the link parameters and the fleet roster. The grammar is
documented in the README under "Scenario files". Every problem is reported as
a :class:`~cargotrack.utils.ConfigError` naming the field and its line.
"""
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .analytics import DEFAULT_CORRIDOR_M, DepotZone, RoutePlan
from .link import CoverageMap, LinkParams, LinkSimulator
from .node import (
    DEFAULT_START_EPOCH,
    LoadSchedule,
    NodeConfig,
    RouteMotion,
    TruckEnvironment,
    WeightCalibration,
)
from .telemetry import AuthToken
from .utils import ConfigError, ConfigSection, SensorKind, load_yaml, load_yaml_file

logger = logging.getLogger(__name__)

LatLon = Tuple[float, float]


def node_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for the ``index``-th truck of a run."""
    state = np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class RouteSpec:
    name: str
    plan: RoutePlan
    speeds_kmh: Tuple[float, ...]
    coverage: CoverageMap

    def motion(self, departure_s: float = 0.0) -> RouteMotion:
        return RouteMotion(self.plan.waypoints, self.speeds_kmh, departure_s)


@dataclass(frozen=True)
class TruckSpec:
    config: NodeConfig
    route: str
    departure_s: float = 0.0
    load_schedule: Tuple[Tuple[float, float], ...] = ()
    explicit_seed: bool = False


@dataclass
class Scenario:
    routes: Dict[str, RouteSpec]
    trucks: List[TruckSpec]
    link: LinkParams = field(default_factory=LinkParams)
    duration_s: float = 7200.0
    seed: int = 0
    start_epoch: int = DEFAULT_START_EPOCH
    depots: Tuple[DepotZone, ...] = ()
    source: Optional[str] = None

    def __post_init__(self) -> None:
        for i, truck in enumerate(self.trucks):
            if truck.route not in self.routes:
                raise ConfigError(
                    f"unknown route {truck.route!r}",
                    field=f"trucks[{i}].route",
                    source=self.source,
                )
        self.trucks = [self._seeded(i, t) for i, t in enumerate(self.trucks)]

    def _seeded(self, index: int, truck: TruckSpec) -> TruckSpec:
        if truck.explicit_seed:
            return truck
        config = replace(truck.config, rng_seed=node_seed(self.seed, index))
        return replace(truck, config=config)

    def with_seed(self, seed: int) -> "Scenario":
        """Same world with another master seed. Trucks with their own
        ``rng_seed`` keep it."""
        return replace(self, seed=seed, trucks=list(self.trucks))

    def route_for(self, truck: TruckSpec) -> RouteSpec:
        return self.routes[truck.route]

    def environment(self, truck: TruckSpec) -> TruckEnvironment:
        route = self.route_for(truck)
        return TruckEnvironment(
            motion=route.motion(truck.departure_s),
            coverage=route.coverage,
            load=LoadSchedule(truck.load_schedule),
            start_epoch=self.start_epoch,
        )

    def link_for(self, truck: TruckSpec) -> LinkSimulator:
        return LinkSimulator(self.link, seed=[truck.config.rng_seed, 1])

    def plan_for(self, device_id: str) -> Optional[RoutePlan]:
        for truck in self.trucks:
            if truck.config.device_id == device_id:
                return self.route_for(truck).plan
        return None

    def tokens(self) -> List[AuthToken]:
        return [AuthToken(t.config.token, t.config.device_id) for t in self.trucks]


# Parsing -------------------------------------------------------------------


def _positive(value: float) -> bool:
    return value > 0


def _non_negative(value: float) -> bool:
    return value >= 0


def _pair(value: Any) -> Tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValueError("expected a [a, b] pair")
    if any(isinstance(v, bool) for v in value):
        raise ValueError("expected numbers, got boolean")
    return float(value[0]), float(value[1])


def _pairs(value: Any) -> Tuple[Tuple[float, float], ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        raise ValueError("expected a list of [a, b] pairs")
    return tuple(_pair(v) for v in value)


def _floats(value: Any) -> Tuple[float, ...]:
    if isinstance(value, bool):
        raise ValueError("expected numbers, got boolean")
    if isinstance(value, (int, float)):
        return (float(value),)
    if not isinstance(value, list) or not value:
        raise ValueError("expected a number or a non-empty list of numbers")
    if any(isinstance(v, bool) for v in value):
        raise ValueError("expected numbers, got boolean")
    return tuple(float(v) for v in value)


def _sensor_kind(value: Any) -> SensorKind:
    name = str(value).upper()
    if name in SensorKind.__members__:
        return SensorKind[name]
    return SensorKind(name)


def _parse_link(root: ConfigSection) -> LinkParams:
    section = root.section("link", default=None)
    defaults = LinkParams()
    params = LinkParams(
        bandwidth_bps=section.take(
            "bandwidth_bps", float, defaults.bandwidth_bps, _positive, "must be > 0"
        ),
        register_delay_s=section.take(
            "register_delay_s",
            float,
            defaults.register_delay_s,
            _non_negative,
            "must be >= 0",
        ),
        rtt_s=section.take(
            "rtt_s", float, defaults.rtt_s, _non_negative, "must be >= 0"
        ),
        loss_prob=section.take(
            "loss_prob",
            float,
            defaults.loss_prob,
            lambda p: 0 <= p <= 1,
            "must be in [0, 1]",
        ),
        response_loss_prob=section.take(
            "response_loss_prob",
            float,
            defaults.response_loss_prob,
            lambda p: 0 <= p <= 1,
            "must be in [0, 1]",
        ),
    )
    section.finish()
    return params


def _parse_depots(root: ConfigSection) -> Tuple[DepotZone, ...]:
    depots = []
    for where, item, _ in root.items("depots", default=[]):
        entry = ConfigSection(item, where, root.source)
        depots.append(
            DepotZone(
                latitude=entry.take(
                    "latitude",
                    float,
                    check=lambda v: -90 <= v <= 90,
                    reason="must be in [-90, 90]",
                ),
                longitude=entry.take(
                    "longitude",
                    float,
                    check=lambda v: -180 <= v <= 180,
                    reason="must be in [-180, 180]",
                ),
                radius_m=entry.take(
                    "radius_m", float, check=_positive, reason="must be > 0"
                ),
                name=entry.take("name", str, default=""),
            )
        )
        entry.finish()
    return tuple(depots)


def _parse_route(name: str, section: ConfigSection) -> RouteSpec:
    waypoints = section.take(
        "waypoints",
        _pairs,
        check=lambda w: len(w) >= 2,
        reason="needs at least 2 [latitude, longitude] waypoints",
    )
    for lat, lon in waypoints:
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            raise section.error("waypoints", f"({lat}, {lon}) is not a valid position")
    corridor_m = section.take(
        "corridor_m", float, DEFAULT_CORRIDOR_M, _positive, "must be > 0"
    )
    speeds = section.take(
        "speeds_kmh",
        _floats,
        default=(60.0,),
        check=lambda s: all(v > 0 for v in s),
        reason="speeds must be > 0",
    )
    if len(speeds) not in (1, len(waypoints) - 1):
        raise section.error(
            "speeds_kmh",
            f"expected 1 or {len(waypoints) - 1} segment speeds, got {len(speeds)}",
        )
    try:
        length_m = RouteMotion(waypoints, speeds).length_m
    except ValueError as err:
        raise section.error("waypoints", str(err)) from None

    cov = section.section("coverage", default=None)
    gaps = {}
    for key in ("gsm_gaps", "gps_gaps"):
        gaps[key] = cov.take(key, _pairs, default=())
        try:
            CoverageMap(**{key: gaps[key]}, route_length_m=length_m)
        except ValueError as err:
            raise cov.error(key, f"{err} (route is {length_m:.0f} m long)") from None
    cov.finish()
    section.finish()
    return RouteSpec(
        name=name,
        plan=RoutePlan(waypoints, corridor_m),
        speeds_kmh=speeds,
        coverage=CoverageMap(route_length_m=length_m, **gaps),
    )


def _parse_calibration(entry: ConfigSection) -> WeightCalibration:
    section = entry.section("calibration", default=None)
    defaults = WeightCalibration()
    v_tare = section.take("v_tare", float, defaults.v_tare)
    v_full = section.take("v_full", float, defaults.v_full)
    full_scale = section.take(
        "full_scale_tons", float, defaults.full_scale_tons, _positive, "must be > 0"
    )
    section.finish()
    if not v_full > v_tare:
        raise section.error("v_full", "must be greater than v_tare")
    return WeightCalibration(v_tare, v_full, full_scale)


def _parse_truck(where: str, entry: ConfigSection, duration_s: float) -> TruckSpec:
    device_id = entry.take("device_id", str, check=bool, reason="must be non-empty")
    explicit_seed = entry.has("rng_seed")
    kwargs: Dict[str, Any] = dict(
        device_id=device_id,
        license_plate=entry.take(
            "license_plate", str, check=bool, reason="must be non-empty"
        ),
        axle_location=entry.take(
            "axle_location", int, 2, lambda a: 1 <= a <= 16, "must be in [1, 16]"
        ),
        t=entry.take("t", float, 5.0, _positive, "must be > 0"),
        calibration=_parse_calibration(entry),
        sensor_kind=entry.take(
            "sensor_kind", _sensor_kind, SensorKind.DDE, reason="must be DP or DDE"
        ),
        buffer_capacity=entry.take(
            "buffer_capacity", int, 128, lambda c: c >= 1, "must be >= 1"
        ),
        gps_cep_m=entry.take("gps_cep_m", float, 2.5, _non_negative, "must be >= 0"),
        noise_volts=entry.take(
            "noise_volts", float, None, _non_negative, "must be >= 0"
        ),
        rng_seed=entry.take(
            "rng_seed", int, 0, lambda s: 0 <= s < 2 ** 64, "must be in [0, 2^64)"
        ),
        token=entry.take("token", str, device_id, bool, "must be non-empty"),
    )
    route = entry.take("route", str)
    departure_s = entry.take("departure_s", float, 0.0, _non_negative, "must be >= 0")
    schedule = entry.take("load_schedule", _pairs, default=())
    for when, tons in schedule:
        if not 0 <= when <= duration_s:
            raise entry.error(
                "load_schedule", f"time {when} outside the run [0, {duration_s}]"
            )
        if tons < 0:
            raise entry.error("load_schedule", f"load {tons} must be >= 0")
    entry.finish()
    if schedule and min(w for w, _ in schedule) > departure_s:
        warnings.warn(
            f"{where} ({device_id}): load schedule starts after departure, "
            "the truck leaves empty"
        )
    return TruckSpec(
        config=NodeConfig(**kwargs),
        route=route,
        departure_s=departure_s,
        load_schedule=schedule,
        explicit_seed=explicit_seed,
    )


def parse_scenario(doc: Any, source: Optional[str] = None) -> Scenario:
    root = ConfigSection(doc, "", source)
    seed = root.take("seed", int, 0, lambda s: s >= 0, "must be >= 0")
    duration_s = root.take("duration_s", float, check=_positive, reason="must be > 0")
    start_epoch = root.take(
        "start_epoch", int, DEFAULT_START_EPOCH, _non_negative, "must be >= 0"
    )
    link = _parse_link(root)
    depots = _parse_depots(root)

    routes_section = root.section("routes")
    routes = {}
    for name in list(routes_section.mapping):
        routes[str(name)] = _parse_route(str(name), routes_section.section(name))
    routes_section.finish()
    if not routes:
        raise root.error("routes", "at least one route is needed")

    trucks: List[TruckSpec] = []
    device_lines: Dict[str, Optional[int]] = {}
    token_lines: Dict[str, Optional[int]] = {}
    for where, item, line in root.items("trucks"):
        entry = ConfigSection(item, where, source)
        truck = _parse_truck(where, entry, duration_s)
        if truck.route not in routes:
            raise entry.error("route", f"unknown route {truck.route!r}")
        config = truck.config
        if config.device_id in device_lines:
            raise ConfigError(
                f"device listed twice (first on line {device_lines[config.device_id]})",
                field=f"{where}.device_id",
                line=line,
                source=source,
            )
        if config.token in token_lines:
            raise ConfigError(
                f"token already used (first on line {token_lines[config.token]})",
                field=f"{where}.token",
                line=line,
                source=source,
            )
        device_lines[config.device_id] = line
        token_lines[config.token] = line
        trucks.append(truck)
    if not trucks:
        raise root.error("trucks", "at least one truck is needed")
    root.finish()

    scenario = Scenario(
        routes=routes,
        trucks=trucks,
        link=link,
        duration_s=duration_s,
        seed=seed,
        start_epoch=start_epoch,
        depots=depots,
        source=source,
    )
    logger.debug(
        f"Scenario {source or '<string>'}: {len(routes)} routes, {len(trucks)} trucks, "
        f"{duration_s:.0f} s"
    )
    return scenario


def loads_scenario(text: str, source: Optional[str] = None) -> Scenario:
    return parse_scenario(load_yaml(text, source), source)


def load_scenario(path: str, seed: Optional[int] = None) -> Scenario:
    """Reads and validates a scenario file. ``seed`` replaces its master seed."""
    scenario = parse_scenario(load_yaml_file(path), path)
    if seed is not None:
        scenario = scenario.with_seed(seed)
    return scenario
