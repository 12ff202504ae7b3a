"""Truck-mounted station: firmware loop, GPS and weight sensor models.

The loop is a pure function over an immutable :class:`NodeState`::

    Boot -> ConfigGsm -> ConfigGps -> ReadSensors -> FormatPacket -> ConnectGsm
    ConnectGsm -(no GSM)-> RetryWait
    ConnectGsm -> GprsOn -> PostAndAwait
    PostAndAwait -(200, backlog)-> FormatPacket
    PostAndAwait -(200)-> SleepUntilNext -> ReadSensors
    PostAndAwait -(other)-> RetryWait -> ReadSensors

Readings are kept in a bounded FIFO until the service answers 200.
"""
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np

from .analytics import EARTH_RADIUS_M, haversine_m
from .link import (
    Coverage,
    CoverageMap,
    LinkSimulator,
    Lost,
    OutboundPost,
    coverage_at,
)
from .telemetry import (
    MAX_AXLE_LOCATION,
    SENSOR_MAX_TONS,
    GeoFix,
    TelemetryRecord,
    WeightSample,
    encode_payload,
)
from .utils import SensorKind

logger = logging.getLogger(__name__)

CEP_TO_SIGMA = 1.17741  # median of Rayleigh(sigma) / sigma
DEFAULT_PERIOD_MIN = 5.0
DEFAULT_BUFFER_CAPACITY = 128
DEFAULT_CEP_M = 2.5
DEFAULT_START_EPOCH = 1652702400  # 2022-05-16 06:00 UTC-6
OK_STATUS = 200
TIMEOUT_STATUS = 408

DEFAULT_NOISE_VOLTS = {SensorKind.DP: 0.0, SensorKind.DDE: 0.02}

_METERS_PER_DEGREE = EARTH_RADIUS_M * math.pi / 180.0


class Phase(enum.Enum):
    BOOT = "Boot"
    CONFIG_GSM = "ConfigGsm"
    CONFIG_GPS = "ConfigGps"
    READ_SENSORS = "ReadSensors"
    FORMAT_PACKET = "FormatPacket"
    CONNECT_GSM = "ConnectGsm"
    GPRS_ON = "GprsOn"
    POST_AND_AWAIT = "PostAndAwait"
    SLEEP_UNTIL_NEXT = "SleepUntilNext"
    RETRY_WAIT = "RetryWait"


@dataclass(frozen=True)
class WeightCalibration:
    v_tare: float = 0.5
    v_full: float = 4.5
    full_scale_tons: float = SENSOR_MAX_TONS

    def __post_init__(self) -> None:
        if not self.v_full > self.v_tare:
            raise ValueError("v_full must be greater than v_tare")
        if not self.full_scale_tons > 0:
            raise ValueError("full_scale_tons must be > 0")

    def volts_for(self, tons: float) -> float:
        return self.v_tare + (tons / self.full_scale_tons) * (self.v_full - self.v_tare)


def calibrate(volts: float, calibration: WeightCalibration) -> float:
    tons = (
        (volts - calibration.v_tare)
        / (calibration.v_full - calibration.v_tare)
        * calibration.full_scale_tons
    )
    return min(max(tons, 0.0), calibration.full_scale_tons)


@dataclass(frozen=True)
class NodeConfig:
    device_id: str
    license_plate: str
    axle_location: int = 2
    t: float = DEFAULT_PERIOD_MIN
    calibration: WeightCalibration = field(default_factory=WeightCalibration)
    sensor_kind: SensorKind = SensorKind.DDE
    buffer_capacity: int = DEFAULT_BUFFER_CAPACITY
    gps_cep_m: float = DEFAULT_CEP_M
    rng_seed: int = 0
    token: str = ""
    noise_volts: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.device_id:
            raise ValueError("device_id must be non-empty")
        if not self.license_plate:
            raise ValueError("license_plate must be non-empty")
        if not 1 <= self.axle_location <= MAX_AXLE_LOCATION:
            raise ValueError(f"axle_location must be in [1, {MAX_AXLE_LOCATION}]")
        if not self.t > 0:
            raise ValueError("t must be > 0")
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")
        if self.gps_cep_m < 0:
            raise ValueError("gps_cep_m must be >= 0")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")
        if self.noise_volts is not None and self.noise_volts < 0:
            raise ValueError("noise_volts must be >= 0")
        if not isinstance(self.sensor_kind, SensorKind):
            object.__setattr__(self, "sensor_kind", SensorKind(self.sensor_kind))

    @property
    def period_s(self) -> float:
        return self.t * 60.0

    @property
    def sensor_noise_volts(self) -> float:
        if self.noise_volts is not None:
            return self.noise_volts
        return DEFAULT_NOISE_VOLTS[self.sensor_kind]


class RouteMotion:
    """Constant speed per segment along a waypoint polyline. Trucks wait at
    the first waypoint until departure and stop at the last one."""

    def __init__(
        self,
        waypoints: Sequence[Tuple[float, float]],
        speeds_kmh: Sequence[float] = (60.0,),
        departure_s: float = 0.0,
    ) -> None:
        self.points = np.asarray(waypoints, dtype=float).reshape(-1, 2)
        if len(self.points) == 0:
            raise ValueError("at least one waypoint is needed")
        n_segments = len(self.points) - 1
        speeds = np.asarray(speeds_kmh, dtype=float)
        if speeds.size == 1:
            speeds = np.repeat(speeds, n_segments)
        if n_segments and speeds.size != n_segments:
            raise ValueError(f"expected {n_segments} segment speeds, got {speeds.size}")
        if np.any(speeds <= 0):
            raise ValueError("speeds must be > 0")
        segment_m = np.atleast_1d(haversine_m(self.points[:-1], self.points[1:]))
        if np.any(segment_m <= 0):
            raise ValueError("consecutive waypoints must differ")
        self.departure_s = float(departure_s)
        self.cum_m = np.concatenate([[0.0], np.cumsum(segment_m)])
        self.cum_s = np.concatenate([[0.0], np.cumsum(segment_m / (speeds / 3.6))])

    @property
    def length_m(self) -> float:
        return float(self.cum_m[-1])

    @property
    def duration_s(self) -> float:
        return float(self.cum_s[-1])

    def distance_at(self, time_s: float) -> float:
        elapsed = min(max(time_s - self.departure_s, 0.0), self.duration_s)
        return float(np.interp(elapsed, self.cum_s, self.cum_m))

    def position_at(self, time_s: float) -> Tuple[float, float]:
        d = self.distance_at(time_s)
        return (
            float(np.interp(d, self.cum_m, self.points[:, 0])),
            float(np.interp(d, self.cum_m, self.points[:, 1])),
        )


class LoadSchedule:
    """Piecewise-constant true payload. Empty before the first step."""

    def __init__(self, steps: Sequence[Tuple[float, float]] = ()) -> None:
        ordered = sorted((float(t), float(tons)) for t, tons in steps)
        self.times = np.asarray([t for t, _ in ordered])
        self.tons = np.asarray([tons for _, tons in ordered])
        if np.any(self.tons < 0):
            raise ValueError("loads must be >= 0")

    def at(self, time_s: float) -> float:
        i = int(np.searchsorted(self.times, time_s, side="right")) - 1
        return float(self.tons[i]) if i >= 0 else 0.0


@dataclass
class TruckEnvironment:
    """The physical world one station measures."""

    motion: RouteMotion
    coverage: CoverageMap = field(default_factory=CoverageMap)
    load: LoadSchedule = field(default_factory=LoadSchedule)
    start_epoch: int = DEFAULT_START_EPOCH

    @classmethod
    def parked(
        cls,
        latitude: float,
        longitude: float,
        load_tons: float = 0.0,
        gsm: bool = True,
        gps: bool = True,
        start_epoch: int = DEFAULT_START_EPOCH,
    ) -> "TruckEnvironment":
        gap = ((0.0, 1.0),)
        return cls(
            RouteMotion([(latitude, longitude)]),
            CoverageMap(gsm_gaps=() if gsm else gap, gps_gaps=() if gps else gap),
            LoadSchedule([(-math.inf, load_tons)]),
            start_epoch,
        )

    def position_at(self, time_s: float) -> Tuple[float, float]:
        return self.motion.position_at(time_s)

    def route_position_at(self, time_s: float) -> float:
        return self.motion.distance_at(time_s)

    def true_load_at(self, time_s: float) -> float:
        return self.load.at(time_s)

    def coverage_at(self, time_s: float) -> Coverage:
        return coverage_at(self.coverage, self.route_position_at(time_s))

    def epoch_at(self, time_s: float) -> float:
        return self.start_epoch + time_s


@dataclass(frozen=True)
class NodeState:
    phase: Phase = Phase.BOOT
    buffer: Tuple[TelemetryRecord, ...] = ()
    last_fix: Optional[GeoFix] = None
    next_action_time: float = 0.0
    cycle_start: float = 0.0
    clock_offset: Optional[float] = None
    payload: Optional[bytes] = None
    generated: int = 0
    delivered: int = 0
    deferred: int = 0
    dropped: int = 0
    skipped: int = 0
    config: Optional[NodeConfig] = field(default=None, repr=False)
    rng: Any = field(default=None, compare=False, repr=False)

    @property
    def buffered(self) -> int:
        return len(self.buffer)


def boot(config: NodeConfig, now: float = 0.0) -> NodeState:
    return NodeState(
        config=config,
        next_action_time=now,
        cycle_start=now,
        rng=np.random.default_rng([config.rng_seed, 0]),
    )


def sample_fix_errors(cep_m: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` east/north position errors in meters, shape ``(n, 2)``.

    Each axis is Gaussian with sigma = CEP / 1.17741, so the median radial
    error equals the CEP.
    """
    return rng.normal(0.0, cep_m / CEP_TO_SIGMA, size=(n, 2))


def offset_position(
    latitude: float, longitude: float, east_m: float, north_m: float
) -> Tuple[float, float]:
    lat = latitude + north_m / _METERS_PER_DEGREE
    lon = longitude + east_m / (_METERS_PER_DEGREE * math.cos(math.radians(latitude)))
    return min(max(lat, -90.0), 90.0), (lon + 180.0) % 360.0 - 180.0


def read_gps(
    env: TruckEnvironment, config: NodeConfig, state: NodeState, now: float
) -> Optional[GeoFix]:
    """A fresh noisy fix, the last fix flagged stale when GPS is shadowed,
    or None when no fix was ever obtained."""
    if not env.coverage_at(now).gps:
        return state.last_fix.stale() if state.last_fix is not None else None
    lat, lon = env.position_at(now)
    east, north = sample_fix_errors(config.gps_cep_m, 1, state.rng)[0]
    lat, lon = offset_position(lat, lon, east, north)
    return GeoFix(lat, lon, int(round(env.epoch_at(now))))


def read_weight(
    env: TruckEnvironment,
    config: NodeConfig,
    now: float,
    rng: Optional[np.random.Generator] = None,
) -> WeightSample:
    """Without ``rng`` the noise is drawn from a generator seeded by the
    station seed and ``now``, so repeated reads at one instant agree."""
    cal = config.calibration
    volts = cal.volts_for(env.true_load_at(now))
    sigma = config.sensor_noise_volts
    if sigma > 0:
        if rng is None:
            rng = np.random.default_rng(
                [config.rng_seed, 2, int(round(abs(now) * 1000))]
            )
        volts += rng.normal(0.0, sigma)
    volts = max(volts, 0.0)
    tons = min(calibrate(volts, cal), SENSOR_MAX_TONS)
    return WeightSample(raw_value=volts, weight_tons=round(tons, 2))


def _transition(state: NodeState, phase: Phase, **changes: Any) -> NodeState:
    logger.debug(f"{state.phase.value} -> {phase.value}")
    return replace(state, phase=phase, **changes)


def _read_sensors(
    state: NodeState, env: TruckEnvironment, config: NodeConfig, now: float
) -> NodeState:
    fix = read_gps(env, config, state, now)
    if fix is None:
        return _transition(
            state,
            Phase.SLEEP_UNTIL_NEXT,
            cycle_start=now,
            next_action_time=now,
            skipped=state.skipped + 1,
        )
    last_fix, offset = state.last_fix, state.clock_offset
    if fix.fix_valid:
        last_fix, offset = fix, fix.timestamp - now
        device_ts = fix.timestamp
    else:
        device_ts = int(round(now + (offset or 0.0)))
    weight = read_weight(env, config, now, state.rng)
    record = TelemetryRecord(
        device_id=config.device_id,
        license_plate=config.license_plate,
        axle_location=config.axle_location,
        fix=fix,
        weight_tons=weight.weight_tons,
        device_timestamp=device_ts,
    )
    buffer = state.buffer + (record,)
    dropped = state.dropped
    if len(buffer) > config.buffer_capacity:
        buffer = buffer[1:]
        dropped += 1
        logger.warning(
            f"{config.device_id}: buffer full, dropped oldest record ({dropped} so far)"
        )
    return _transition(
        state,
        Phase.FORMAT_PACKET,
        buffer=buffer,
        last_fix=last_fix,
        clock_offset=offset,
        cycle_start=now,
        next_action_time=now,
        generated=state.generated + 1,
        dropped=dropped,
    )


def step(
    state: NodeState,
    env: TruckEnvironment,
    link: LinkSimulator,
    now: float,
) -> Tuple[NodeState, Optional[OutboundPost]]:
    """Executes the work of the current phase.

    Returns the new state and, from PostAndAwait only, the post to send. The
    answer to that post must be fed back through :func:`handle_response`.
    """
    config = state.config
    if config is None:
        raise ValueError("state was not created by boot()")
    if now < state.next_action_time:
        raise ValueError(
            f"step at {now} before next action time {state.next_action_time}"
        )
    phase = state.phase
    if phase is Phase.BOOT:
        return _transition(state, Phase.CONFIG_GSM, next_action_time=now), None
    if phase is Phase.CONFIG_GSM:
        return _transition(state, Phase.CONFIG_GPS, next_action_time=now), None
    if phase is Phase.CONFIG_GPS:
        return (
            _transition(
                state,
                Phase.READ_SENSORS,
                cycle_start=now,
                next_action_time=now + config.period_s,
            ),
            None,
        )
    if phase is Phase.READ_SENSORS:
        return _read_sensors(state, env, config, now), None
    if phase is Phase.FORMAT_PACKET:
        if not state.buffer:
            state = _transition(state, Phase.SLEEP_UNTIL_NEXT, next_action_time=now)
            return state, None
        payload = encode_payload(state.buffer[0])
        state = _transition(
            state, Phase.CONNECT_GSM, payload=payload, next_action_time=now
        )
        return state, None
    if phase is Phase.CONNECT_GSM:
        if not link.can_attach(env.coverage_at(now)):
            logger.debug(f"{config.device_id}: no GSM at t={now:.0f}s")
            return _transition(state, Phase.RETRY_WAIT, next_action_time=now), None
        return _transition(state, Phase.GPRS_ON, next_action_time=now), None
    if phase is Phase.GPRS_ON:
        return _transition(state, Phase.POST_AND_AWAIT, next_action_time=now), None
    if phase is Phase.POST_AND_AWAIT:
        if state.payload is None:
            raise ValueError("PostAndAwait without a formatted packet")
        post = OutboundPost(
            device_id=config.device_id,
            token=config.token,
            payload=state.payload,
            device_timestamp=state.buffer[0].device_timestamp,
            sent_at=now,
        )
        return replace(state, next_action_time=math.inf), post
    if phase in (Phase.SLEEP_UNTIL_NEXT, Phase.RETRY_WAIT):
        wake = max(now, state.cycle_start + config.period_s)
        return _transition(state, Phase.READ_SENSORS, next_action_time=wake), None
    raise ValueError(f"Unknown phase {phase}")


def handle_response(
    state: NodeState, status: int, now: Optional[float] = None
) -> NodeState:
    """Branches on the service answer to the pending post. ``now`` is when the
    answer (or the timeout) reached the node."""
    if state.phase is not Phase.POST_AND_AWAIT:
        raise ValueError(f"No post pending in phase {state.phase.value}")
    if now is None:
        now = state.cycle_start
    if status != OK_STATUS:
        return _transition(state, Phase.RETRY_WAIT, payload=None, next_action_time=now)
    deferred = state.deferred + (1 if len(state.buffer) > 1 else 0)
    buffer = state.buffer[1:]
    phase = Phase.FORMAT_PACKET if buffer else Phase.SLEEP_UNTIL_NEXT
    return _transition(
        state,
        phase,
        buffer=buffer,
        payload=None,
        next_action_time=now,
        delivered=state.delivered + 1,
        deferred=deferred,
    )


def run_offline(
    config: NodeConfig,
    env: TruckEnvironment,
    link: LinkSimulator,
    until_s: float,
    respond: Optional[Callable[[OutboundPost], int]] = None,
    start_s: float = 0.0,
) -> Tuple[NodeState, List[Phase], List[OutboundPost]]:
    """Drives one node without a scheduler.

    Each post goes through ``link``; when it reaches the service the status
    comes from ``respond(post)`` (200 when omitted). Lost posts and lost
    responses surface as a timeout. Stops before the first reading scheduled
    after ``until_s`` and returns the final state, the visited phases and the
    posts sent.
    """
    state = boot(config, start_s)
    trace = [state.phase]
    posts: List[OutboundPost] = []
    while not (state.phase is Phase.READ_SENSORS and state.next_action_time > until_s):
        now = state.next_action_time
        state, post = step(state, env, link, now)
        if post is not None:
            posts.append(post)
            outcome = link.transmit(post)
            if isinstance(outcome, Lost):
                state = handle_response(state, TIMEOUT_STATUS, now + outcome.timeout_s)
            else:
                status = respond(post) if respond is not None else OK_STATUS
                if outcome.response_lost:
                    status, delay = TIMEOUT_STATUS, link.params.timeout_s
                else:
                    delay = outcome.delay_s
                state = handle_response(state, status, now + delay)
        trace.append(state.phase)
    return state, trace, posts
