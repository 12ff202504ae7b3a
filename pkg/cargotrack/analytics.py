"""Geodesic helpers and anomaly detectors over a truck's reported track.

All detectors take records in ascending device-timestamp order. They accept
either :class:`TelemetryRecord` or :class:`StoredRecord` items and hand the
same objects back inside the events they return.
"""
import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .telemetry import StoredRecord, TelemetryRecord
from .utils import ConfigError, epoch_to_timestamp

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000
DEFAULT_CORRIDOR_M = 250.0
DEFAULT_WEIGHT_THRESHOLD_TONS = 0.5
DEFAULT_GAP_FACTOR = 3.0

AnyRecord = Union[TelemetryRecord, StoredRecord]
LatLon = Tuple[float, float]


def _record(item: AnyRecord) -> TelemetryRecord:
    return item.record if isinstance(item, StoredRecord) else item


class EventKind(enum.Enum):
    ROUTE_DEVIATION = "RouteDeviation"
    WEIGHT_CHANGE = "WeightChange"
    LINK_GAP = "LinkGap"


@dataclass(frozen=True)
class AnomalyEvent:
    kind: EventKind
    start: int
    end: int
    magnitude: float
    records: Tuple[Any, ...] = field(default=(), repr=False, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "start": self.start,
            "end": self.end,
            "magnitude": round(self.magnitude, 3),
            "records": len(self.records),
        }


@dataclass(frozen=True)
class RoutePlan:
    waypoints: Tuple[LatLon, ...]
    corridor_m: float = DEFAULT_CORRIDOR_M

    def __post_init__(self) -> None:
        points = tuple((float(lat), float(lon)) for lat, lon in self.waypoints)
        object.__setattr__(self, "waypoints", points)
        if len(points) < 2:
            raise ConfigError("route needs at least 2 waypoints", field="waypoints")
        if not self.corridor_m > 0:
            raise ConfigError("must be > 0", field="corridor_m")


@dataclass(frozen=True)
class DepotZone:
    latitude: float
    longitude: float
    radius_m: float
    name: str = ""

    def contains(self, latitude: float, longitude: float) -> bool:
        return haversine_m((self.latitude, self.longitude), (latitude, longitude)) <= (
            self.radius_m
        )


# Geometry ------------------------------------------------------------------


def haversine_m(a: Any, b: Any) -> Any:
    """Great-circle distance in meters.

    ``a`` and ``b`` are ``(lat, lon)`` pairs or arrays of shape ``(..., 2)``.
    Returns a float for single points and an array otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lat1, lon1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lat2, lon2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    h = (
        np.sin((lat2 - lat1) / 2) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    )
    d = 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    if np.ndim(d) == 0:
        return float(d)
    return d


def _project(points: np.ndarray, origin: LatLon) -> np.ndarray:
    """Local equirectangular projection to meters around ``origin``."""
    lat0, lon0 = np.radians(origin[0]), np.radians(origin[1])
    lat, lon = np.radians(points[..., 0]), np.radians(points[..., 1])
    x = EARTH_RADIUS_M * (lon - lon0) * np.cos(lat0)
    y = EARTH_RADIUS_M * (lat - lat0)
    return np.stack([x, y], axis=-1)


def _segment_distances(points: np.ndarray, a: LatLon, b: LatLon) -> np.ndarray:
    if a == b:
        raise ValueError("segment endpoints must differ")
    mid = ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2)
    pa, pb = _project(np.asarray([a, b], dtype=float), mid)
    p = _project(points, mid)
    ab = pb - pa
    t = np.clip(((p - pa) @ ab) / (ab @ ab), 0.0, 1.0)
    foot = pa + t[:, None] * ab
    return np.hypot(*(p - foot).T)


def cross_track_distance_m(p: LatLon, segment: Tuple[LatLon, LatLon]) -> float:
    """Distance from ``p`` to the segment ``(a, b)``, or to the nearer endpoint
    when the perpendicular foot falls outside it."""
    a, b = (tuple(map(float, segment[0])), tuple(map(float, segment[1])))
    points = np.asarray([p], dtype=float)
    return float(_segment_distances(points, a, b)[0])  # type: ignore


def distance_to_route_m(points: Any, waypoints: Sequence[LatLon]) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0 or len(points[0]) == 0:
        return np.zeros(0)
    best = np.full(len(points), np.inf)
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        if a == b:
            continue
        best = np.minimum(best, _segment_distances(points, a, b))
    return best


def _valid(records: Iterable[AnyRecord]) -> List[AnyRecord]:
    return [r for r in records if _record(r).fix.fix_valid]


def _coordinates(records: Sequence[AnyRecord]) -> np.ndarray:
    return np.asarray(
        [(_record(r).latitude, _record(r).longitude) for r in records], dtype=float
    ).reshape(-1, 2)


def track_distance_km(records: Sequence[AnyRecord]) -> float:
    points = _coordinates(_valid(records))
    if len(points) < 2:
        return 0.0
    return float(np.sum(haversine_m(points[:-1], points[1:]))) / 1000.0


def track_frame(records: Sequence[AnyRecord]) -> pd.DataFrame:
    """One row per record with the step distance from the previous valid fix
    and the running total in km."""
    rows = [_record(r) for r in records]
    df = pd.DataFrame(
        {
            "timestamp": [r.device_timestamp for r in rows],
            "latitude": [r.latitude for r in rows],
            "longitude": [r.longitude for r in rows],
            "weight_tons": [r.weight_tons for r in rows],
            "fix_valid": [r.fix.fix_valid for r in rows],
        }
    )
    df["step_m"] = 0.0
    valid = df[df["fix_valid"]]
    if len(valid) > 1:
        points = valid[["latitude", "longitude"]].to_numpy()
        steps = haversine_m(points[:-1], points[1:])
        df.loc[valid.index[1:], "step_m"] = steps
    df["cumulative_km"] = df["step_m"].cumsum() / 1000.0
    return df


# Detectors -----------------------------------------------------------------


def _runs(mask: Sequence[bool]) -> List[Tuple[int, int]]:
    """Inclusive (first, last) index pairs of maximal True runs."""
    runs = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def route_deviation_events(
    records: Sequence[AnyRecord], plan: RoutePlan
) -> List[AnomalyEvent]:
    valid = _valid(records)
    if not valid:
        return []
    distances = distance_to_route_m(_coordinates(valid), plan.waypoints)
    events = []
    for first, last in _runs(distances > plan.corridor_m):
        events.append(
            AnomalyEvent(
                EventKind.ROUTE_DEVIATION,
                start=_record(valid[first]).device_timestamp,
                end=_record(valid[last]).device_timestamp,
                magnitude=float(distances[first : last + 1].max()),
                records=tuple(valid[first : last + 1]),
            )
        )
    return events


def weight_change_events(
    records: Sequence[AnyRecord],
    threshold_tons: float = DEFAULT_WEIGHT_THRESHOLD_TONS,
    depot_zones: Optional[Sequence[DepotZone]] = None,
) -> List[AnomalyEvent]:
    """A consecutive pair whose weight changes by more than ``threshold_tons``
    outside every depot zone opens an event. The event spans the maximal run
    of consecutive changes with the same sign around that pair, so a drop
    spread over several reports is one event. Magnitude is the net change.

    A load followed straight away by an unload gives two events that share
    the record between them: the first ends where the second starts.
    """
    if threshold_tons < 0:
        raise ValueError("threshold_tons must be >= 0")
    rows = [_record(r) for r in records]
    if len(rows) < 2:
        return []
    zones = list(depot_zones or [])
    weights = np.asarray([r.weight_tons for r in rows], dtype=float)
    deltas = np.round(np.diff(weights), 2)
    signs = np.sign(deltas)
    in_depot = [any(z.contains(r.latitude, r.longitude) for z in zones) for r in rows]

    spans: List[Tuple[int, int]] = []
    for i, delta in enumerate(deltas):
        if abs(delta) <= threshold_tons or in_depot[i] or in_depot[i + 1]:
            continue
        lo = i
        while lo > 0 and signs[lo - 1] == signs[i]:
            lo -= 1
        hi = i
        while hi < len(deltas) - 1 and signs[hi + 1] == signs[i]:
            hi += 1
        if not spans or spans[-1] != (lo, hi):
            spans.append((lo, hi))

    return [
        AnomalyEvent(
            EventKind.WEIGHT_CHANGE,
            start=rows[lo].device_timestamp,
            end=rows[hi + 1].device_timestamp,
            magnitude=round(float(weights[hi + 1] - weights[lo]), 2),
            records=tuple(records[lo : hi + 2]),
        )
        for lo, hi in spans
    ]


def link_gap_events(
    records: Sequence[AnyRecord],
    expected_t_s: float,
    factor: float = DEFAULT_GAP_FACTOR,
) -> List[AnomalyEvent]:
    if not factor > 1:
        raise ValueError("factor must be > 1")
    if not expected_t_s > 0:
        raise ValueError("expected_t_s must be > 0")
    events = []
    for prev, cur in zip(records[:-1], records[1:]):
        gap = _record(cur).device_timestamp - _record(prev).device_timestamp
        if gap > factor * expected_t_s:
            events.append(
                AnomalyEvent(
                    EventKind.LINK_GAP,
                    start=_record(prev).device_timestamp,
                    end=_record(cur).device_timestamp,
                    magnitude=float(gap),
                    records=(prev, cur),
                )
            )
    return events


def infer_period_s(records: Sequence[AnyRecord]) -> Optional[float]:
    """Median spacing of consecutive reports, or None with fewer than two."""
    stamps = [_record(r).device_timestamp for r in records]
    if len(stamps) < 2:
        return None
    return float(np.median(np.diff(stamps)))


# Report --------------------------------------------------------------------


@dataclass
class TrackReport:
    device_id: str
    record_count: int = 0
    distance_km: float = 0.0
    first_timestamp: Optional[int] = None
    last_timestamp: Optional[int] = None
    deviation_events: List[AnomalyEvent] = field(default_factory=list)
    weight_events: List[AnomalyEvent] = field(default_factory=list)
    link_gaps: List[AnomalyEvent] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "device_id": self.device_id,
            "record_count": self.record_count,
            "distance_km": round(self.distance_km, 3),
            "first_timestamp": self.first_timestamp,
            "last_timestamp": self.last_timestamp,
            "deviation_events": [e.to_dict() for e in self.deviation_events],
            "weight_events": [e.to_dict() for e in self.weight_events],
            "link_gaps": [e.to_dict() for e in self.link_gaps],
        }

    def to_text(self, tz: Any = None) -> str:
        def when(ts: Optional[int]) -> str:
            if ts is None:
                return "-"
            return epoch_to_timestamp(ts, tz).strftime("%Y-%m-%d %H:%M:%S")

        lines = [
            f"Device:          {self.device_id}",
            f"Records:         {self.record_count}",
            f"Distance:        {self.distance_km:.3f} km",
            f"First report:    {when(self.first_timestamp)}",
            f"Last report:     {when(self.last_timestamp)}",
            f"Route deviations: {len(self.deviation_events)}",
        ]
        for e in self.deviation_events:
            lines.append(f"  {when(e.start)} - {when(e.end)}  {e.magnitude:.0f} m")
        lines.append(f"Weight changes:  {len(self.weight_events)}")
        for e in self.weight_events:
            lines.append(f"  {when(e.start)} - {when(e.end)}  {e.magnitude:+.2f} t")
        lines.append(f"Link gaps:       {len(self.link_gaps)}")
        for e in self.link_gaps:
            lines.append(f"  {when(e.start)} - {when(e.end)}  {e.magnitude:.0f} s")
        return "\n".join(lines)


def build_report(
    device_id: str,
    records: Sequence[AnyRecord],
    plan: Optional[RoutePlan] = None,
    threshold_tons: float = DEFAULT_WEIGHT_THRESHOLD_TONS,
    depot_zones: Optional[Sequence[DepotZone]] = None,
    expected_t_s: Optional[float] = None,
    gap_factor: float = DEFAULT_GAP_FACTOR,
) -> TrackReport:
    records = sorted(records, key=lambda r: _record(r).device_timestamp)
    report = TrackReport(device_id)
    if not records:
        return report
    report.record_count = len(records)
    report.distance_km = track_distance_km(records)
    report.first_timestamp = _record(records[0]).device_timestamp
    report.last_timestamp = _record(records[-1]).device_timestamp
    if plan is not None:
        report.deviation_events = route_deviation_events(records, plan)
    report.weight_events = weight_change_events(records, threshold_tons, depot_zones)
    expected = expected_t_s or infer_period_s(records)
    if expected:
        report.link_gaps = link_gap_events(records, expected, gap_factor)
    return report


def report(
    source: Any,
    device_id: str,
    start: Optional[int] = None,
    end: Optional[int] = None,
    **kwargs: Any,
) -> TrackReport:
    """Fetches the device's records in ``[start, end]`` from a store or a
    :class:`~cargotrack.clients.FleetClient` and summarises them."""
    records = source.records(device_id, start, end)
    if not records:
        logger.info(f"No records for {device_id} in the requested range")
    return build_report(device_id, records, **kwargs)
