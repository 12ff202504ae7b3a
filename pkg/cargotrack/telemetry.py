"""Telemetry records shared by the station, the ingest service and the store.

The wire payload is a compact JSON object whose keys follow the dashboard
column names::

    {"device_id":"CI-205-DDE","license_plates":"C65892","axel_ubicacion":2,
     "timestamp":1652719541,"latitude":13.705933,"longitude":-89.170845,
     "weight_tons":0.62}

Coordinates always carry 6 decimals and weights 2. A record whose fix is a
stale last-known position additionally carries ``"fix_valid":false`` and the
``"fix_timestamp"`` of that position.
"""
import json
import math
import numbers
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Union

import pandas as pd
import pytz

from .utils import display_tz, ensure_datetime_with_tz, epoch_to_timestamp

SENSOR_MAX_TONS = 10.0
MAX_AXLE_LOCATION = 16

CSV_COLUMNS = [
    "stamp",
    "timestamp",
    "axel_ubicacion",
    "latitude",
    "longitude",
    "device_id",
    "license_plates",
    "sensorDDE_",
]
CSV_HEADER = ",".join(CSV_COLUMNS)
STAMP_FORMAT = "%m-%d %H:%M:%S"


class PayloadError(ValueError):
    """Base for everything that makes a payload unacceptable."""

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        self.field = field
        super().__init__(message)


class PayloadParseError(PayloadError):
    pass


class PayloadSchemaError(PayloadError):
    pass


class PayloadValidationError(PayloadError):
    pass


def _is_number(value: Any) -> bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def _is_integer(value: Any) -> bool:
    return isinstance(value, numbers.Integral) and not isinstance(value, bool)


@dataclass(frozen=True)
class GeoFix:
    latitude: float
    longitude: float
    timestamp: int
    fix_valid: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "latitude", round(float(self.latitude), 6) + 0.0)
        object.__setattr__(self, "longitude", round(float(self.longitude), 6) + 0.0)
        object.__setattr__(self, "timestamp", int(self.timestamp))
        if not -90.0 <= self.latitude <= 90.0:
            raise PayloadValidationError(
                f"latitude {self.latitude} outside [-90, 90]", field="latitude"
            )
        if not -180.0 <= self.longitude <= 180.0:
            raise PayloadValidationError(
                f"longitude {self.longitude} outside [-180, 180]", field="longitude"
            )
        if self.timestamp <= 0:
            raise PayloadValidationError(
                f"timestamp {self.timestamp} must be positive", field="timestamp"
            )

    def stale(self) -> "GeoFix":
        return GeoFix(self.latitude, self.longitude, self.timestamp, fix_valid=False)


@dataclass(frozen=True)
class WeightSample:
    raw_value: float
    weight_tons: float


@dataclass(frozen=True)
class TelemetryRecord:
    device_id: str
    license_plate: str
    axle_location: int
    fix: GeoFix
    weight_tons: float
    device_timestamp: int

    def __post_init__(self) -> None:
        if not isinstance(self.device_id, str) or not self.device_id:
            raise PayloadValidationError("device_id must be non-empty", "device_id")
        if not isinstance(self.license_plate, str) or not self.license_plate:
            raise PayloadValidationError(
                "license_plates must be non-empty", "license_plates"
            )
        if not _is_integer(self.axle_location) or not (
            1 <= self.axle_location <= MAX_AXLE_LOCATION
        ):
            raise PayloadValidationError(
                f"axel_ubicacion must be an integer in [1, {MAX_AXLE_LOCATION}]",
                "axel_ubicacion",
            )
        weight = round(float(self.weight_tons), 2) + 0.0
        if math.isnan(weight) or not 0.0 <= weight <= SENSOR_MAX_TONS:
            raise PayloadValidationError(
                f"weight_tons {self.weight_tons} outside [0, {SENSOR_MAX_TONS:g}]",
                "weight_tons",
            )
        object.__setattr__(self, "weight_tons", weight)
        object.__setattr__(self, "device_timestamp", int(self.device_timestamp))
        if self.device_timestamp <= 0:
            raise PayloadValidationError("timestamp must be positive", "timestamp")
        if self.fix.fix_valid and self.device_timestamp != self.fix.timestamp:
            raise PayloadValidationError(
                "timestamp must equal the fix time for a valid fix", "timestamp"
            )

    @property
    def latitude(self) -> float:
        return self.fix.latitude

    @property
    def longitude(self) -> float:
        return self.fix.longitude

    @property
    def key(self) -> tuple:
        """Deduplication key."""
        return (self.device_id, self.device_timestamp)


@dataclass(frozen=True)
class StoredRecord:
    record: TelemetryRecord
    receipt_stamp: pd.Timestamp
    seq: int = 0

    @property
    def device_id(self) -> str:
        return self.record.device_id

    @property
    def device_timestamp(self) -> int:
        return self.record.device_timestamp

    def to_json(self) -> str:
        return (
            f'{{"seq":{self.seq},'
            f'"stamp":{json.dumps(self.receipt_stamp.isoformat())},'
            f'"record":{encode_payload(self.record).decode("utf-8")}}}'
        )

    @classmethod
    def from_json(cls, line: Union[str, bytes]) -> "StoredRecord":
        try:
            obj = json.loads(line)
        except ValueError as err:
            raise PayloadParseError(f"malformed stored line: {err}") from None
        if not isinstance(obj, dict):
            raise PayloadSchemaError("stored line must be a JSON object")
        for key in ("seq", "stamp", "record"):
            if key not in obj:
                raise PayloadSchemaError(f"missing field '{key}'", field=key)
        if not _is_integer(obj["seq"]):
            raise PayloadSchemaError("'seq' must be an integer", field="seq")
        try:
            receipt_stamp = pd.Timestamp(obj["stamp"])
        except (TypeError, ValueError) as err:
            raise PayloadSchemaError(f"bad 'stamp': {err}", field="stamp") from None
        if pd.isna(receipt_stamp):
            raise PayloadSchemaError("'stamp' must be a time", field="stamp")
        return cls(
            record=record_from_dict(obj["record"]),
            receipt_stamp=receipt_stamp,
            seq=obj["seq"],
        )


@dataclass(frozen=True)
class AuthToken:
    token: str
    device_id: str

    def __post_init__(self) -> None:
        if not self.token:
            raise ValueError("token must be non-empty")
        if not self.device_id:
            raise ValueError("device_id must be non-empty")


# Wire codec ----------------------------------------------------------------

_REQUIRED_KEYS = [
    "device_id",
    "license_plates",
    "axel_ubicacion",
    "timestamp",
    "latitude",
    "longitude",
    "weight_tons",
]


def encode_payload(record: TelemetryRecord) -> bytes:
    if not isinstance(record, TelemetryRecord):
        raise PayloadValidationError("not a TelemetryRecord")
    fix = record.fix
    parts = [
        f'"device_id":{json.dumps(record.device_id, ensure_ascii=False)}',
        f'"license_plates":{json.dumps(record.license_plate, ensure_ascii=False)}',
        f'"axel_ubicacion":{record.axle_location}',
        f'"timestamp":{record.device_timestamp}',
        f'"latitude":{fix.latitude:.6f}',
        f'"longitude":{fix.longitude:.6f}',
        f'"weight_tons":{record.weight_tons:.2f}',
    ]
    if not fix.fix_valid:
        parts.append('"fix_valid":false')
        parts.append(f'"fix_timestamp":{fix.timestamp}')
    return ("{" + ",".join(parts) + "}").encode("utf-8")


def record_to_dict(record: TelemetryRecord) -> Dict[str, Any]:
    return json.loads(encode_payload(record))


def record_from_dict(obj: Any) -> TelemetryRecord:
    if not isinstance(obj, dict):
        raise PayloadSchemaError("payload must be a JSON object")
    for key in _REQUIRED_KEYS:
        if key not in obj:
            raise PayloadSchemaError(f"missing field '{key}'", field=key)

    for key in ("device_id", "license_plates"):
        if not isinstance(obj[key], str):
            raise PayloadValidationError(f"{key} must be a string", field=key)
    for key in ("axel_ubicacion", "timestamp"):
        if not _is_integer(obj[key]):
            raise PayloadValidationError(f"{key} must be an integer", field=key)
    for key in ("latitude", "longitude", "weight_tons"):
        if not _is_number(obj[key]):
            raise PayloadValidationError(f"{key} must be a number", field=key)

    fix_valid = obj.get("fix_valid", True)
    if not isinstance(fix_valid, bool):
        raise PayloadValidationError("fix_valid must be a boolean", "fix_valid")
    fix_timestamp = obj.get("fix_timestamp", obj["timestamp"])
    if not _is_integer(fix_timestamp):
        raise PayloadValidationError(
            "fix_timestamp must be an integer", "fix_timestamp"
        )

    fix = GeoFix(obj["latitude"], obj["longitude"], fix_timestamp, fix_valid)
    return TelemetryRecord(
        device_id=obj["device_id"],
        license_plate=obj["license_plates"],
        axle_location=obj["axel_ubicacion"],
        fix=fix,
        weight_tons=obj["weight_tons"],
        device_timestamp=obj["timestamp"],
    )


def decode_payload(payload: Union[bytes, str]) -> TelemetryRecord:
    if isinstance(payload, bytes):
        try:
            payload = payload.decode("utf-8")
        except UnicodeDecodeError as err:
            raise PayloadParseError(f"payload is not UTF-8: {err}") from None
    if not payload.strip():
        raise PayloadParseError("empty payload")
    try:
        obj = json.loads(payload)
    except ValueError as err:
        raise PayloadParseError(f"malformed JSON: {err}") from None
    return record_from_dict(obj)


# CSV -----------------------------------------------------------------------


def format_stamp(stamp: pd.Timestamp, tz: Optional[pytz.BaseTzInfo] = None) -> str:
    if tz is not None:
        stamp = stamp.tz_convert(tz)
    return stamp.strftime(STAMP_FORMAT)


def to_csv_row(stored: StoredRecord, tz: Optional[pytz.BaseTzInfo] = None) -> str:
    """One export line in dashboard column order. ``tz`` is the display
    offset; by default the stamp is rendered in the offset it was stored with.
    """
    r = stored.record
    return ",".join(
        [
            format_stamp(stored.receipt_stamp, tz),
            str(r.device_timestamp),
            str(r.axle_location),
            f"{r.latitude:.6f}",
            f"{r.longitude:.6f}",
            r.device_id,
            r.license_plate,
            f"{r.weight_tons:.2f}",
        ]
    )


def parse_csv_frame(
    df: pd.DataFrame, tz: Optional[pytz.BaseTzInfo] = None
) -> List[StoredRecord]:
    """Turns an export (or a dashboard dump with the same columns) back into
    records. The stamp has no year; it is taken from the device timestamp.
    """
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise PayloadSchemaError(f"missing CSV columns {missing}", field=missing[0])
    tz = tz or display_tz()
    records = []
    for row in df.itertuples(index=False):
        values = dict(zip(df.columns, row))
        device_ts = int(values["timestamp"])
        fix = GeoFix(float(values["latitude"]), float(values["longitude"]), device_ts)
        record = TelemetryRecord(
            device_id=str(values["device_id"]),
            license_plate=str(values["license_plates"]),
            axle_location=int(values["axel_ubicacion"]),
            fix=fix,
            weight_tons=float(values["sensorDDE_"]),
            device_timestamp=device_ts,
        )
        year = epoch_to_timestamp(device_ts, tz).year
        stamp = ensure_datetime_with_tz(
            pd.to_datetime(f"{year}-{values['stamp']}", format="%Y-%m-%d %H:%M:%S"),
            tz=tz,
        )
        records.append(StoredRecord(record, stamp))
    return records


def read_csv_export(
    path: str, tz: Optional[pytz.BaseTzInfo] = None
) -> List[StoredRecord]:
    df = pd.read_csv(path, dtype=str)
    return parse_csv_frame(df, tz)


def records_to_frame(
    stored: Iterable[StoredRecord], tz: Optional[pytz.BaseTzInfo] = None
) -> pd.DataFrame:
    rows: List[Dict[str, Any]] = []
    for s in stored:
        r = s.record
        rows.append(
            {
                "stamp": format_stamp(s.receipt_stamp, tz),
                "timestamp": r.device_timestamp,
                "axel_ubicacion": r.axle_location,
                "latitude": r.latitude,
                "longitude": r.longitude,
                "device_id": r.device_id,
                "license_plates": r.license_plate,
                "sensorDDE_": r.weight_tons,
            }
        )
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


__all__ = [
    "AuthToken",
    "CSV_COLUMNS",
    "CSV_HEADER",
    "GeoFix",
    "PayloadError",
    "PayloadParseError",
    "PayloadSchemaError",
    "PayloadValidationError",
    "StoredRecord",
    "TelemetryRecord",
    "WeightSample",
    "decode_payload",
    "encode_payload",
    "parse_csv_frame",
    "read_csv_export",
    "record_from_dict",
    "record_to_dict",
    "records_to_frame",
    "to_csv_row",
]
