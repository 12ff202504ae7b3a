import json
import os

import numpy as np
import pandas as pd
import pytest

from cargotrack.telemetry import (
    CSV_COLUMNS,
    CSV_HEADER,
    MAX_AXLE_LOCATION,
    SENSOR_MAX_TONS,
    AuthToken,
    GeoFix,
    PayloadError,
    PayloadParseError,
    PayloadSchemaError,
    PayloadValidationError,
    StoredRecord,
    TelemetryRecord,
    decode_payload,
    encode_payload,
    read_csv_export,
    record_to_dict,
    records_to_frame,
    to_csv_row,
)

FIXTURE = os.path.join(os.path.dirname(__file__), "data", "ci205_2022-05-16.csv")

WIRE = (
    b'{"device_id":"CI-205-DDE","license_plates":"C65892","axel_ubicacion":2,'
    b'"timestamp":1652719541,"latitude":13.705933,"longitude":-89.170845,'
    b'"weight_tons":0.62}'
)


@pytest.fixture()
def record():
    yield TelemetryRecord(
        device_id="CI-205-DDE",
        license_plate="C65892",
        axle_location=2,
        fix=GeoFix(13.705933, -89.170845, 1652719541),
        weight_tons=0.62,
        device_timestamp=1652719541,
    )


def test_encode_payload_matches_wire_format(record):
    assert encode_payload(record) == WIRE


def test_decode_payload(record):
    assert decode_payload(WIRE) == record
    assert decode_payload(WIRE.decode("utf-8")) == record


def test_weights_and_coordinates_keep_wire_precision():
    fix = GeoFix(13.7059334, -89.1698, 1652719266)
    r = TelemetryRecord("CI-205-DDE", "C65892", 2, fix, 0.6, 1652719266)
    assert r.latitude == 13.705933
    wire = encode_payload(r)
    assert b'"longitude":-89.169800' in wire
    assert b'"weight_tons":0.60' in wire
    r = TelemetryRecord("D", "P", 1, GeoFix(1, 1, 10), 1.234, 10)
    assert r.weight_tons == 1.23


def test_stale_fix_carries_optional_keys(record):
    stale = TelemetryRecord(
        device_id=record.device_id,
        license_plate=record.license_plate,
        axle_location=record.axle_location,
        fix=record.fix.stale(),
        weight_tons=record.weight_tons,
        device_timestamp=record.device_timestamp + 300,
    )
    wire = encode_payload(stale)
    assert wire.endswith(b',"fix_valid":false,"fix_timestamp":1652719541}')
    assert decode_payload(wire) == stale
    assert b"fix_valid" not in encode_payload(record)


def test_valid_fix_must_match_device_timestamp(record):
    with pytest.raises(PayloadValidationError) as excinfo:
        TelemetryRecord("CI-205-DDE", "C65892", 2, record.fix, 0.62, 1652719542)
    assert excinfo.value.field == "timestamp"


@pytest.mark.parametrize(
    "payload, error",
    [
        (b"", PayloadParseError),
        (b"   ", PayloadParseError),
        (b"{not json", PayloadParseError),
        (b"\xff\xfe", PayloadParseError),
        (b"[]", PayloadSchemaError),
    ],
)
def test_decode_rejects_unparseable(payload, error):
    with pytest.raises(error):
        decode_payload(payload)


@pytest.mark.parametrize(
    "change, field",
    [
        ({"weight_tons": None}, "weight_tons"),
        ({"latitude": 91.0}, "latitude"),
        ({"longitude": -180.5}, "longitude"),
        ({"weight_tons": 10.5}, "weight_tons"),
        ({"weight_tons": -0.2}, "weight_tons"),
        ({"axel_ubicacion": 0}, "axel_ubicacion"),
        ({"axel_ubicacion": True}, "axel_ubicacion"),
        ({"timestamp": "1652719541"}, "timestamp"),
        ({"device_id": ""}, "device_id"),
        ({"license_plates": 65892}, "license_plates"),
        ({"fix_valid": "no"}, "fix_valid"),
    ],
)
def test_decode_rejects_invalid_fields(record, change, field):
    obj = record_to_dict(record)
    obj.update(change)
    body = json.dumps(obj)
    with pytest.raises(PayloadValidationError) as excinfo:
        decode_payload(body.encode("utf-8"))
    assert excinfo.value.field == field
    assert isinstance(excinfo.value, ValueError)


def test_decode_reports_missing_field(record):
    obj = record_to_dict(record)
    del obj["weight_tons"]
    with pytest.raises(PayloadSchemaError) as excinfo:
        decode_payload(json.dumps(obj))
    assert excinfo.value.field == "weight_tons"
    assert isinstance(excinfo.value, PayloadError)


def test_stored_record_json_line(record):
    stamp = pd.Timestamp("2022-05-16 10:45:58", tz="Etc/GMT+6")
    stored = StoredRecord(record, stamp, seq=7)
    line = stored.to_json()
    assert line.startswith('{"seq":7,"stamp":"2022-05-16T10:45:58-06:00","record":{')
    assert StoredRecord.from_json(line) == stored
    with pytest.raises(PayloadParseError):
        StoredRecord.from_json('{"seq":7,')
    with pytest.raises(PayloadSchemaError):
        StoredRecord.from_json('{"seq":7,"stamp":"2022-05-16T10:45:58-06:00"}')
    for bad, field in [
        (line.replace('"seq":7', '"seq":"x"'), "seq"),
        (line.replace('"seq":7', '"seq":7.5'), "seq"),
        (line.replace('"2022-05-16T10:45:58-06:00"', '"later"'), "stamp"),
        (line.replace('"2022-05-16T10:45:58-06:00"', "null"), "stamp"),
    ]:
        with pytest.raises(PayloadSchemaError) as excinfo:
            StoredRecord.from_json(bad)
        assert excinfo.value.field == field


def test_read_csv_export_fixture():
    rows = read_csv_export(FIXTURE)
    assert len(rows) == 13
    first = rows[0]
    assert first.device_id == "CI-205-DDE"
    assert first.device_timestamp == 1652719541
    assert first.record.axle_location == 2
    assert first.record.license_plate == "C65892"
    assert first.receipt_stamp == pd.Timestamp("2022-05-16 16:45:58", tz="UTC")
    assert [r.record.weight_tons for r in rows][:3] == [0.62, 0.6, 0.54]
    assert rows[-1].record.latitude == 13.703486


def test_to_csv_row_uses_dashboard_columns():
    rows = read_csv_export(FIXTURE)
    assert to_csv_row(rows[0]) == (
        "05-16 10:45:58,1652719541,2,13.705933,-89.170845,CI-205-DDE,C65892,0.62"
    )
    assert to_csv_row(rows[1]).endswith(",C65892,0.60")
    assert to_csv_row(rows[9]) == (
        "05-16 10:02:46,1652716939,2,13.701119,-89.169830,CI-205-DDE,C65892,2.28"
    )
    assert CSV_HEADER.split(",") == CSV_COLUMNS


def test_records_to_frame():
    rows = read_csv_export(FIXTURE)
    df = records_to_frame(rows)
    assert list(df.columns) == CSV_COLUMNS
    assert len(df) == 13
    assert df["stamp"].iloc[0] == "05-16 10:45:58"
    assert df["sensorDDE_"].iloc[6] == 1.2


def test_auth_token_must_be_complete():
    with pytest.raises(ValueError):
        AuthToken("", "CI-205-DDE")
    with pytest.raises(ValueError):
        AuthToken("secret", "")


ID_CHARS = list("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_ .Ñé")


def random_record(rng):
    def text(n):
        return "".join(rng.choice(ID_CHARS, int(n)))

    ts = int(rng.integers(1_000_000_000, 2_000_000_000))
    fix = GeoFix(rng.uniform(-90, 90), rng.uniform(-180, 180), ts)
    device_ts = ts
    if rng.uniform() < 0.3:
        fix = fix.stale()
        device_ts = ts + 300 * int(rng.integers(1, 100))
    return TelemetryRecord(
        device_id=text(rng.integers(1, 33)),
        license_plate=text(rng.integers(1, 17)),
        axle_location=int(rng.integers(1, MAX_AXLE_LOCATION + 1)),
        fix=fix,
        weight_tons=rng.uniform(0, SENSOR_MAX_TONS),
        device_timestamp=device_ts,
    )


def test_generated_records_survive_the_wire():
    rng = np.random.default_rng(2022)
    for _ in range(500):
        record = random_record(rng)
        wire = encode_payload(record)
        assert wire == encode_payload(record)
        assert len(wire) <= 512
        assert decode_payload(wire) == record
        assert decode_payload(wire.decode("utf-8")) == record
