import pandas as pd
import pytest
import pytz

from cargotrack.utils import (
    ConfigError,
    ConfigSection,
    SensorKind,
    display_tz,
    ensure_datetime_with_tz,
    epoch_to_timestamp,
    load_yaml,
    safe_device_id,
    to_epoch,
    urljoin,
)

SV = display_tz()


def test_display_tz_is_fixed_offset():
    assert display_tz() == pytz.FixedOffset(-360)
    assert display_tz(5.5) == pytz.FixedOffset(330)


def test_ensure_is_datetime():
    assert ensure_datetime_with_tz("16.05.2022 10:45:41") == pd.Timestamp(
        "2022-05-16 10:45:41", tz=SV
    )
    assert ensure_datetime_with_tz(1652719541) == pd.Timestamp(
        "2022-05-16 10:45:41", tz=SV
    )
    assert ensure_datetime_with_tz("1652719541") == ensure_datetime_with_tz(
        1652719541
    )
    assert ensure_datetime_with_tz(
        "16.05.2022 16:45:41", tz="UTC"
    ) == ensure_datetime_with_tz(1652719541)
    aware = pd.Timestamp("2022-05-16 16:45:41", tz="UTC")
    assert ensure_datetime_with_tz(aware, tz=SV) == aware
    assert str(ensure_datetime_with_tz(aware, tz=SV).tz) == "UTC"


def test_to_epoch():
    assert to_epoch(1652719541) == 1652719541
    assert to_epoch("1652719541") == 1652719541
    assert to_epoch("16.05.2022 10:45:41") == 1652719541
    assert to_epoch("16.05.2022 10:45:41", tz="UTC") == 1652719541 - 6 * 3600


def test_epoch_to_timestamp():
    stamp = epoch_to_timestamp(1652719541)
    assert stamp.strftime("%m-%d %H:%M:%S") == "05-16 10:45:41"
    assert epoch_to_timestamp(1652719541.25).microsecond == 250000


def test_safe_device_id():
    assert safe_device_id("CI-205-DDE") == "CI-205-DDE"
    assert safe_device_id("CI-205.DDE/x") == "CI-205_DDEx"
    with pytest.raises(ValueError):
        safe_device_id("///")


def test_urljoin():
    assert urljoin("http://127.0.0.1:8080", "v1/query") == (
        "http://127.0.0.1:8080/v1/query"
    )
    assert urljoin("http://127.0.0.1:8080/", "v1/query") == (
        "http://127.0.0.1:8080/v1/query"
    )
    assert urljoin("http://127.0.0.1:8080", "/v1/query") == (
        "http://127.0.0.1:8080/v1/query"
    )
    assert urljoin("http://some.where/to/", "go/") == "http://some.where/to/go/"


def test_sensor_kind_aliases():
    assert SensorKind("DDE") is SensorKind.HOSE
    assert SensorKind("DP") is SensorKind.AXLE


def test_config_error_message():
    err = ConfigError("must be > 0", field="trucks[0].t", line=12, source="s.yaml")
    assert str(err) == "s.yaml:12: trucks[0].t: must be > 0"
    assert str(ConfigError("bad")) == "bad"
    assert isinstance(err, ValueError)


def test_config_section_reports_line_of_bad_value():
    doc = load_yaml("bind:\n  host: 0.0.0.0\n  port: 70000\n", "svc.yaml")
    bind = ConfigSection(doc, "", "svc.yaml").section("bind")
    assert bind.take("host", str) == "0.0.0.0"
    with pytest.raises(ConfigError) as excinfo:
        bind.take("port", int, check=lambda p: p < 65536, reason="must be < 65536")
    assert str(excinfo.value) == "svc.yaml:3: bind.port: must be < 65536"
    assert excinfo.value.line == 3


def test_config_section_rejects_unknown_and_missing_fields():
    doc = load_yaml("seed: 1\ncolour: red\n")
    root = ConfigSection(doc, "")
    assert root.take("seed", int) == 1
    assert root.take("duration_s", float, default=60.0) == 60.0
    with pytest.raises(ConfigError, match="required field missing"):
        root.take("routes")
    with pytest.raises(ConfigError) as excinfo:
        root.finish()
    assert excinfo.value.field == "colour"
    assert excinfo.value.line == 2


def test_config_section_rejects_booleans_for_numbers():
    root = ConfigSection(load_yaml("port: true\n"), "")
    with pytest.raises(ConfigError, match="boolean"):
        root.take("port", int)


def test_config_section_items_carry_lines():
    doc = load_yaml("tokens:\n  - token: a\n  - token: b\n")
    items = ConfigSection(doc, "").items("tokens")
    assert [(where, line) for where, _, line in items] == [
        ("tokens[0]", 2),
        ("tokens[1]", 3),
    ]


def test_load_yaml_errors():
    with pytest.raises(ConfigError) as excinfo:
        load_yaml("a: 1\na: 2\n", "dup.yaml")
    assert excinfo.value.line == 2
    assert excinfo.value.source == "dup.yaml"
    with pytest.raises(ConfigError, match="mapping"):
        load_yaml("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_yaml("a: [1, 2\n")
