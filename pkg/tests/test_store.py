import os

import pytest

from cargotrack.node import DEFAULT_START_EPOCH
from cargotrack.store import (
    DEFAULT_PAGE_SIZE,
    QueryRequest,
    StoreError,
    TelemetryStore,
)
from cargotrack.telemetry import (
    CSV_HEADER,
    GeoFix,
    StoredRecord,
    TelemetryRecord,
)
from cargotrack.utils import epoch_to_timestamp

DEVICE = "CI-205-DDE"


def make_stored(ts, device_id=DEVICE, weight=1.0):
    record = TelemetryRecord(
        device_id=device_id,
        license_plate="C65892",
        axle_location=2,
        fix=GeoFix(13.701433, -89.169922, ts),
        weight_tons=weight,
        device_timestamp=ts,
    )
    return StoredRecord(record, epoch_to_timestamp(ts + 5))


@pytest.fixture()
def store(tmp_path):
    store = TelemetryStore(str(tmp_path / "store"))
    yield store
    store.remove()


@pytest.fixture()
def full_store(store):
    for i in range(1525):
        store.append(make_stored(DEFAULT_START_EPOCH + 300 * i))
    yield store


def test_append_assigns_sequence_per_device(store):
    assert store.append(make_stored(1652716114)) == 1
    assert store.append(make_stored(1652716389)) == 2
    assert store.append(make_stored(1652716114, device_id="CI-118-DP")) == 1
    assert store.devices() == ["CI-118-DP", DEVICE]
    assert len(store) == 3


def test_append_if_absent(store):
    assert store.append_if_absent(make_stored(1652716114)) == (1, True)
    assert store.append_if_absent(make_stored(1652716114, weight=3.0)) == (1, False)
    assert store.append_if_absent(make_stored(1652716389)) == (2, True)
    assert len(store) == 2
    assert store.latest(DEVICE).record.weight_tons == 1.0


def test_reopen_rebuilds_index(store):
    for ts in (1652716114, 1652716389, 1652716664):
        store.append(make_stored(ts))
    reopened = TelemetryStore(store.path)
    assert len(reopened) == 3
    assert reopened.latest(DEVICE) == store.latest(DEVICE)
    assert reopened.append(make_stored(1652716939)) == 4
    assert reopened.append_if_absent(make_stored(1652716114)) == (1, False)


def test_file_per_device(store):
    store.append(make_stored(1652716114))
    store.append(make_stored(1652716114, device_id="CI.118/DP"))
    assert sorted(os.listdir(store.path)) == ["CI-205-DDE.ndjson", "CI_118DP.ndjson"]
    with open(os.path.join(store.path, "CI-205-DDE.ndjson")) as f:
        assert f.read().startswith('{"seq":1,"stamp":"2022-05-16T09:48:39-06:00"')


def test_pagination_footer(full_store):
    page = full_store.query(QueryRequest(DEVICE))
    assert page.page_size == DEFAULT_PAGE_SIZE
    assert len(page.rows) == 15
    assert page.total == 1525
    assert page.footer() == "1 - 15 of 1525"
    assert page.pages == 102
    assert page.rows[0].device_timestamp == DEFAULT_START_EPOCH + 300 * 1524

    last = full_store.query(QueryRequest(DEVICE, page=102))
    assert len(last.rows) == 10
    assert last.footer() == "1516 - 1525 of 1525"
    assert full_store.query(QueryRequest(DEVICE, page=103)).rows == []


def test_pages_concatenate_to_full_listing(full_store):
    stamps = []
    for page in range(1, 103):
        result = full_store.query(QueryRequest(DEVICE, page=page))
        stamps.extend(r.device_timestamp for r in result.rows)
    assert stamps == sorted(
        (DEFAULT_START_EPOCH + 300 * i for i in range(1525)), reverse=True
    )


def test_default_window_is_seven_days_before_latest(store):
    latest = 1652719541
    store.append(make_stored(latest - 8 * 86400))
    store.append(make_stored(latest - 6 * 86400))
    store.append(make_stored(latest))
    assert store.query(QueryRequest(DEVICE)).total == 2
    assert store.query(QueryRequest(DEVICE, start=0)).total == 3
    assert store.query(QueryRequest(DEVICE, end=latest - 7 * 86400)).total == 1


def test_query_request_validation():
    with pytest.raises(ValueError):
        QueryRequest(DEVICE, start=10, end=5)
    with pytest.raises(ValueError):
        QueryRequest(DEVICE, page=0)
    with pytest.raises(ValueError):
        QueryRequest(DEVICE, page_size=0)


def test_unknown_device(store):
    page = store.query(QueryRequest("nobody"))
    assert page.total == 0
    assert page.footer() == "0 - 0 of 0"
    assert store.latest("nobody") is None
    assert store.records("nobody") == []


def test_records_ascending_within_range(full_store):
    start = DEFAULT_START_EPOCH + 300 * 10
    end = DEFAULT_START_EPOCH + 300 * 20
    rows = full_store.records(DEVICE, start, end)
    assert [r.device_timestamp for r in rows] == list(range(start, end + 1, 300))


def test_export_csv(store, tmp_path):
    store.append(make_stored(1652716114, weight=2.24))
    store.append(make_stored(1652716389, weight=2.23))
    text = store.export_csv(QueryRequest(DEVICE))
    assert text.splitlines() == [
        CSV_HEADER,
        "05-16 09:53:14,1652716389,2,13.701433,-89.169922,CI-205-DDE,C65892,2.23",
        "05-16 09:48:39,1652716114,2,13.701433,-89.169922,CI-205-DDE,C65892,2.24",
    ]
    path = str(tmp_path / "out.csv")
    assert store.export_csv(QueryRequest(DEVICE), path) == text
    with open(path) as f:
        assert f.read() == text


def test_truncated_last_line_is_skipped(store):
    store.append(make_stored(1652716114))
    with open(os.path.join(store.path, "CI-205-DDE.ndjson"), "a") as f:
        f.write('{"seq":2,"stamp":"2022-05')
    with pytest.warns(UserWarning, match="truncated"):
        reopened = TelemetryStore(store.path)
    assert len(reopened) == 1


def test_corrupt_line_fails_open(store):
    store.append(make_stored(1652716114))
    path = os.path.join(store.path, "CI-205-DDE.ndjson")
    with open(path) as f:
        good = f.read()
    with open(path, "w") as f:
        f.write("garbage\n" + good)
    with pytest.raises(StoreError):
        TelemetryStore(store.path)


def test_durable_append(tmp_path):
    store = TelemetryStore(str(tmp_path / "durable"), durable=True)
    assert store.append(make_stored(1652716114)) == 1
    assert len(TelemetryStore(store.path)) == 1
    store.remove()


def test_truncated_tail_is_cut_before_next_append(store):
    store.append(make_stored(1652716114))
    path = os.path.join(store.path, "CI-205-DDE.ndjson")
    size = os.path.getsize(path)
    with open(path, "a") as f:
        f.write('{"seq":2,"stamp":"2022-05')
    with pytest.warns(UserWarning, match="truncated"):
        reopened = TelemetryStore(store.path)
    assert os.path.getsize(path) == size
    assert reopened.append(make_stored(1652716389)) == 2

    again = TelemetryStore(store.path)
    assert len(again) == 2
    assert [r.seq for r in again.records(DEVICE)] == [1, 2]


def test_missing_final_newline_is_restored(store):
    store.append(make_stored(1652716114))
    path = os.path.join(store.path, "CI-205-DDE.ndjson")
    with open(path) as f:
        text = f.read()
    with open(path, "w") as f:
        f.write(text.rstrip("\n"))
    reopened = TelemetryStore(store.path)
    reopened.append(make_stored(1652716389))
    assert len(TelemetryStore(store.path)) == 2


def test_failed_append_leaves_file_unchanged(tmp_path, monkeypatch):
    store = TelemetryStore(str(tmp_path / "durable"), durable=True)
    store.append(make_stored(1652716114))
    path = os.path.join(store.path, "CI-205-DDE.ndjson")
    with open(path, "rb") as f:
        before = f.read()

    def fail(fd):
        raise OSError(28, "No space left on device")

    monkeypatch.setattr(os, "fsync", fail)
    with pytest.raises(StoreError, match="No space left"):
        store.append(make_stored(1652716389))
    with open(path, "rb") as f:
        assert f.read() == before
    assert len(store) == 1
    monkeypatch.undo()
    assert len(TelemetryStore(store.path)) == 1


@pytest.mark.parametrize(
    "seq, stamp",
    [('"x"', '"2022-05-16T09:48:39-06:00"'), ("2", '"soon"'), ("2", "null")],
)
def test_bad_seq_or_stamp_fails_open(store, seq, stamp):
    store.append(make_stored(1652716114))
    path = os.path.join(store.path, "CI-205-DDE.ndjson")
    with open(path) as f:
        good = f.read()
    record = good.split('"record":', 1)[1].rstrip("\n")
    with open(path, "w") as f:
        f.write(f'{{"seq":{seq},"stamp":{stamp},"record":{record}\n' + good)
    with pytest.raises(StoreError, match="CI-205-DDE.ndjson:1"):
        TelemetryStore(store.path)
