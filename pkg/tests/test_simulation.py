import glob
import os

import pytest

from cargotrack.node import DEFAULT_START_EPOCH
from cargotrack.scenario import load_scenario, loads_scenario
from cargotrack.simulation import RunSummary, run_sim
from cargotrack.store import TelemetryStore

SCENARIO = os.path.join(
    os.path.dirname(__file__), "..", "scenarios", "acajutla-opico.yaml"
)

# 60 km/h due north, so the truck covers 1000 m per minute.
HIGHWAY = """\
seed: {seed}
duration_s: 7200
link:
  loss_prob: {loss}
  response_loss_prob: {response_loss}
routes:
  ca-1:
    waypoints:
      - [13.0, -89.0]
      - [14.1, -89.0]
    speeds_kmh: 60
    coverage:
      gsm_gaps: {gsm_gaps}
trucks:
  - device_id: CI-205-DDE
    license_plate: C65892
    token: ci205-secret
    route: ca-1
    buffer_capacity: {capacity}
    load_schedule:
      - [0, 8.5]
"""


def highway(seed=1, loss=0.0, response_loss=0.0, gsm_gaps="[]", capacity=128):
    return loads_scenario(
        HIGHWAY.format(
            seed=seed,
            loss=loss,
            response_loss=response_loss,
            gsm_gaps=gsm_gaps,
            capacity=capacity,
        )
    )


@pytest.fixture()
def store(tmp_path):
    store = TelemetryStore(str(tmp_path / "run"))
    yield store
    store.remove()


def store_bytes(path):
    contents = {}
    for filename in sorted(glob.glob(os.path.join(path, "*.ndjson"))):
        with open(filename, "rb") as f:
            contents[os.path.basename(filename)] = f.read()
    return contents


def test_reports_every_period(store):
    summary = run_sim(highway(), store=store)
    assert summary.generated == 24
    assert summary.delivered == 24
    assert summary.stored == 24
    assert summary.deferred == 0
    assert summary.balanced
    stamps = [r.device_timestamp for r in store.records("CI-205-DDE")]
    assert stamps == [DEFAULT_START_EPOCH + 300 * k for k in range(1, 25)]
    weights = [r.record.weight_tons for r in store.records("CI-205-DDE")]
    assert all(abs(w - 8.5) < 0.5 for w in weights)


def test_gsm_gap_buffers_and_drains(store):
    summary = run_sim(highway(gsm_gaps="[[29500, 49500]]"), store=store)
    assert summary.generated == 24
    assert summary.delivered == 24
    assert summary.stored == 24
    assert summary.deferred == 4
    assert summary.buffered == 0
    rows = {r.device_timestamp: r for r in store.records("CI-205-DDE")}
    assert len(rows) == 24
    late = [DEFAULT_START_EPOCH + s for s in (1800, 2100, 2400, 2700)]
    drained_at = rows[DEFAULT_START_EPOCH + 3000].receipt_stamp
    for ts in late:
        assert rows[ts].receipt_stamp < drained_at
        assert rows[ts].receipt_stamp.timestamp() >= DEFAULT_START_EPOCH + 3000

    drained = [rows[ts] for ts in late + [DEFAULT_START_EPOCH + 3000]]
    seqs = [r.seq for r in drained]
    assert seqs == sorted(seqs)
    assert len(set(seqs)) == len(seqs)
    receipts = [r.receipt_stamp for r in drained]
    assert receipts == sorted(receipts)
    in_order = sorted(rows.values(), key=lambda r: r.seq)
    assert [r.device_timestamp for r in in_order] == sorted(rows)


def test_total_loss_stores_nothing(store):
    summary = run_sim(highway(loss=1.0), store=store)
    assert summary.stored == 0
    assert summary.generated == 24
    assert summary.delivered == 0
    assert summary.buffered == 24
    assert summary.dropped == 0
    assert summary.per_truck[0].lost == summary.per_truck[0].posts == 24
    assert summary.balanced
    assert len(store) == 0


def test_buffer_overflow_drops_oldest(store):
    summary = run_sim(highway(loss=1.0, capacity=5), store=store)
    assert summary.buffered == 5
    assert summary.dropped == 19
    assert summary.balanced


def test_lost_responses_are_stored_once(store):
    summary = run_sim(highway(response_loss=0.3, seed=4), store=store)
    rows = store.records("CI-205-DDE")
    assert len(rows) == summary.stored
    assert len({r.device_timestamp for r in rows}) == len(rows)
    assert summary.stored >= summary.delivered
    assert summary.per_truck[0].posts > summary.stored
    assert summary.balanced


def test_runs_are_reproducible(tmp_path):
    first = TelemetryStore(str(tmp_path / "a"))
    second = TelemetryStore(str(tmp_path / "b"))
    other = TelemetryStore(str(tmp_path / "c"))
    scenario = load_scenario(SCENARIO)
    a = run_sim(scenario, store=first)
    b = run_sim(load_scenario(SCENARIO), store=second)
    run_sim(load_scenario(SCENARIO, seed=2023), store=other)

    assert a.to_dict() == b.to_dict()
    assert store_bytes(first.path) == store_bytes(second.path)
    assert len(store_bytes(first.path)) == 2
    assert store_bytes(first.path) != store_bytes(other.path)


def test_run_summary(store):
    summary = run_sim(load_scenario(SCENARIO), store=store)
    assert summary.trucks == 2
    assert [t.device_id for t in summary.per_truck] == ["CI-205-DDE", "CI-118-DP"]
    assert summary.balanced
    assert summary.generated == sum(t.generated for t in summary.per_truck)
    assert summary.stored == len(store)
    as_dict = summary.to_dict()
    assert as_dict["per_truck"][1]["device_id"] == "CI-118-DP"
    text = summary.to_text()
    assert f"Stored:     {summary.stored}" in text
    assert "  CI-118-DP: generated" in text


def test_run_summary_balance():
    summary = RunSummary(generated=3, delivered=1, buffered=1, dropped=1)
    assert summary.balanced
    summary.generated = 4
    assert not summary.balanced


def test_run_sim_needs_one_target(store):
    with pytest.raises(ValueError):
        run_sim(highway())
    with pytest.raises(ValueError):
        run_sim(highway(), store=store, url="http://127.0.0.1:1")
