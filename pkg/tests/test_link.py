import numpy as np
import pytest

from cargotrack.link import (
    Coverage,
    CoverageMap,
    CoverageQueryError,
    Delivered,
    LinkParams,
    LinkSimulator,
    Lost,
    OutboundPost,
    ScriptedLink,
    coverage_at,
    transmission_delay_s,
    transmit,
)


def make_post(n_bytes=200, ts=1652719541):
    return OutboundPost("CI-205-DDE", "secret", b"x" * n_bytes, ts, sent_at=0.0)


def test_transmission_delay_at_gprs_rate():
    delay = transmission_delay_s(200, LinkParams())
    assert delay == pytest.approx(0.0187, abs=1e-4)


def test_delivered_delay_adds_registration_and_rtt():
    params = LinkParams(loss_prob=0.0)
    outcome = transmit(make_post(), params, np.random.default_rng(0))
    assert isinstance(outcome, Delivered)
    assert outcome.delay_s == pytest.approx(5.5187, abs=1e-3)
    assert outcome.arrival_s == pytest.approx(4.7687, abs=1e-3)
    assert not outcome.response_lost


def test_total_loss():
    params = LinkParams(loss_prob=1.0)
    outcome = transmit(make_post(), params, np.random.default_rng(0))
    assert outcome == Lost(params.timeout_s)
    assert params.timeout_s == pytest.approx(11.5)


def test_response_loss():
    params = LinkParams(loss_prob=0.0, response_loss_prob=1.0)
    outcome = transmit(make_post(), params, np.random.default_rng(0))
    assert isinstance(outcome, Delivered)
    assert outcome.response_lost


@pytest.mark.parametrize(
    "kwargs",
    [
        {"bandwidth_bps": 0},
        {"loss_prob": 1.5},
        {"loss_prob": -0.1},
        {"response_loss_prob": 2},
        {"rtt_s": -1},
    ],
)
def test_link_params_validation(kwargs):
    with pytest.raises(ValueError):
        LinkParams(**kwargs)


def test_loss_rate_follows_probability():
    link = LinkSimulator(LinkParams(loss_prob=0.25), seed=[7, 1])
    outcomes = [link.transmit(make_post(ts=i + 1)) for i in range(4000)]
    lost = sum(isinstance(o, Lost) for o in outcomes)
    assert 0.22 < lost / 4000 < 0.28
    assert link.attempted == 4000
    assert link.delivered == 4000 - lost


def test_link_simulator_is_reproducible():
    a = LinkSimulator(LinkParams(loss_prob=0.5), seed=[3, 1])
    b = LinkSimulator(LinkParams(loss_prob=0.5), seed=[3, 1])
    c = LinkSimulator(LinkParams(loss_prob=0.5), seed=[4, 1])
    run_a = [a.transmit(make_post()) for _ in range(50)]
    run_b = [b.transmit(make_post()) for _ in range(50)]
    run_c = [c.transmit(make_post()) for _ in range(50)]
    assert run_a == run_b
    assert run_a != run_c


def test_coverage_gaps_are_half_open():
    cov = CoverageMap(gsm_gaps=[(100, 200)], gps_gaps=[(150, 160)], route_length_m=1000)
    assert coverage_at(cov, 99.9) == Coverage(gsm=True, gps=True)
    assert coverage_at(cov, 100) == Coverage(gsm=False, gps=True)
    assert coverage_at(cov, 155) == Coverage(gsm=False, gps=False)
    assert coverage_at(cov, 200) == Coverage(gsm=True, gps=True)
    assert coverage_at(cov, 1000) == Coverage(gsm=True, gps=True)


def test_coverage_query_outside_route():
    cov = CoverageMap(route_length_m=1000)
    with pytest.raises(CoverageQueryError):
        coverage_at(cov, -1)
    with pytest.raises(CoverageQueryError):
        coverage_at(cov, 1000.5)
    assert coverage_at(CoverageMap(), 1e9).gsm


def test_coverage_map_validation():
    with pytest.raises(ValueError):
        CoverageMap(gsm_gaps=[(200, 100)])
    with pytest.raises(ValueError):
        CoverageMap(gps_gaps=[(900, 1100)], route_length_m=1000)


def test_scripted_link_replays_outcomes():
    link = ScriptedLink([Lost(11.5), Delivered(5.5, 4.7)])
    assert link.transmit(make_post()) == Lost(11.5)
    assert link.transmit(make_post()) == Delivered(5.5, 4.7)
    assert link.transmit(make_post()) == Delivered(0.0, 0.0)
    assert link.attempted == 3
    assert link.delivered == 2
    assert link.can_attach(Coverage(gsm=True, gps=False))
    assert not link.can_attach(Coverage(gsm=False, gps=True))
