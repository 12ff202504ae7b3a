"""GSM/GPRS path between a truck station and the ingest service.

Coverage is indexed by distance along the truck's route. Gaps are half-open
intervals ``[start_m, end_m)``.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_BANDWIDTH_BPS = 85600.0
DEFAULT_REGISTER_DELAY_S = 4.0
DEFAULT_RTT_S = 1.5
DEFAULT_LOSS_PROB = 0.01
TIMEOUT_MARGIN_S = 10.0


class CoverageQueryError(ValueError):
    pass


@dataclass(frozen=True)
class LinkParams:
    bandwidth_bps: float = DEFAULT_BANDWIDTH_BPS
    register_delay_s: float = DEFAULT_REGISTER_DELAY_S
    rtt_s: float = DEFAULT_RTT_S
    loss_prob: float = DEFAULT_LOSS_PROB
    response_loss_prob: float = 0.0

    def __post_init__(self) -> None:
        if not self.bandwidth_bps > 0:
            raise ValueError("bandwidth_bps must be > 0")
        if self.register_delay_s < 0 or self.rtt_s < 0:
            raise ValueError("register_delay_s and rtt_s must be >= 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")
        if not 0.0 <= self.response_loss_prob <= 1.0:
            raise ValueError("response_loss_prob must be in [0, 1]")

    @property
    def timeout_s(self) -> float:
        return self.rtt_s + TIMEOUT_MARGIN_S


@dataclass(frozen=True)
class Coverage:
    gsm: bool = True
    gps: bool = True


Gap = Tuple[float, float]


def _check_gaps(
    gaps: Sequence[Gap], name: str, route_length_m: Optional[float]
) -> None:
    for start, end in gaps:
        if not start < end:
            raise ValueError(f"{name} gap [{start}, {end}) must have start < end")
        if start < 0 or (route_length_m is not None and end > route_length_m):
            raise ValueError(
                f"{name} gap [{start}, {end}) outside route [0, {route_length_m}]"
            )


@dataclass(frozen=True)
class CoverageMap:
    gsm_gaps: Tuple[Gap, ...] = ()
    gps_gaps: Tuple[Gap, ...] = ()
    route_length_m: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "gsm_gaps", tuple((float(a), float(b)) for a, b in self.gsm_gaps)
        )
        object.__setattr__(
            self, "gps_gaps", tuple((float(a), float(b)) for a, b in self.gps_gaps)
        )
        _check_gaps(self.gsm_gaps, "gsm", self.route_length_m)
        _check_gaps(self.gps_gaps, "gps", self.route_length_m)


def _in_gap(gaps: Sequence[Gap], position_m: float) -> bool:
    return any(start <= position_m < end for start, end in gaps)


def coverage_at(cov: CoverageMap, route_position_m: float) -> Coverage:
    if route_position_m < 0 or (
        cov.route_length_m is not None and route_position_m > cov.route_length_m
    ):
        raise CoverageQueryError(
            f"position {route_position_m} m outside route [0, {cov.route_length_m}]"
        )
    return Coverage(
        gsm=not _in_gap(cov.gsm_gaps, route_position_m),
        gps=not _in_gap(cov.gps_gaps, route_position_m),
    )


@dataclass(frozen=True)
class OutboundPost:
    device_id: str
    token: str
    payload: bytes
    device_timestamp: int
    sent_at: float

    @property
    def payload_bytes(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class Delivered:
    delay_s: float
    arrival_s: float  # offset from send at which the request reaches the server
    response_lost: bool = False


@dataclass(frozen=True)
class Lost:
    timeout_s: float


Outcome = Union[Delivered, Lost]


def transmission_delay_s(payload_bytes: int, params: LinkParams) -> float:
    return payload_bytes * 8.0 / params.bandwidth_bps


def transmit(
    post: OutboundPost, params: LinkParams, rng: np.random.Generator
) -> Outcome:
    """One POST over the cellular link.

    Two draws are taken per call whatever the outcome, so a stream's sequence
    of outcomes only depends on the number of posts made.
    """
    lost, response_lost = rng.random(2)
    if lost < params.loss_prob:
        return Lost(params.timeout_s)
    uplink = params.register_delay_s + transmission_delay_s(post.payload_bytes, params)
    delay = uplink + params.rtt_s
    if response_lost < params.response_loss_prob:
        return Delivered(delay, uplink + params.rtt_s / 2, response_lost=True)
    return Delivered(delay, uplink + params.rtt_s / 2)


@dataclass
class LinkSimulator:
    """Link parameters bound to one node's random stream."""

    params: LinkParams = field(default_factory=LinkParams)
    seed: Union[int, Sequence[int], None] = None
    attempted: int = 0
    delivered: int = 0

    def __post_init__(self) -> None:
        self.rng = np.random.default_rng(self.seed)

    def can_attach(self, coverage: Coverage) -> bool:
        return coverage.gsm

    def transmit(self, post: OutboundPost) -> Outcome:
        self.attempted += 1
        outcome = transmit(post, self.params, self.rng)
        if isinstance(outcome, Delivered):
            self.delivered += 1
        logger.debug(f"{post.device_id} ts={post.device_timestamp} -> {outcome}")
        return outcome


class ScriptedLink(LinkSimulator):
    """Link replaying a fixed list of outcomes, then delivering instantly."""

    def __init__(self, outcomes: List[Outcome], params: Optional[LinkParams] = None):
        super().__init__(params or LinkParams(loss_prob=0.0))
        self.outcomes = list(outcomes)

    def transmit(self, post: OutboundPost) -> Outcome:
        self.attempted += 1
        outcome = self.outcomes.pop(0) if self.outcomes else Delivered(0.0, 0.0)
        if isinstance(outcome, Delivered):
            self.delivered += 1
        return outcome
