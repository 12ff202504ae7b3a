"""Discrete-event fleet runs.

Every truck is a simpy process stepping its station through the firmware
loop on one shared clock. Posts travel through the truck's own
:class:`~cargotrack.link.LinkSimulator` and reach a sink: the ingest service
in the same process, or a live one over HTTP.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Generator, List, Optional

import simpy

from .link import Lost, OutboundPost
from .node import TIMEOUT_STATUS, NodeState, Phase, boot, handle_response, step
from .scenario import Scenario, TruckSpec
from .service import IngestService
from .store import TelemetryStore
from .web_handlers import TelemetryHandlerWeb

logger = logging.getLogger(__name__)


class InProcessSink:
    """Hands posts to an :class:`IngestService` stamped with simulated time."""

    def __init__(self, service: IngestService, start_epoch: float) -> None:
        self.service = service
        self.start_epoch = start_epoch

    def deliver(self, post: OutboundPost, now: float) -> int:
        headers = {"Authorization": f"Bearer {post.token}"}
        result = self.service.handle_post(
            headers, post.payload, received_at=self.start_epoch + now
        )
        return result.status

    @property
    def stored(self) -> int:
        return self.service.counters["accepted"]


class HttpSink:
    """POSTs to a running service. The service stamps receipt with its own
    clock, so only the record set, not the store bytes, repeats across runs."""

    def __init__(self, handler: TelemetryHandlerWeb) -> None:
        self.handler = handler
        self.acknowledged = 0

    def deliver(self, post: OutboundPost, now: float) -> int:
        status = self.handler.post_payload(post.payload, token=post.token)
        if status == 200:
            self.acknowledged += 1
        return status

    @property
    def stored(self) -> int:
        return self.acknowledged


@dataclass
class TruckSummary:
    device_id: str
    generated: int = 0
    delivered: int = 0
    deferred: int = 0
    buffered: int = 0
    dropped: int = 0
    skipped: int = 0
    posts: int = 0
    lost: int = 0

    @classmethod
    def from_state(
        cls, device_id: str, state: NodeState, posts: int, lost: int
    ) -> "TruckSummary":
        return cls(
            device_id=device_id,
            generated=state.generated,
            delivered=state.delivered,
            deferred=state.deferred,
            buffered=state.buffered,
            dropped=state.dropped,
            skipped=state.skipped,
            posts=posts,
            lost=lost,
        )


@dataclass
class RunSummary:
    trucks: int = 0
    generated: int = 0
    delivered: int = 0
    deferred: int = 0
    buffered: int = 0
    dropped: int = 0
    skipped: int = 0
    stored: int = 0
    per_truck: List[TruckSummary] = field(default_factory=list)

    def add(self, truck: TruckSummary) -> None:
        self.trucks += 1
        self.generated += truck.generated
        self.delivered += truck.delivered
        self.deferred += truck.deferred
        self.buffered += truck.buffered
        self.dropped += truck.dropped
        self.skipped += truck.skipped
        self.per_truck.append(truck)

    @property
    def balanced(self) -> bool:
        return self.generated == self.delivered + self.buffered + self.dropped

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_text(self) -> str:
        lines = [
            f"Trucks:     {self.trucks}",
            f"Generated:  {self.generated}",
            f"Delivered:  {self.delivered} ({self.deferred} after buffering)",
            f"Buffered:   {self.buffered}",
            f"Dropped:    {self.dropped}",
            f"Skipped:    {self.skipped}",
            f"Stored:     {self.stored}",
        ]
        for t in self.per_truck:
            lines.append(
                f"  {t.device_id}: generated {t.generated}, delivered {t.delivered}, "
                f"buffered {t.buffered}, dropped {t.dropped}"
            )
        return "\n".join(lines)


class FleetSimulation:
    def __init__(self, scenario: Scenario, sink: Any) -> None:
        self.scenario = scenario
        self.sink = sink
        self.env = simpy.Environment()
        self.results: List[TruckSummary] = []

    def _truck(self, truck: TruckSpec) -> Generator[simpy.Event, Any, None]:
        config = truck.config
        world = self.scenario.environment(truck)
        link = self.scenario.link_for(truck)
        until = self.scenario.duration_s
        state = boot(config, self.env.now)
        posts = lost = 0
        while not (
            state.phase is Phase.READ_SENSORS and state.next_action_time > until
        ):
            wait = state.next_action_time - self.env.now
            if wait > 0:
                yield self.env.timeout(wait)
            state, post = step(state, world, link, self.env.now)
            if post is None:
                continue
            posts += 1
            outcome = link.transmit(post)
            if isinstance(outcome, Lost):
                lost += 1
                yield self.env.timeout(outcome.timeout_s)
                status = TIMEOUT_STATUS
            else:
                yield self.env.timeout(outcome.arrival_s)
                status = self.sink.deliver(post, self.env.now)
                if outcome.response_lost:
                    remaining = link.params.timeout_s - outcome.arrival_s
                    status = TIMEOUT_STATUS
                else:
                    remaining = outcome.delay_s - outcome.arrival_s
                yield self.env.timeout(max(remaining, 0.0))
            state = handle_response(state, status, self.env.now)
        summary = TruckSummary.from_state(config.device_id, state, posts, lost)
        logger.debug(f"{config.device_id} finished: {summary}")
        self.results.append(summary)

    def run(self) -> RunSummary:
        for truck in self.scenario.trucks:
            self.env.process(self._truck(truck))
        self.env.run()
        summary = RunSummary()
        order = [t.config.device_id for t in self.scenario.trucks]
        for truck in sorted(self.results, key=lambda r: order.index(r.device_id)):
            summary.add(truck)
        summary.stored = self.sink.stored
        return summary


def run_in_process(scenario: Scenario, store: TelemetryStore) -> RunSummary:
    service = IngestService(store, scenario.tokens())
    return FleetSimulation(
        scenario, InProcessSink(service, scenario.start_epoch)
    ).run()


def run_live(
    scenario: Scenario, url: str, verifySSL: Optional[bool] = None
) -> RunSummary:
    """Raises ConnectionError when the service does not answer its health check."""
    handler = TelemetryHandlerWeb(url, verifySSL=verifySSL)
    handler.connect()
    return FleetSimulation(scenario, HttpSink(handler)).run()


def run_sim(
    scenario: Scenario,
    store: Optional[TelemetryStore] = None,
    url: Optional[str] = None,
) -> RunSummary:
    if (store is None) == (url is None):
        raise ValueError("Give exactly one of a store or a service URL")
    target = url if url is not None else store.path  # type: ignore[union-attr]
    logger.info(
        f"Simulating {len(scenario.trucks)} trucks for {scenario.duration_s:.0f} s "
        f"(seed {scenario.seed}) into {target}"
    )
    if url is not None:
        summary = run_live(scenario, url)
    else:
        summary = run_in_process(scenario, store)  # type: ignore[arg-type]
    logger.info(
        f"Generated {summary.generated}, delivered {summary.delivered}, "
        f"buffered {summary.buffered}, dropped {summary.dropped}"
    )
    return summary
