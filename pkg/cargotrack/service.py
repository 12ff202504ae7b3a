"""Ingest and read API.

``POST /v1/telemetry`` takes one wire payload with an
``Authorization: Bearer <token>`` header and answers::

    200 {"status": "ok"}     stored, or already stored earlier
    400 {"error": ...}       payload does not decode or validate
    401 {"error": ...}       token missing or unknown
    403 {"error": ...}       token belongs to another device
    503 {"error": ...}       the store could not append

Read endpoints (``/v1/query``, ``/v1/latest``, ``/v1/export.csv``,
``/health``) are open.
"""
import asyncio
import collections
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import pytz
from aiohttp import web

from .store import DEFAULT_PAGE_SIZE, QueryRequest, StoreError, TelemetryStore
from .telemetry import (
    AuthToken,
    PayloadError,
    StoredRecord,
    TelemetryRecord,
    decode_payload,
    record_to_dict,
)
from .utils import (
    DEFAULT_DISPLAY_OFFSET_HOURS,
    ConfigError,
    ConfigSection,
    display_tz,
    epoch_to_timestamp,
    load_yaml_file,
    to_epoch,
)

logger = logging.getLogger(__name__)

TELEMETRY_PATH = "/v1/telemetry"
DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8080


class AuthenticationError(Exception):
    pass


class AuthorizationError(Exception):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    tokens: Tuple[AuthToken, ...] = ()
    host: str = DEFAULT_HOST
    port: int = DEFAULT_PORT
    store_path: str = "store"
    display_offset_hours: float = DEFAULT_DISPLAY_OFFSET_HOURS
    durable: bool = False

    def __post_init__(self) -> None:
        seen: Dict[str, str] = {}
        for t in self.tokens:
            if t.token in seen:
                raise ConfigError(
                    f"token {t.token!r} listed more than once", field="tokens"
                )
            seen[t.token] = t.device_id

    def token_table(self) -> Dict[str, str]:
        return {t.token: t.device_id for t in self.tokens}

    @property
    def tz(self) -> pytz.BaseTzInfo:
        return display_tz(self.display_offset_hours)


def load_service_config(path: str) -> ServiceConfig:
    doc = load_yaml_file(path)
    root = ConfigSection(doc, "", source=path)
    bind = root.section("bind", default=None)
    host = bind.take("host", str, default=DEFAULT_HOST)
    port = bind.take(
        "port",
        int,
        default=DEFAULT_PORT,
        check=lambda p: 0 <= p < 65536,
        reason="must be in [0, 65535]",
    )
    bind.finish()

    tokens = []
    seen: Dict[str, int] = {}
    for where, item, line in root.items("tokens", default=[]):
        entry = ConfigSection(item, where, source=path)
        token = entry.take("token", str, check=bool, reason="must be non-empty")
        device_id = entry.take(
            "device_id", str, check=bool, reason="must be non-empty"
        )
        entry.finish()
        if token in seen:
            raise ConfigError(
                f"duplicate token (first listed on line {seen[token]})",
                field=f"{where}.token",
                line=line,
                source=path,
            )
        seen[token] = line or 0
        tokens.append(AuthToken(token, device_id))

    config = ServiceConfig(
        tokens=tuple(tokens),
        host=host,
        port=port,
        store_path=root.take("store_path", str, default="store"),
        display_offset_hours=root.take(
            "display_offset_hours",
            float,
            default=DEFAULT_DISPLAY_OFFSET_HOURS,
            check=lambda h: -14 <= h <= 14,
            reason="must be in [-14, 14]",
        ),
        durable=root.take("durable", bool, default=False),
    )
    root.finish()
    return config


def _header(headers: Mapping[str, str], name: str) -> Optional[str]:
    for key, value in headers.items():
        if key.lower() == name.lower():
            return value
    return None


def authenticate(headers: Mapping[str, str], token_table: Mapping[str, str]) -> str:
    """Device id for the bearer token in the Authorization header."""
    authorization = _header(headers, "Authorization")
    if not authorization or not authorization.strip():
        raise AuthenticationError("missing Authorization header")
    parts = authorization.strip().split()
    if parts[0].lower() != "bearer":
        raise AuthenticationError("unsupported auth type")
    if len(parts) == 1:
        raise AuthenticationError("token missing")
    if len(parts) > 2:
        raise AuthenticationError("token contains spaces")
    device_id = token_table.get(parts[1])
    if device_id is None:
        raise AuthenticationError("unknown token")
    return device_id


def authorize(device_id: str, record: TelemetryRecord) -> None:
    if record.device_id != device_id:
        raise AuthorizationError(
            f"token for {device_id!r} is not valid for device {record.device_id!r}"
        )


@dataclass
class IngestResult:
    status: int
    body: Dict[str, Any] = field(default_factory=dict)


class IngestService:
    """Framework independent ingest logic. ``clock`` returns Unix seconds
    and stamps each accepted record on receipt."""

    def __init__(
        self,
        store: TelemetryStore,
        tokens: Union[Mapping[str, str], Sequence[AuthToken]],
        tz: Optional[pytz.BaseTzInfo] = None,
        clock: Optional[Callable[[], float]] = None,
    ) -> None:
        self.store = store
        if isinstance(tokens, Mapping):
            self.tokens = dict(tokens)
        else:
            self.tokens = ServiceConfig(tokens=tuple(tokens)).token_table()
        self.tz = tz or display_tz()
        self.clock = clock or time.time
        self.counters: collections.Counter = collections.Counter()

    def reject(self, status: int, error: str, **extra: Any) -> IngestResult:
        self.counters[status] += 1
        logger.warning(f"Rejected POST with {status}: {error}")
        return IngestResult(status, {"error": error, **extra})

    def ingest(
        self, device_id: str, body: bytes, received_at: Optional[float] = None
    ) -> IngestResult:
        """Stores ``body`` for an already authenticated device."""
        try:
            record = decode_payload(body)
        except PayloadError as err:
            extra = {"field": err.field} if err.field else {}
            return self.reject(400, str(err), **extra)
        try:
            authorize(device_id, record)
        except AuthorizationError as err:
            return self.reject(403, str(err))
        stamp = epoch_to_timestamp(
            received_at if received_at is not None else self.clock(), self.tz
        )
        try:
            seq, created = self.store.append_if_absent(StoredRecord(record, stamp))
        except StoreError as err:
            return self.reject(503, str(err))
        if created:
            self.counters["accepted"] += 1
            logger.debug(f"Stored {device_id} ts={record.device_timestamp} seq={seq}")
        else:
            self.counters["duplicates"] += 1
            logger.warning(
                f"Duplicate {device_id} ts={record.device_timestamp}, kept seq={seq}"
            )
        self.counters[200] += 1
        return IngestResult(200, {"status": "ok"})

    def handle_post(
        self,
        headers: Mapping[str, str],
        body: bytes,
        received_at: Optional[float] = None,
    ) -> IngestResult:
        try:
            device_id = authenticate(headers, self.tokens)
        except AuthenticationError as err:
            return self.reject(401, str(err))
        return self.ingest(device_id, body, received_at)


# aiohttp application -------------------------------------------------------

SERVICE_KEY = web.AppKey("service", IngestService)


def _bad_request(message: str) -> web.HTTPBadRequest:
    return web.HTTPBadRequest(
        text=json.dumps({"error": message}), content_type="application/json"
    )


def bearer_auth(service: IngestService) -> Callable:
    """Authenticates writes; the device id is stored as ``request["device_id"]``."""

    @web.middleware
    async def _auth(request: web.Request, handler: Callable) -> web.StreamResponse:
        if request.method == "POST" and request.path == TELEMETRY_PATH:
            try:
                request["device_id"] = authenticate(request.headers, service.tokens)
            except AuthenticationError as err:
                result = service.reject(401, str(err))
                return web.json_response(result.body, status=result.status)
        return await handler(request)

    return _auth


def _query_request(request: web.Request, paginate: bool = True) -> QueryRequest:
    params = request.query
    if not params.get("device_id"):
        raise _bad_request("device_id is required")
    tz = request.app[SERVICE_KEY].tz
    try:
        return QueryRequest(
            device_id=params["device_id"],
            start=to_epoch(params["from"], tz) if params.get("from") else None,
            end=to_epoch(params["to"], tz) if params.get("to") else None,
            page=int(params.get("page", 1)) if paginate else 1,
            page_size=int(params.get("page_size", DEFAULT_PAGE_SIZE)),
        )
    except ValueError as err:
        raise _bad_request(str(err))


async def post_telemetry(request: web.Request) -> web.Response:
    service = request.app[SERVICE_KEY]
    body = await request.read()
    loop = asyncio.get_running_loop()
    result = await loop.run_in_executor(
        None, service.ingest, request["device_id"], body, None
    )
    return web.json_response(result.body, status=result.status)


async def get_query(request: web.Request) -> web.Response:
    page = request.app[SERVICE_KEY].store.query(_query_request(request))
    return web.json_response({**page.to_dict(), "footer": page.footer()})


async def get_latest(request: web.Request) -> web.Response:
    device_id = request.query.get("device_id")
    if not device_id:
        raise _bad_request("device_id is required")
    stored = request.app[SERVICE_KEY].store.latest(device_id)
    if stored is None:
        return web.json_response({"error": "no records"}, status=404)
    return web.json_response(
        {
            "seq": stored.seq,
            "stamp": stored.receipt_stamp.isoformat(),
            "record": record_to_dict(stored.record),
        }
    )


async def get_export(request: web.Request) -> web.Response:
    req = _query_request(request, paginate=False)
    text = request.app[SERVICE_KEY].store.export_csv(req)
    return web.Response(text=text, content_type="text/csv")


async def get_health(request: web.Request) -> web.Response:
    service = request.app[SERVICE_KEY]
    return web.json_response({"status": "ok", "records": len(service.store)})


async def _on_cleanup(app: web.Application) -> None:
    service = app[SERVICE_KEY]
    logger.info(
        f"Ingest service stopped; {service.counters['accepted']} records accepted, "
        f"{len(service.store)} in store"
    )


def make_app(service: IngestService) -> web.Application:
    app = web.Application(middlewares=[bearer_auth(service)])
    app[SERVICE_KEY] = service
    app.router.add_post(TELEMETRY_PATH, post_telemetry)
    app.router.add_get("/v1/query", get_query)
    app.router.add_get("/v1/latest", get_latest)
    app.router.add_get("/v1/export.csv", get_export)
    app.router.add_get("/health", get_health)
    app.on_cleanup.append(_on_cleanup)
    return app


def serve(config: ServiceConfig) -> None:
    """Runs until interrupted. Raises OSError when the port is taken."""
    store = TelemetryStore(config.store_path, durable=config.durable)
    service = IngestService(store, config.tokens, tz=config.tz)
    logger.info(
        f"Serving {len(config.tokens)} devices on {config.host}:{config.port}, "
        f"store {config.store_path}"
    )
    web.run_app(make_app(service), host=config.host, port=config.port, print=None)
