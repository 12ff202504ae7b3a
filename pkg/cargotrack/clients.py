import warnings
from typing import IO, Any, List, Optional, Union

import pandas as pd
import pytz

from .analytics import TrackReport, report
from .store import DEFAULT_PAGE_SIZE, QueryPage, QueryRequest, TelemetryStore
from .telemetry import StoredRecord
from .utils import display_tz, to_epoch
from .web_handlers import TelemetryHandlerWeb, get_auth

TimeArg = Union[str, int, float, pd.Timestamp, None]


def is_url(source: str) -> bool:
    return source.lower().startswith(("http://", "https://"))


def get_handler(
    source: str,
    token: Optional[str] = None,
    verifySSL: Optional[bool] = None,
    options: dict = {},
) -> Union[TelemetryStore, TelemetryHandlerWeb]:
    """A local store for a directory path, a web handler for an http(s) URL."""
    if not source:
        raise ValueError("`source` must be a store directory or a service URL")
    if is_url(source):
        return TelemetryHandlerWeb(
            url=source, auth=get_auth(token), verifySSL=verifySSL, options=options
        )
    return TelemetryStore(source)


class FleetClient:
    """Read access to stored telemetry, wherever it lives.

    Time arguments take Unix seconds or date strings; naive date strings are
    read in the display offset ``tz``.
    """

    def __init__(
        self,
        source: str,
        tz: Union[str, pytz.BaseTzInfo, None] = None,
        token: Optional[str] = None,
        verifySSL: Optional[bool] = None,
        handler_options: dict = {},
    ) -> None:
        self.source = source
        self.tz = display_tz() if tz is None else tz
        self.handler = get_handler(
            source, token=token, verifySSL=verifySSL, options=handler_options
        )

    def connect(self) -> None:
        if isinstance(self.handler, TelemetryHandlerWeb):
            self.handler.connect()

    def _epoch(self, value: TimeArg) -> Optional[int]:
        if value is None:
            return None
        return to_epoch(value, self.tz)

    def _request(
        self,
        device_id: str,
        start: TimeArg = None,
        end: TimeArg = None,
        page: int = 1,
        page_size: int = DEFAULT_PAGE_SIZE,
    ) -> QueryRequest:
        if not device_id:
            raise ValueError("device_id is a required argument")
        return QueryRequest(
            device_id, self._epoch(start), self._epoch(end), page, page_size
        )

    def _warn_if_unknown(self, device_id: str, found: bool) -> None:
        if found:
            return
        if isinstance(self.handler, TelemetryStore):
            if device_id not in self.handler.devices():
                warnings.warn(f"Device {device_id} not found")
                return
        warnings.warn(f"No records for device {device_id} in the requested range")

    def query(
        self,
        device_id: str,
        start: TimeArg = None,
        end: TimeArg = None,
        page: int = 1,
        page_size: int = DEFAULT_PAGE_SIZE,
    ) -> QueryPage:
        result = self.handler.query(
            self._request(device_id, start, end, page, page_size)
        )
        self._warn_if_unknown(device_id, result.total > 0)
        return result

    def read(
        self,
        device_id: str,
        start: TimeArg = None,
        end: TimeArg = None,
        page: int = 1,
        page_size: int = DEFAULT_PAGE_SIZE,
    ) -> pd.DataFrame:
        """One dashboard page as a frame, newest first."""
        return self.query(device_id, start, end, page, page_size).to_frame(self.tz)

    def latest(self, device_id: str) -> Optional[StoredRecord]:
        return self.handler.latest(device_id)

    def records(
        self, device_id: str, start: TimeArg = None, end: TimeArg = None
    ) -> List[StoredRecord]:
        rows = self.handler.records(device_id, self._epoch(start), self._epoch(end))
        self._warn_if_unknown(device_id, bool(rows))
        return rows

    def export_csv(
        self,
        device_id: str,
        start: TimeArg = None,
        end: TimeArg = None,
        output: Union[str, IO[str], None] = None,
    ) -> str:
        req = self._request(device_id, start, end)
        return self.handler.export_csv(req, output)

    def report(
        self,
        device_id: str,
        start: TimeArg = None,
        end: TimeArg = None,
        **kwargs: Any,
    ) -> TrackReport:
        return report(self, device_id, self._epoch(start), self._epoch(end), **kwargs)
