import logging
from typing import IO, Any, Dict, List, Optional, Union

import pandas as pd
import requests

from .store import QueryPage, QueryRequest
from .telemetry import StoredRecord, record_from_dict
from .utils import urljoin

logger = logging.getLogger(__name__)


class URLs:
    LOCAL = "http://127.0.0.1:8080"


class BearerAuth(requests.auth.AuthBase):
    """Attaches ``Authorization: Bearer <token>`` to every request."""

    def __init__(self, token: str) -> None:
        self.token = token

    def __call__(self, r: requests.PreparedRequest) -> requests.PreparedRequest:
        r.headers["Authorization"] = f"Bearer {self.token}"
        return r


def get_auth(token: Optional[str]) -> Optional[BearerAuth]:
    return BearerAuth(token) if token else None


class TelemetryHandlerWeb:
    """Client for a running ingest service."""

    def __init__(
        self,
        url: Optional[str] = None,
        auth: Optional[requests.auth.AuthBase] = None,
        verifySSL: Optional[bool] = None,
        options: Dict[str, Any] = {},
    ) -> None:
        self._max_rows = options.get("max_rows", 1000)
        self._timeout = options.get("timeout", 30.0)
        if url is None:
            url = URLs.LOCAL
        self.base_url = url
        self.session = requests.Session()
        self.session.verify = verifySSL if verifySSL is not None else True
        self.session.auth = auth

    @staticmethod
    def generate_query_params(
        req: QueryRequest, paginate: bool = True
    ) -> Dict[str, Any]:
        params: Dict[str, Any] = {"device_id": req.device_id}
        if req.start is not None:
            params["from"] = req.start
        if req.end is not None:
            params["to"] = req.end
        if paginate:
            params["page"] = req.page
            params["page_size"] = req.page_size
        return params

    def _get(
        self, path: str, params: Optional[Dict[str, Any]] = None
    ) -> requests.Response:
        url = urljoin(self.base_url, path)
        try:
            return self.session.get(url, params=params, timeout=self._timeout)
        except requests.exceptions.RequestException as err:
            raise ConnectionError(f"Unable to reach {url}: {err}") from err

    @staticmethod
    def _check(res: requests.Response) -> None:
        if res.status_code == 400:
            raise ValueError(res.json().get("error", res.text))
        if res.status_code != 200:
            raise ConnectionError(f"{res.url} answered {res.status_code}")

    def verify_connection(self) -> bool:
        """
        Checks that the service answers its health check.

        :return: True if the service is up
        :raises ConnectionError: If the service cannot be reached
        """
        res = self._get("health")
        return res.status_code == 200

    def connect(self) -> None:
        if not self.verify_connection():
            raise ConnectionError(f"Service at {self.base_url} is not healthy")

    def post_payload(
        self,
        payload: bytes,
        token: Optional[str] = None,
        timeout: Optional[float] = None,
    ) -> int:
        """POSTs one wire payload and returns the HTTP status. A request that
        times out is reported as 408, the way the station sees a lost answer."""
        url = urljoin(self.base_url, "v1/telemetry")
        try:
            res = self.session.post(
                url,
                data=payload,
                headers={"Content-Type": "application/json"},
                auth=get_auth(token) or self.session.auth,
                timeout=timeout or self._timeout,
            )
        except requests.exceptions.Timeout:
            return 408
        except requests.exceptions.RequestException as err:
            raise ConnectionError(f"Unable to reach {url}: {err}") from err
        if res.status_code != 200:
            logger.debug(f"POST {url} -> {res.status_code} {res.text}")
        return res.status_code

    def query(self, req: QueryRequest) -> QueryPage:
        res = self._get("v1/query", self.generate_query_params(req))
        self._check(res)
        return QueryPage.from_dict(res.json())

    def latest(self, device_id: str) -> Optional[StoredRecord]:
        res = self._get("v1/latest", {"device_id": device_id})
        if res.status_code == 404:
            return None
        self._check(res)
        j = res.json()
        return StoredRecord(
            record_from_dict(j["record"]), pd.Timestamp(j["stamp"]), int(j["seq"])
        )

    def records(
        self, device_id: str, start: Optional[int] = None, end: Optional[int] = None
    ) -> List[StoredRecord]:
        """Pages through the whole range. An open start reaches back to the
        first record instead of the default seven-day window."""
        rows: List[StoredRecord] = []
        page = 1
        while True:
            req = QueryRequest(
                device_id, start if start is not None else 0, end, page, self._max_rows
            )
            result = self.query(req)
            rows.extend(result.rows)
            if page >= result.pages or not result.rows:
                break
            page += 1
        return sorted(rows, key=lambda r: (r.device_timestamp, r.seq))

    def export_csv(
        self,
        req: QueryRequest,
        output: Union[str, IO[str], None] = None,
    ) -> str:
        """Stamps come in the service's display offset."""
        params = self.generate_query_params(req, paginate=False)
        res = self._get("v1/export.csv", params)
        self._check(res)
        text = res.text
        if output is None:
            return text
        if hasattr(output, "write"):
            output.write(text)  # type: ignore
        else:
            with open(output, "w", encoding="utf-8", newline="") as f:  # type: ignore
                f.write(text)
        return text
