import contextlib
import glob
import io
import logging
import os
import threading
import warnings
from dataclasses import dataclass, replace
from typing import IO, Any, Dict, List, Optional, Tuple, Union

import pandas as pd
import pytz

from .telemetry import (
    CSV_HEADER,
    PayloadError,
    StoredRecord,
    record_from_dict,
    record_to_dict,
    records_to_frame,
    to_csv_row,
)
from .utils import safe_device_id

logger = logging.getLogger(__name__)

DEFAULT_PAGE_SIZE = 15
DEFAULT_WINDOW_DAYS = 7
FILE_SUFFIX = ".ndjson"


class StoreError(IOError):
    pass


@dataclass(frozen=True)
class QueryRequest:
    """Filter for one device. ``end`` defaults to the device's newest report
    and ``start`` to seven days before ``end``."""

    device_id: str
    start: Optional[int] = None
    end: Optional[int] = None
    page: int = 1
    page_size: int = DEFAULT_PAGE_SIZE

    def __post_init__(self) -> None:
        if self.start is not None and self.end is not None and self.start > self.end:
            raise ValueError("start must be <= end")
        if self.page < 1:
            raise ValueError("page must be >= 1")
        if self.page_size < 1:
            raise ValueError("page_size must be >= 1")


@dataclass(frozen=True)
class QueryPage:
    rows: List[StoredRecord]
    total: int
    page: int
    page_size: int

    def footer(self) -> str:
        """Dashboard style position readout, e.g. ``1 - 15 of 1525``."""
        if not self.rows:
            return f"0 - 0 of {self.total}"
        first = (self.page - 1) * self.page_size + 1
        return f"{first} - {first + len(self.rows) - 1} of {self.total}"

    @property
    def pages(self) -> int:
        return max(1, -(-self.total // self.page_size))

    def to_frame(self, tz: Optional[pytz.BaseTzInfo] = None) -> pd.DataFrame:
        return records_to_frame(self.rows, tz)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total": self.total,
            "page": self.page,
            "page_size": self.page_size,
            "rows": [
                {
                    "seq": s.seq,
                    "stamp": s.receipt_stamp.isoformat(),
                    "record": record_to_dict(s.record),
                }
                for s in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "QueryPage":
        rows = [
            StoredRecord(
                record_from_dict(row["record"]),
                pd.Timestamp(row["stamp"]),
                int(row["seq"]),
            )
            for row in obj["rows"]
        ]
        return cls(rows, int(obj["total"]), int(obj["page"]), int(obj["page_size"]))


class TelemetryStore:
    """Append-only log per device, one NDJSON file each, under ``path``.

    The in-memory index is rebuilt from the files on open. Appends to one
    file are serialized; queries work on a snapshot of the index.
    """

    def __init__(self, path: str = ".", durable: bool = False) -> None:
        self.path = path
        self.durable = durable
        self._records: Dict[str, List[StoredRecord]] = {}
        self._keys: Dict[str, Dict[int, int]] = {}
        self._locks: Dict[str, threading.Lock] = {}
        self._index_lock = threading.Lock()
        os.makedirs(self.path, exist_ok=True)
        self._load()

    def _filename(self, device_id: str) -> str:
        return os.path.join(self.path, safe_device_id(device_id) + FILE_SUFFIX)

    def _lock(self, device_id: str) -> threading.Lock:
        name = self._filename(device_id)
        with self._index_lock:
            if name not in self._locks:
                self._locks[name] = threading.Lock()
            return self._locks[name]

    def _load(self) -> None:
        count = 0
        for filename in sorted(glob.glob(os.path.join(self.path, "*" + FILE_SUFFIX))):
            with open(filename, "rb") as f:
                lines = f.read().split(b"\n")
            offset = 0
            for i, line in enumerate(lines):
                start, offset = offset, offset + len(line) + 1
                if not line.strip():
                    continue
                try:
                    stored = StoredRecord.from_json(line)
                except PayloadError as err:
                    if i == len(lines) - 1:
                        warnings.warn(f"Ignoring truncated last line in {filename}")
                        self._truncate(filename, start)
                        continue
                    raise StoreError(f"{filename}:{i + 1}: {err}") from None
                if i == len(lines) - 1:
                    # Complete record without its newline
                    self._terminate(filename)
                self._index(stored)
                count += 1
        if count:
            logger.info(f"Opened store {self.path} with {count} records")

    def _index(self, stored: StoredRecord) -> None:
        self._records.setdefault(stored.device_id, []).append(stored)
        self._keys.setdefault(stored.device_id, {})[stored.device_timestamp] = (
            stored.seq
        )

    def _write(self, stored: StoredRecord) -> int:
        rows = self._records.get(stored.device_id, [])
        seq = rows[-1].seq + 1 if rows else 1
        stored = replace(stored, seq=seq)
        line = (stored.to_json() + "\n").encode("utf-8")
        try:
            with open(self._filename(stored.device_id), "ab", buffering=0) as f:
                end = f.seek(0, os.SEEK_END)
                try:
                    view = memoryview(line)
                    while view:
                        view = view[f.write(view) :]
                    if self.durable:
                        os.fsync(f.fileno())
                except OSError:
                    with contextlib.suppress(OSError):
                        f.truncate(end)
                    raise
        except OSError as err:
            raise StoreError(f"Append for {stored.device_id} failed: {err}") from err
        self._index(stored)
        return seq

    @staticmethod
    def _truncate(filename: str, size: int) -> None:
        try:
            with open(filename, "r+b") as f:
                f.truncate(size)
        except OSError as err:
            raise StoreError(f"Cannot repair {filename}: {err}") from err

    @staticmethod
    def _terminate(filename: str) -> None:
        try:
            with open(filename, "ab") as f:
                f.write(b"\n")
        except OSError as err:
            raise StoreError(f"Cannot repair {filename}: {err}") from err

    def append(self, stored: StoredRecord) -> int:
        with self._lock(stored.device_id):
            return self._write(stored)

    def append_if_absent(self, stored: StoredRecord) -> Tuple[int, bool]:
        """Appends unless a record with the same device id and device
        timestamp exists. Returns the sequence number and whether it was
        created."""
        with self._lock(stored.device_id):
            existing = self._keys.get(stored.device_id, {}).get(
                stored.device_timestamp
            )
            if existing is not None:
                return existing, False
            return self._write(stored), True

    def devices(self) -> List[str]:
        return sorted(self._records)

    def __len__(self) -> int:
        return sum(len(v) for v in self._records.values())

    def _snapshot(self, device_id: str) -> List[StoredRecord]:
        return list(self._records.get(device_id, []))

    def _select(self, req: QueryRequest) -> List[StoredRecord]:
        rows = self._snapshot(req.device_id)
        if not rows:
            return []
        end = req.end
        if end is None:
            end = max(r.device_timestamp for r in rows)
        start = req.start
        if start is None:
            start = end - DEFAULT_WINDOW_DAYS * 86400
        matches = [r for r in rows if start <= r.device_timestamp <= end]
        return sorted(matches, key=lambda r: (r.device_timestamp, r.seq), reverse=True)

    def query(self, req: QueryRequest) -> QueryPage:
        matches = self._select(req)
        first = (req.page - 1) * req.page_size
        return QueryPage(
            rows=matches[first : first + req.page_size],
            total=len(matches),
            page=req.page,
            page_size=req.page_size,
        )

    def latest(self, device_id: str) -> Optional[StoredRecord]:
        rows = self._snapshot(device_id)
        if not rows:
            return None
        return max(rows, key=lambda r: (r.device_timestamp, r.seq))

    def records(
        self, device_id: str, start: Optional[int] = None, end: Optional[int] = None
    ) -> List[StoredRecord]:
        """All records of a device within ``[start, end]`` in ascending device
        timestamp order. Open bounds are unbounded."""
        rows = [
            r
            for r in self._snapshot(device_id)
            if (start is None or r.device_timestamp >= start)
            and (end is None or r.device_timestamp <= end)
        ]
        return sorted(rows, key=lambda r: (r.device_timestamp, r.seq))

    def export_csv(
        self,
        req: QueryRequest,
        output: Union[str, IO[str], None] = None,
        tz: Optional[pytz.BaseTzInfo] = None,
    ) -> str:
        """Writes the header and every matching row, newest first, to
        ``output`` (a path or a text stream). Returns the CSV text."""
        lines = [CSV_HEADER] + [to_csv_row(r, tz) for r in self._select(req)]
        text = "\n".join(lines) + "\n"
        if output is None:
            return text
        if isinstance(output, io.IOBase) or hasattr(output, "write"):
            output.write(text)  # type: ignore
            return text
        try:
            with open(output, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        except OSError as err:
            raise StoreError(f"Export to {output} failed: {err}") from err
        return text

    def remove(self) -> None:
        for filename in glob.glob(os.path.join(self.path, "*" + FILE_SUFFIX)):
            os.unlink(filename)
        self._records.clear()
        self._keys.clear()
