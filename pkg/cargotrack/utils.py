import enum
import numbers
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import pandas as pd
import pytz
import yaml

DEFAULT_DISPLAY_OFFSET_HOURS = -6.0  # El Salvador, no DST


class ConfigError(ValueError):
    """A configuration document (scenario or service) failed validation.

    The message names the source file, the line and the offending field when
    they are known, e.g. ``scenario.yaml:12: trucks[0].t: must be > 0``.
    """

    def __init__(
        self,
        reason: str,
        field: Optional[str] = None,
        line: Optional[int] = None,
        source: Optional[str] = None,
    ) -> None:
        self.reason = reason
        self.field = field
        self.line = line
        self.source = source
        super().__init__(self._format())

    def _format(self) -> str:
        where = ""
        if self.source is not None:
            where = f"{self.source}:"
        if self.line is not None:
            where += f"{self.line}:"
        prefix = f"{where} " if where else ""
        if self.field:
            return f"{prefix}{self.field}: {self.reason}"
        return f"{prefix}{self.reason}"


class SensorKind(enum.Enum):
    """Analog weight sensor models the station can carry.

    Both are read as a voltage that is linear in payload; they differ only in
    their noise characteristics.
    """

    DP = AXLE = "DP"  # Axle deflection sensor on the suspension axle
    DDE = HOSE = "DDE"  # Pressure sensor on the damper hoses


def display_tz(offset_hours: float = DEFAULT_DISPLAY_OFFSET_HOURS) -> pytz.BaseTzInfo:
    return pytz.FixedOffset(int(round(offset_hours * 60)))


def ensure_datetime_with_tz(
    date_stamp: Union[str, int, float, pd.Timestamp],
    tz: Union[str, pytz.BaseTzInfo, None] = None,
) -> pd.Timestamp:
    """Accepts Unix seconds, a date string (day first) or a Timestamp and
    returns a tz-aware Timestamp. Naive values are localized to ``tz``, which
    defaults to the display offset.
    """
    if tz is None:
        tz = display_tz()
    if isinstance(date_stamp, numbers.Real) and not isinstance(date_stamp, bool):
        return pd.Timestamp(int(date_stamp), unit="s", tz="UTC").tz_convert(tz)
    if isinstance(date_stamp, str):
        if date_stamp.strip().lstrip("-").isdigit():
            return ensure_datetime_with_tz(int(date_stamp), tz=tz)
        date_stamp = pd.to_datetime(date_stamp, dayfirst=True)
    date_stamp = pd.Timestamp(date_stamp)
    if not date_stamp.tzinfo:
        date_stamp = date_stamp.tz_localize(tz)
    return date_stamp


def timestamp_to_epoch(timestamp: pd.Timestamp) -> int:
    origin = pd.Timestamp("1970-01-01")
    if timestamp.tzinfo is not None:
        timestamp = timestamp.tz_convert("UTC").tz_localize(None)
    return (timestamp - origin) // pd.Timedelta("1s")  # type: ignore


def to_epoch(
    value: Union[str, int, float, pd.Timestamp],
    tz: Union[str, pytz.BaseTzInfo, None] = None,
) -> int:
    """Unix seconds from a command line or query string time argument."""
    return timestamp_to_epoch(ensure_datetime_with_tz(value, tz))


def epoch_to_timestamp(
    seconds: float, tz: Union[str, pytz.BaseTzInfo, None] = None
) -> pd.Timestamp:
    if tz is None:
        tz = display_tz()
    return pd.Timestamp(round(seconds * 1e6), unit="us", tz="UTC").tz_convert(tz)


def safe_device_id(device_id: str) -> str:
    """File-system safe version of a device id, used for store file names."""
    name = device_id.replace(".", "_")
    name = "".join(c for c in name if c.isalnum() or c in "_-").strip()
    if not name:
        raise ValueError(f"Device id {device_id!r} has no usable characters")
    return name


def urljoin(*args: Any) -> str:
    """Joins components of URL. Ensures slashes are inserted or removed where
    needed, and does not strip trailing slash of last element.

    Arguments:
        str
    Returns:
        str -- Generated URL
    """
    trailing_slash = "/" if str(args[-1]).endswith("/") else ""
    return "/".join(map(lambda x: str(x).strip("/"), args)) + trailing_slash


# YAML with line numbers ----------------------------------------------------


class LineDict(dict):  # type: ignore[type-arg]
    """Mapping loaded from YAML that remembers where each key was written."""

    def __init__(self) -> None:
        super().__init__()
        self.line: Optional[int] = None
        self.lines: Dict[Any, int] = {}


class LineList(list):  # type: ignore[type-arg]
    def __init__(self) -> None:
        super().__init__()
        self.line: Optional[int] = None
        self.item_lines: List[int] = []


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader: _LineLoader, node: yaml.MappingNode) -> LineDict:
    loader.flatten_mapping(node)
    mapping = LineDict()
    mapping.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        line = key_node.start_mark.line + 1
        if key in mapping:
            raise ConfigError("duplicate key", field=str(key), line=line)
        mapping[key] = loader.construct_object(value_node, deep=True)
        mapping.lines[key] = line
    return mapping


def _construct_sequence(loader: _LineLoader, node: yaml.SequenceNode) -> LineList:
    seq = LineList()
    seq.line = node.start_mark.line + 1
    for item in node.value:
        seq.append(loader.construct_object(item, deep=True))
        seq.item_lines.append(item.start_mark.line + 1)
    return seq


_LineLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping
)
_LineLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence
)


def load_yaml(text: str, source: Optional[str] = None) -> LineDict:
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except ConfigError as err:
        raise ConfigError(err.reason, err.field, err.line, source) from None
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"invalid YAML ({err})", line=line, source=source)
    if not isinstance(doc, LineDict):
        raise ConfigError("document must be a mapping", line=1, source=source)
    return doc


def load_yaml_file(path: str) -> LineDict:
    with open(path, encoding="utf-8") as f:
        return load_yaml(f.read(), source=path)


class ConfigSection:
    """Typed, strict access to one mapping of a configuration document.

    Every value is read through :meth:`take`; :meth:`finish` then rejects any
    key that nobody asked for.
    """

    def __init__(self, mapping: Any, path: str, source: Optional[str] = None):
        self.source = source
        self.path = path
        if not isinstance(mapping, dict):
            raise ConfigError(
                "must be a mapping",
                field=path or None,
                line=getattr(mapping, "line", None),
                source=source,
            )
        self.mapping = mapping
        self._seen: set = set()

    def _field(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def line_of(self, key: Optional[str] = None) -> Optional[int]:
        lines = getattr(self.mapping, "lines", {})
        if key is not None and key in lines:
            return lines[key]
        return getattr(self.mapping, "line", None)

    def error(self, key: str, reason: str) -> ConfigError:
        return ConfigError(
            reason, field=self._field(key), line=self.line_of(key), source=self.source
        )

    def has(self, key: str) -> bool:
        return key in self.mapping

    def take(
        self,
        key: str,
        kind: Callable[[Any], Any] = lambda v: v,
        default: Any = ...,
        check: Optional[Callable[[Any], bool]] = None,
        reason: str = "invalid value",
    ) -> Any:
        self._seen.add(key)
        if key not in self.mapping:
            if default is ...:
                raise self.error(key, "required field missing")
            return default
        raw = self.mapping[key]
        if isinstance(raw, bool) and kind in (int, float):
            raise self.error(key, f"expected {kind.__name__}, got boolean")
        try:
            value = kind(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as err:
            raise self.error(key, f"{reason} ({err})") from None
        if check is not None and not check(value):
            raise self.error(key, reason)
        return value

    def section(self, key: str, default: Any = ...) -> "ConfigSection":
        value = self.take(key, default=default)
        if value is None:
            value = LineDict()
        return ConfigSection(value, self._field(key), self.source)

    def items(
        self, key: str, default: Any = ...
    ) -> List[Tuple[str, Any, Optional[int]]]:
        """Returns (field path, item, line) for every element of a list field."""
        value = self.take(key, default=default)
        if value is None:
            return []
        if not isinstance(value, list):
            raise self.error(key, "must be a list")
        lines = getattr(value, "item_lines", [self.line_of(key)] * len(value))
        return [
            (f"{self._field(key)}[{i}]", item, lines[i] if i < len(lines) else None)
            for i, item in enumerate(value)
        ]

    def finish(self) -> None:
        for key in self.mapping:
            if key not in self._seen:
                raise self.error(str(key), "unknown field")


__all__ = [
    "ConfigError",
    "ConfigSection",
    "SensorKind",
    "display_tz",
    "ensure_datetime_with_tz",
    "epoch_to_timestamp",
    "load_yaml",
    "load_yaml_file",
    "safe_device_id",
    "timestamp_to_epoch",
    "to_epoch",
    "urljoin",
]
