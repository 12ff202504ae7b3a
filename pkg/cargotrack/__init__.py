from .clients import FleetClient, get_handler  # noqa: F401
from .scenario import load_scenario  # noqa: F401
from .simulation import run_sim  # noqa: F401
from .store import QueryRequest, TelemetryStore  # noqa: F401
from .telemetry import TelemetryRecord, decode_payload, encode_payload  # noqa: F401

try:
    from .version import version as __version__
except ImportError:
    # Just in case it wasn't installed properly, for some reason
    from datetime import datetime

    __version__ = "unknown-" + datetime.today().strftime("%Y%m%d")
