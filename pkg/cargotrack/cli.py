"""``cargotrack`` command line.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or I/O
failure (unreachable service, unwritable store).
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from .analytics import DEFAULT_GAP_FACTOR, DEFAULT_WEIGHT_THRESHOLD_TONS, RoutePlan
from .clients import FleetClient
from .scenario import load_scenario
from .service import ServiceConfig, load_service_config, serve
from .simulation import run_sim
from .store import DEFAULT_PAGE_SIZE, TelemetryStore
from .utils import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_STORE = "store"


def _service_config(args: argparse.Namespace) -> ServiceConfig:
    config = load_service_config(args.config) if args.config else ServiceConfig()
    if args.store:
        config = replace(config, store_path=args.store)
    return config


def _client(args: argparse.Namespace) -> FleetClient:
    config = _service_config(args)
    return FleetClient(args.source or config.store_path, tz=config.tz)


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario, seed=args.seed)
    if args.live:
        summary = run_sim(scenario, url=args.live)
    else:
        store = TelemetryStore(args.store or DEFAULT_STORE)
        if args.fresh:
            store.remove()
        summary = run_sim(scenario, store=store)
    if args.json:
        print(json.dumps(summary.to_dict(), indent=2))
    else:
        print(summary.to_text())
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    serve(_service_config(args))
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    client = _client(args)
    page = client.query(args.device, args.start, args.end, args.page, args.page_size)
    if args.json:
        print(json.dumps({**page.to_dict(), "footer": page.footer()}, indent=2))
        return 0
    frame = page.to_frame(client.tz)
    if len(frame):
        print(frame.to_string(index=False))
    print(page.footer())
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    client = _client(args)
    client.export_csv(args.device, args.start, args.end, output=args.output)
    logger.info(f"Wrote {args.device} export to {args.output}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    client = _client(args)
    plan: Optional[RoutePlan] = None
    depots = None
    if args.scenario:
        scenario = load_scenario(args.scenario)
        plan = scenario.plan_for(args.device)
        depots = scenario.depots
        if plan is None:
            logger.warning(f"{args.device} is not in {args.scenario}, no route check")
    if plan is not None and args.corridor_m is not None:
        plan = RoutePlan(plan.waypoints, args.corridor_m)
    result = client.report(
        args.device,
        args.start,
        args.end,
        plan=plan,
        threshold_tons=args.weight_threshold,
        depot_zones=depots,
        expected_t_s=args.period_s,
        gap_factor=args.gap_factor,
    )
    if args.json:
        print(json.dumps(result.to_dict(), indent=2))
    else:
        print(result.to_text(client.tz))
    if args.page is not None:
        page = client.query(
            args.device, args.start, args.end, args.page, args.page_size
        )
        frame = page.to_frame(client.tz)
        if len(frame):
            print(frame.to_string(index=False))
        print(page.footer())
    if args.csv:
        client.export_csv(args.device, args.start, args.end, output=args.csv)
    return 0


def _add_device_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--device", required=True, help="Device id, e.g. CI-205-DDE")
    p.add_argument("--from", dest="start", help="Unix seconds or a day-first date")
    p.add_argument("--to", dest="end", help="Unix seconds or a day-first date")
    p.add_argument(
        "--source", help="Store directory or service URL (default: --store)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cargotrack", description="Freight truck telemetry: simulate, serve, read."
    )
    parser.add_argument("--store", help=f"Store directory (default: {DEFAULT_STORE})")
    parser.add_argument("--config", help="Service configuration file (YAML)")
    parser.add_argument("--seed", type=int, help="Replace the scenario seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Run a scenario")
    p.add_argument("scenario", help="Scenario file (YAML)")
    p.add_argument("--live", metavar="URL", help="POST to a running service")
    p.add_argument("--fresh", action="store_true", help="Empty the store first")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="Run the ingest service")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("query", help="List one page of a device's records")
    _add_device_args(p)
    p.add_argument("--page", type=int, default=1)
    p.add_argument("--page-size", type=int, default=DEFAULT_PAGE_SIZE)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("export", help="Write a device's records as CSV")
    _add_device_args(p)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="Summarise a device's track")
    _add_device_args(p)
    p.add_argument("--scenario", help="Take route and depots from this scenario")
    p.add_argument("--corridor-m", type=float)
    p.add_argument(
        "--weight-threshold", type=float, default=DEFAULT_WEIGHT_THRESHOLD_TONS
    )
    p.add_argument("--gap-factor", type=float, default=DEFAULT_GAP_FACTOR)
    p.add_argument(
        "--period-s", type=float, help="Reporting period (default: inferred)"
    )
    p.add_argument("--json", action="store_true")
    p.add_argument("--csv", metavar="FILE", help="Also export the records")
    p.add_argument("--page", type=int, help="Also list this page of records")
    p.add_argument("--page-size", type=int, default=DEFAULT_PAGE_SIZE)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format=" %(asctime)s %(levelname)s: %(message)s",
        level=logging.DEBUG if args.verbose else logging.INFO,
    )
    try:
        return args.func(args)
    except (ConfigError, ValueError) as err:
        logger.error(str(err))
        return 1
    except (ConnectionError, OSError) as err:
        logger.error(str(err))
        return 2


if __name__ == "__main__":
    sys.exit(main())
