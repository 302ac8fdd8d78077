"""
Command-line entry point for the P2P market engine
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from pydantic import ValidationError as PydanticValidationError

from .errors import (
    MarketError,
    MaxIterExceeded,
    NotConvergedInRounds,
    ScenarioParseError,
    ScenarioValidationError,
)
from .models import AdmmConfig, FeederSpec, LearningPolicy, ScenarioSpec, feeder_admm_config
from .parsers import parse_feeder_series, parse_prosumer_ids
from .scenarios import (
    EXIT_FAILURE,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_VALIDATION,
    METHODS,
    generate_feeder,
    load_scenario,
    run_scenario,
    run_sweep,
    write_scenario,
)
from .settings import settings

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=settings.output_dir, help="Output directory")
    common.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    common.add_argument("--max-iter", type=int, default=None, help="Override the ADMM iteration cap")
    common.add_argument("-v", "--verbose", action="count", default=0, help="More logging (-vv for debug)")

    scenario = argparse.ArgumentParser(add_help=False)
    scenario.add_argument("--config", required=True, help="Scenario JSON document")
    scenario.add_argument("--method", choices=METHODS, default=None, help="Clearing method")
    scenario.add_argument("--trace-messages", action="store_true", help="Export decentralized message log")

    parser = argparse.ArgumentParser(prog="p2p-market", description="Peer-to-peer electricity market clearing")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("clear", parents=[common, scenario], help="Clear the first time step")
    sub.add_parser("simulate", parents=[common, scenario], help="Clear every time step")
    sub.add_parser("oracle", parents=[common, scenario], help="Analytic clearing only")

    learn = sub.add_parser("learn", parents=[common, scenario], help="Tune b until every prosumer trades")
    learn.add_argument("--learners", default="", help="Prosumer ids allowed to learn, e.g. 2,5")
    learn.add_argument("--delta-b", type=float, default=None)
    learn.add_argument("--max-rounds", type=int, default=None)
    learn.add_argument("--fixed-rounds", action="store_true")

    feeder = sub.add_parser("feeder-gen", parents=[common], help="Write a feeder scenario document")
    feeder.add_argument("--nodes", type=int, default=55)
    feeder.add_argument("--sellers", type=int, default=25)
    feeder.add_argument("--hours", default="12", help="Comma separated hours")
    feeder.add_argument("--series", default=None, help="CSV with node, hour, load_kw, generation_kw")
    feeder.add_argument("--name", default="feeder.json", help="File name inside --out")

    sweep = sub.add_parser("sweep", parents=[common], help="Scalability sweep over feeder sizes")
    sweep.add_argument("--sizes", default="55:25,165:75,330:150", help="nodes:sellers pairs")
    return parser


def configure_logging(verbose: int) -> None:
    level = settings.log_level
    if verbose == 1:
        level = "INFO"
    elif verbose >= 2:
        level = "DEBUG"
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _apply_overrides(spec: ScenarioSpec, args: argparse.Namespace) -> ScenarioSpec:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.max_iter is not None:
        updates["admm"] = AdmmConfig(**{**spec.admm.model_dump(), "max_iter": args.max_iter})
    return spec.model_copy(update=updates) if updates else spec


def _learning_policy(spec: ScenarioSpec, args: argparse.Namespace) -> LearningPolicy:
    base = spec.learning.model_dump() if spec.learning else {}
    base["kind"] = "successful_trading"
    learners = parse_prosumer_ids(args.learners)
    if learners:
        base["learners"] = learners
    if args.delta_b is not None:
        base["delta_b"] = args.delta_b
    if args.max_rounds is not None:
        base["max_rounds"] = args.max_rounds
    if args.fixed_rounds:
        base["fixed_rounds"] = True
    return LearningPolicy(**base)


def _parse_sizes(text: str) -> List[Tuple[int, int]]:
    sizes = []
    for part in text.split(","):
        nodes, _, sellers = part.strip().partition(":")
        try:
            sizes.append((int(nodes), int(sellers)))
        except ValueError as exc:
            raise ScenarioParseError(f"Invalid size {part!r}; expected nodes:sellers", field="sizes") from exc
    return sizes


def _feeder_spec(args: argparse.Namespace) -> FeederSpec:
    hours = [int(h) for h in args.hours.split(",") if h.strip()]
    data = {
        "node_count": args.nodes,
        "seller_count": args.sellers,
        "hours": hours,
        "seed": args.seed or 0,
        "admm": feeder_admm_config(args.max_iter or settings.max_iter),
    }
    if args.series:
        series = parse_feeder_series(Path(args.series).read_text(encoding="utf-8"))
        try:
            data["load_kw"] = [[series[node][h][0] for h in hours] for node in range(1, args.nodes + 1)]
            data["generation_kw"] = [[series[node][h][1] for h in hours] for node in range(1, args.nodes + 1)]
        except KeyError as exc:
            raise ScenarioParseError(f"Series has no row for {exc}", field="series") from exc
    return FeederSpec(**data)


def run(args: argparse.Namespace) -> int:
    if args.command == "feeder-gen":
        spec = generate_feeder(_feeder_spec(args))
        path = write_scenario(spec, Path(args.out) / args.name)
        logger.info("Wrote %s", path)
        return EXIT_OK

    if args.command == "sweep":
        config = feeder_admm_config(args.max_iter or settings.max_iter)
        rows = run_sweep(_parse_sizes(args.sizes), seed=args.seed or 0, outdir=args.out, config=config)
        return EXIT_OK if all(row["converged"] for row in rows) else EXIT_NOT_CONVERGED

    spec = _apply_overrides(load_scenario(args.config), args)
    method = args.method
    if args.command == "clear":
        spec = spec.model_copy(update={"steps": spec.steps[:1]})
    elif args.command == "oracle":
        method = "oracle"
        spec = spec.model_copy(update={"learning": None})
    elif args.command == "learn":
        spec = spec.model_copy(update={"learning": _learning_policy(spec, args)})
    return run_scenario(spec, args.out, method=method, trace_messages=args.trace_messages)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return run(args)
    except (ScenarioParseError, ScenarioValidationError, PydanticValidationError) as exc:
        logger.error("Invalid input: %s", exc)
        return EXIT_VALIDATION
    except (MaxIterExceeded, NotConvergedInRounds) as exc:
        logger.error("%s", exc)
        return EXIT_NOT_CONVERGED
    except MarketError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
