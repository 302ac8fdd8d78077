"""
Parsers for prosumer id lists and CSV tables
"""
import csv
import io
import re
from typing import Dict, List, Tuple

from .errors import ScenarioParseError
from .models import PairTrade


def parse_prosumer_ids(text: str) -> List[int]:
    """
    Parse prosumer ids from command-line text.
    Accepts comma, space or newline separated values and preserves input order.

    Args:
        text: Raw text such as "2,5" or "2 5"

    Returns:
        List of ids without duplicates
    """
    if not text or not text.strip():
        return []
    ids: List[int] = []
    for part in re.split(r"[\s,]+", text.strip()):
        if not part:
            continue
        try:
            value = int(part)
        except ValueError as exc:
            raise ScenarioParseError(f"Invalid prosumer id: {part!r}", field="ids") from exc
        if value not in ids:
            ids.append(value)
    return ids


def _rows(content: str) -> List[Dict[str, str]]:
    if not content or not content.strip():
        return []
    reader = csv.DictReader(io.StringIO(content))
    return [row for row in reader if any((v or "").strip() for v in row.values())]


def parse_solution_csv(content: str) -> List[PairTrade]:
    """
    Parse a solution table written by solution_to_csv.

    Args:
        content: CSV text with header pair_i, pair_j, power_kw, price

    Returns:
        List of PairTrade rows in file order
    """
    trades = []
    for line, row in enumerate(_rows(content), start=2):
        try:
            trades.append(PairTrade(
                pair_i=int(row["pair_i"]),
                pair_j=int(row["pair_j"]),
                power_kw=float(row["power_kw"]),
                price=float(row["price"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioParseError(f"Bad solution row: {exc}", line=line) from exc
    return trades


def parse_totals_csv(content: str) -> Dict[int, float]:
    """Prosumer id -> total_kw from a totals table"""
    totals = {}
    for line, row in enumerate(_rows(content), start=2):
        try:
            totals[int(row["prosumer"])] = float(row["total_kw"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioParseError(f"Bad totals row: {exc}", line=line) from exc
    return totals


def parse_feeder_series(content: str) -> Dict[int, Dict[int, Tuple[float, float]]]:
    """
    Parse per-node load and generation series.

    Args:
        content: CSV text with columns node, hour, load_kw, generation_kw

    Returns:
        node -> hour -> (load_kw, generation_kw)
    """
    series: Dict[int, Dict[int, Tuple[float, float]]] = {}
    for line, row in enumerate(_rows(content), start=2):
        try:
            node = int(row["node"])
            hour = int(row["hour"])
            load = float(row["load_kw"])
            generation = float(row["generation_kw"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioParseError(f"Bad feeder series row: {exc}", line=line) from exc
        if load < 0 or generation < 0:
            raise ScenarioParseError("Load and generation must be non-negative", line=line, field="load_kw")
        series.setdefault(node, {})[hour] = (load, generation)
    return series
