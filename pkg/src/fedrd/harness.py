"""Experiment presets, multi-seed sweeps and plot-ready outputs."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

from .federation import MissionConfig, Protocol, RunResult, run_mission

# (sections S, period E, width n, hidden layers l)
PRESETS: dict[str, dict[str, int]] = {
    "setting1": dict(sections=100, period=25, hidden_width=24, hidden_layers=2),
    "setting2": dict(sections=100, period=25, hidden_width=100, hidden_layers=2),
    "setting3": dict(sections=50, period=25, hidden_width=100, hidden_layers=2),
    "setting4": dict(sections=100, period=10, hidden_width=24, hidden_layers=1),
    "setting5": dict(sections=100, period=50, hidden_width=24, hidden_layers=1),
    "fig3": dict(sections=30, period=25, hidden_width=50, hidden_layers=2),
    "fig4": dict(sections=30, period=25, hidden_width=50, hidden_layers=2),
}

DEFAULT_SEEDS = tuple(range(10))
WORKERS_ENV = "FEDRD_WORKERS"

RUN_COLUMNS = ["protocol", "agents", "S", "E", "n", "l", "seed", "completion_episode",
               "capped", "total_uplink_bytes", "total_downlink_bytes"]
AGGREGATE_COLUMNS = ["protocol", "agents", "S", "E", "n", "l", "runs", "capped_runs",
                     "median", "p25", "p75"]


@dataclass(frozen=True)
class ExperimentConfig:
    mission: MissionConfig = field(default_factory=MissionConfig)
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")


def preset(name: str, **overrides) -> ExperimentConfig:
    """Named configuration; keyword overrides go to :class:`MissionConfig`
    (``seeds`` is taken separately)."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    seeds = tuple(overrides.pop("seeds", DEFAULT_SEEDS))
    return ExperimentConfig(MissionConfig(**{**PRESETS[name], **overrides}), seeds)


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * N)-th smallest value."""
    if not values:
        raise ValueError("percentile of an empty sample")
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


def completion_value(result: RunResult) -> int:
    """Completion episode, or the episodes played when the budget ran out."""
    return result.episodes_played if result.capped else result.completion_episode


def run_row(result: RunResult) -> dict:
    c = result.config
    return {
        "protocol": c.protocol.value,
        "agents": c.num_agents,
        "S": c.sections,
        "E": c.period,
        "n": c.hidden_width,
        "l": c.hidden_layers,
        "seed": result.seed,
        "completion_episode": completion_value(result),
        "capped": result.capped,
        "total_uplink_bytes": result.total_uplink_bytes,
        "total_downlink_bytes": result.total_downlink_bytes,
    }


@dataclass
class SweepResult:
    runs: list[RunResult]

    def rows(self) -> list[dict]:
        return [run_row(r) for r in self.runs]

    def aggregates(self) -> list[dict]:
        groups: dict[tuple, list[RunResult]] = {}
        for r in self.runs:
            c = r.config
            groups.setdefault((c.protocol.value, c.num_agents, c.sections, c.period,
                               c.hidden_width, c.hidden_layers), []).append(r)
        out = []
        for key in sorted(groups):
            vals = [completion_value(r) for r in groups[key]]
            out.append(dict(zip(AGGREGATE_COLUMNS[:6], key)) | {
                "runs": len(vals),
                "capped_runs": sum(r.capped for r in groups[key]),
                "median": nearest_rank(vals, 50),
                "p25": nearest_rank(vals, 25),
                "p75": nearest_rank(vals, 75),
            })
        return out

    def completions(self, agents: int | None = None) -> list[int]:
        return [completion_value(r) for r in self.runs
                if agents is None or r.config.num_agents == agents]


def _run_cell(args) -> RunResult:
    config, seed = args
    return run_mission(config, seed)


def worker_count() -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def sweep(config: ExperimentConfig, agent_counts: Iterable[int] | None = None,
          workers: int | None = None) -> SweepResult:
    """Run every (agent count, seed) cell. Results come back sorted by
    (agents, seed) regardless of completion order."""
    counts = list(agent_counts) if agent_counts is not None else [config.mission.num_agents]
    if not counts:
        raise ValueError("agent_counts must be nonempty")
    cells = [(replace(config.mission, num_agents=k), s) for k in counts for s in config.seeds]
    workers = workers or worker_count()
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = []
        for cell in cells:
            try:
                results.append(_run_cell(cell))
            except Exception as exc:
                raise RuntimeError(f"run failed for {cell[0]} seed={cell[1]}") from exc
    results.sort(key=lambda r: (r.config.num_agents, r.seed))
    return SweepResult(results)


def _csv_text(columns: list[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: row[k] for k in columns})
    return buf.getvalue()


def emit(result: SweepResult, out_dir, fmt: str = "csv", round_logs: bool = False) -> list[Path]:
    """Write ``runs.<fmt>`` and ``aggregate.csv`` (and optionally ``rounds.jsonl``)."""
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = result.rows()
    written = []
    runs_path = out / f"runs.{fmt}"
    if fmt == "csv":
        runs_path.write_text(_csv_text(RUN_COLUMNS, rows))
    else:
        runs_path.write_text("".join(json.dumps({k: r[k] for k in RUN_COLUMNS}) + "\n" for r in rows))
    written.append(runs_path)
    agg_path = out / "aggregate.csv"
    agg_path.write_text(_csv_text(AGGREGATE_COLUMNS, result.aggregates()))
    written.append(agg_path)
    if round_logs:
        lines = []
        for r in result.runs:
            for log in r.rounds:
                rec = json.loads(log.to_json())
                rec.update(seed=r.seed, agents=r.config.num_agents)
                lines.append(json.dumps(rec, sort_keys=True) + "\n")
        path = out / "rounds.jsonl"
        path.write_text("".join(lines))
        written.append(path)
    return written


def load_overrides(path) -> dict:
    """Parse a ``key = value`` config file into MissionConfig overrides.

    Blank lines and ``#`` comments are ignored. Values are coerced to the
    field's type.
    """
    types = {f.name: f.type for f in fields(MissionConfig)}
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "seeds":
            out["seeds"] = parse_seeds(value)
            continue
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = coerce(types[key], value)
    return out


def coerce(type_name: str, value: str):
    t = str(type_name)
    if t == "bool":
        return value.lower() in ("1", "true", "yes", "on")
    if t == "int":
        return int(value)
    if t.startswith("float"):
        return None if value.lower() == "none" else float(value)
    return value


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0-9"`` or ``"1,5,7"`` or a mix like ``"0-3,10"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("empty seed list")
    return tuple(seeds)


__all__ = [
    "PRESETS", "ExperimentConfig", "SweepResult", "preset", "sweep", "emit",
    "nearest_rank", "load_overrides", "parse_seeds", "Protocol",
]
