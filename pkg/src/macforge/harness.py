"""Experiment drivers shared by the CLI: enumeration, grid evaluation, reporting."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .env import (BASELINE_ACTION, BaselineCache, EvalResult, MacEnv, ScenarioInstance, all_actions,
                  decode_action, evaluate, make_scenario, observation, reward)
from .mac import LEGACY_BASELINE, MacConfig, TimingConstants
from .phy import ChannelModel
from .ppo.algo import greedy_policy_action
from .ppo.net import Architecture
from .traffic import TrafficSpec

EVAL_NN = (4, 8, 16, 24, 30)
EVAL_LAMBDAS = (20.0, 150.0, 250.0)


@dataclass(frozen=True)
class EnumRow:
    action: tuple[int, ...]
    config: MacConfig
    reward: float
    result: EvalResult


def _sort_key(row: EnumRow, index: int):
    d = row.result.mean_delay
    return (-row.reward, math.inf if d is None else d, index)


def _eval_one(args) -> EvalResult:
    config, scenario, timing, max_events = args
    return evaluate(config, scenario, 1, timing, max_events)


def enumerate_actions(scenario: ScenarioInstance, cache: BaselineCache | None = None,
                      workers: int = 1, timing: TimingConstants | None = None,
                      env: MacEnv | None = None, aarf_override: bool = True) -> list[EnumRow]:
    """Evaluate all 1296 compositions; best reward first, ties broken by lower delay."""
    actions = all_actions()
    cache = cache or BaselineCache(persist=False, timing=timing)
    base = cache.get(scenario).throughput_mbps
    configs = [decode_action(a, aarf_override) for a in actions]
    budget = cache.max_events
    if env is not None:
        results = [env.evaluate_action(a, scenario) for a in actions]
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_eval_one, [(c, scenario, timing, budget) for c in configs],
                                     chunksize=8))
    else:
        results = [evaluate(c, scenario, 1, timing, budget) for c in configs]
    rows = [EnumRow(tuple(a), c, reward(r.throughput_mbps, base), r)
            for a, c, r in zip(actions, configs, results)]
    order = sorted(range(len(rows)), key=lambda i: _sort_key(rows[i], i))
    return [rows[i] for i in order]


@dataclass(frozen=True)
class ResultRow:
    protocol: str
    nn: int
    traffic: str
    placement_seed: int
    replications: int
    action: str
    config: str
    mean_throughput_mbps: float
    mean_delay_us: float | None
    per_network_throughput_mbps: tuple[float, ...]
    per_network_delay_us: tuple[float | None, ...]

    @classmethod
    def from_eval(cls, protocol: str, scenario: ScenarioInstance, action: str, config: MacConfig,
                  res: EvalResult) -> "ResultRow":
        return cls(protocol, scenario.nn, scenario.traffic.label(), scenario.placement_seed,
                   len(scenario.replication_seeds), action, config.label(), res.mean_throughput,
                   res.mean_delay, res.throughput_mbps, res.delay_us)


RESULT_FIELDS = ["protocol", "nn", "traffic", "placement_seed", "replications", "action", "config",
                 "mean_throughput_mbps", "mean_delay_us", "per_network_throughput_mbps",
                 "per_network_delay_us"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def result_record(row: ResultRow) -> list[str]:
    return [row.protocol, str(row.nn), row.traffic, str(row.placement_seed), str(row.replications),
            row.action, row.config, _fmt(row.mean_throughput_mbps), _fmt(row.mean_delay_us),
            ";".join(_fmt(x) for x in row.per_network_throughput_mbps),
            ";".join(_fmt(x) for x in row.per_network_delay_us)]


def eval_grid(params: dict, arch: Architecture, seed: int, nn_values: Sequence[int] = EVAL_NN,
              lambdas: Sequence[float] = EVAL_LAMBDAS, replications: int = 25,
              sim_duration_s: float = 0.5, channel: ChannelModel | None = None,
              payload_bytes: int = 1000, cache: BaselineCache | None = None, workers: int = 1,
              timing: TimingConstants | None = None, trace_dir=None) -> list[ResultRow]:
    """Greedy policy vs. legacy baseline on every (nn, lambda) pair; two rows per pair."""
    from .seeding import derive_seed
    cache = cache or BaselineCache(persist=False, timing=timing, workers=workers)
    rows: list[ResultRow] = []
    for lam in lambdas:
        for nn in nn_values:
            traffic = TrafficSpec.poisson(lam, payload_bytes)
            sc = make_scenario(nn, traffic, derive_seed(seed, "eval", nn, lam), replications,
                               sim_duration_s, channel)
            action = greedy_policy_action(params, observation(traffic, nn, BASELINE_ACTION), arch)
            cfg = decode_action(action, aarf_override=True)
            res = evaluate(cfg, sc, workers, timing, cache.max_events)
            base = cache.get(sc)
            rows.append(ResultRow.from_eval("policy", sc, "".join(map(str, action)), cfg, res))
            rows.append(ResultRow.from_eval("baseline", sc, "baseline", LEGACY_BASELINE, base))
            if trace_dir is not None:
                write_traces(trace_dir, sc, [("policy", cfg), ("baseline", LEGACY_BASELINE)], timing)
    return rows


def write_traces(trace_dir, scenario: ScenarioInstance, labelled: Iterable[tuple[str, MacConfig]],
                 timing: TimingConstants | None = None) -> None:
    """Event trace of the first replication, one file per protocol."""
    from pathlib import Path
    from .env import run_replication
    d = Path(trace_dir)
    d.mkdir(parents=True, exist_ok=True)
    for label, cfg in labelled:
        name = f"trace_{label}_nn{scenario.nn}_{scenario.traffic.label()}.tsv"
        with open(d / name, "w") as fh:
            fh.write("time_ns\tkind\tnode_id\n")
            run_replication(cfg, scenario, scenario.replication_seeds[0], timing, trace=fh)


REPORT_FIELDS = ["traffic", "protocol", "nn", "mean_throughput_mbps", "mean_delay_us", "rows"]


def read_result_rows(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _traffic_key(t: str):
    try:
        return (0, float(t), t)
    except ValueError:
        return (1, 0.0, t)


def aggregate(records: Iterable[dict]) -> list[list[str]]:
    """Mean throughput and delay per (traffic, protocol, nn): one series per traffic level."""
    groups: dict[tuple[str, str, int], list[dict]] = defaultdict(list)
    for r in records:
        groups[(r["traffic"], r["protocol"], int(r["nn"]))].append(r)
    out = []
    for key in sorted(groups, key=lambda k: (_traffic_key(k[0]), k[1], k[2])):
        rs = groups[key]
        thr = float(np.mean([float(r["mean_throughput_mbps"]) for r in rs]))
        d = [float(r["mean_delay_us"]) for r in rs if r.get("mean_delay_us")]
        out.append([key[0], key[1], str(key[2]), repr(thr), repr(float(np.mean(d))) if d else "",
                    str(len(rs))])
    return out


def csv_text(header: Sequence[str], rows: Iterable[Sequence[str]], manifest_hash: str | None = None) -> str:
    buf = io.StringIO()
    if manifest_hash:
        buf.write(f"# manifest {manifest_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
