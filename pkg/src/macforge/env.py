"""MAC composition as a decision problem.

An action picks one value per MAC block; the environment simulates the
resulting protocol on a scenario and rewards the mean per-network throughput
gain over the legacy DCF baseline run on the very same seeds.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .desim import SimulationAborted
from .mac import (AARF, BACKOFFS, CW_MINS, FIXED, LEGACY_BASELINE, SLOTS_US, MacConfig,
                  MacSimulation, TimingConstants)
from .phy import RATES_MBPS, ChannelModel, place_networks
from .seeding import derive_seed
from .traffic import TrafficSpec

log = logging.getLogger(__name__)

HEAD_SIZES = (2, 3, 4, 3, 2, 9)
HEAD_NAMES = ("cs", "slot", "backoff", "cw_min", "rtscts", "rate")
N_ACTIONS = int(np.prod(HEAD_SIZES))
OBS_DIM = 2 + len(HEAD_SIZES)

TRAINING_LAMBDAS = (35.0, 50.0, 100.0, 200.0, 300.0, None)  # None: saturated
MAX_NN = 30
SATURATED_CODE = 1.5


class ActionVector(NamedTuple):
    cs: int
    slot: int
    backoff: int
    cw_min: int
    rtscts: int
    rate: int


# index form of the legacy baseline; the rate index stands for AARF's starting rate
BASELINE_ACTION = ActionVector(1, 1, 2, 0, 1, 0)


class EvaluationAborted(RuntimeError):
    pass


def check_action(a: Sequence[int]) -> ActionVector:
    if len(a) != len(HEAD_SIZES):
        raise ValueError(f"action needs {len(HEAD_SIZES)} heads, got {len(a)}")
    for name, idx, size in zip(HEAD_NAMES, a, HEAD_SIZES):
        if not 0 <= int(idx) < size:
            raise ValueError(f"action head {name} index {idx} outside [0, {size})")
    return ActionVector(*(int(i) for i in a))


def decode_action(a: Sequence[int], aarf_override: bool = False) -> MacConfig:
    """Map head indices to a protocol; with ``aarf_override`` the baseline action maps to AARF."""
    a = check_action(a)
    control = AARF if aarf_override and a == BASELINE_ACTION else FIXED
    return MacConfig(cs_enabled=bool(a.cs), slot_us=SLOTS_US[a.slot], backoff=BACKOFFS[a.backoff],
                     cw_min=CW_MINS[a.cw_min], rtscts=bool(a.rtscts),
                     rate_mbps=RATES_MBPS[a.rate], rate_control=control)


def encode_config(cfg: MacConfig) -> ActionVector:
    return ActionVector(int(cfg.cs_enabled), SLOTS_US.index(cfg.slot_us), BACKOFFS.index(cfg.backoff),
                        CW_MINS.index(cfg.cw_min), int(cfg.rtscts), RATES_MBPS.index(cfg.rate_mbps))


def all_actions() -> list[ActionVector]:
    return [ActionVector(*map(int, idx)) for idx in np.ndindex(*HEAD_SIZES)]


def observation(traffic: TrafficSpec, nn: int, prev_action: Sequence[int]) -> np.ndarray:
    tr = SATURATED_CODE if traffic.saturated else traffic.lam / 300.0
    obs = [tr, nn / MAX_NN]
    obs += [i / size for i, size in zip(prev_action, HEAD_SIZES)]
    return np.asarray(obs, dtype=np.float64)


@dataclass(frozen=True)
class ScenarioInstance:
    nn: int
    traffic: TrafficSpec
    placement_seed: int
    replication_seeds: tuple[int, ...]
    sim_duration_s: float = 0.5
    channel: ChannelModel = field(default_factory=ChannelModel)
    area_m: float = 150.0
    sta_radius_m: float = 20.0

    def __post_init__(self):
        if not 1 <= self.nn:
            raise ValueError("nn must be >= 1")
        object.__setattr__(self, "replication_seeds", tuple(int(s) for s in self.replication_seeds))
        if not self.replication_seeds:
            raise ValueError("need at least one replication seed")
        if len(set(self.replication_seeds)) != len(self.replication_seeds):
            raise ValueError("replication seeds must be distinct")
        if self.sim_duration_s <= 0:
            raise ValueError("sim_duration_s must be positive")

    @property
    def duration_ns(self) -> int:
        return int(round(self.sim_duration_s * 1e9))

    def to_json(self) -> dict:
        return {"nn": self.nn, "traffic": self.traffic.to_json(),
                "placement_seed": self.placement_seed,
                "replication_seeds": list(self.replication_seeds),
                "sim_duration_s": self.sim_duration_s, "channel": self.channel.to_json(),
                "area_m": self.area_m, "sta_radius_m": self.sta_radius_m}

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioInstance":
        known = {"nn", "traffic", "placement_seed", "replication_seeds", "sim_duration_s", "channel",
                 "area_m", "sta_radius_m"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        for key in ("nn", "traffic", "placement_seed", "replication_seeds"):
            if key not in d:
                raise ValueError(f"scenario is missing {key!r}")
        return cls(nn=int(d["nn"]), traffic=TrafficSpec.from_json(d["traffic"]),
                   placement_seed=int(d["placement_seed"]),
                   replication_seeds=tuple(d["replication_seeds"]),
                   sim_duration_s=float(d.get("sim_duration_s", 0.5)),
                   channel=ChannelModel.from_json(d.get("channel")),
                   area_m=float(d.get("area_m", 150.0)),
                   sta_radius_m=float(d.get("sta_radius_m", 20.0)))

    @cached_property
    def _hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def content_hash(self) -> str:
        return self._hash

    def topology(self):
        return place_networks(self.nn, self.placement_seed, self.area_m, self.sta_radius_m)


def make_scenario(nn: int, traffic: TrafficSpec, seed: int, replications: int = 25,
                  sim_duration_s: float = 0.5, channel: ChannelModel | None = None,
                  **kw) -> ScenarioInstance:
    """Scenario whose placement and replication seeds are all derived from ``seed``."""
    return ScenarioInstance(nn=nn, traffic=traffic, placement_seed=derive_seed(seed, "placement"),
                            replication_seeds=tuple(derive_seed(seed, "replication", i)
                                                    for i in range(replications)),
                            sim_duration_s=sim_duration_s, channel=channel or ChannelModel(), **kw)


@dataclass(frozen=True)
class EvalResult:
    throughput_mbps: tuple[float, ...]
    delay_us: tuple[float | None, ...]

    @property
    def mean_throughput(self) -> float:
        return float(np.mean(self.throughput_mbps))

    @property
    def mean_delay(self) -> float | None:
        vals = [d for d in self.delay_us if d is not None]
        return float(np.mean(vals)) if vals else None

    def to_json(self) -> dict:
        return {"throughput_mbps": list(self.throughput_mbps), "delay_us": list(self.delay_us)}

    @classmethod
    def from_json(cls, d: dict) -> "EvalResult":
        return cls(tuple(d["throughput_mbps"]), tuple(d["delay_us"]))


DEFAULT_MAX_EVENTS = 10_000_000


def run_replication(config: MacConfig, scenario: ScenarioInstance, seed: int,
                    timing: TimingConstants | None = None, trace=None,
                    max_events: int = DEFAULT_MAX_EVENTS):
    sim = MacSimulation(config, scenario.topology(), scenario.channel, scenario.traffic, seed,
                        scenario.duration_ns, timing=timing, trace=trace, max_events=max_events)
    return sim.run()


def _replication_metrics(args) -> list[tuple[float, float | None]]:
    config, scenario, seed, timing, max_events = args
    try:
        return run_replication(config, scenario, seed, timing, max_events=max_events).metrics()
    except SimulationAborted as exc:
        raise EvaluationAborted(f"replication seed={seed} of scenario "
                                f"{scenario.content_hash()[:12]} aborted: {exc}") from exc


def evaluate(config: MacConfig, scenario: ScenarioInstance, workers: int = 1,
             timing: TimingConstants | None = None,
             max_events: int = DEFAULT_MAX_EVENTS) -> EvalResult:
    """Per-network throughput (Mbit/s) and delay (us), averaged over the replications."""
    jobs = [(config, scenario, s, timing, max_events) for s in scenario.replication_seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_replication_metrics, jobs))
    else:
        per_rep = [_replication_metrics(j) for j in jobs]
    thr, dly = [], []
    for i in range(scenario.nn):
        thr.append(float(np.mean([rep[i][0] for rep in per_rep])) / 1e6)
        d = [rep[i][1] for rep in per_rep if rep[i][1] is not None]
        dly.append(float(np.mean(d)) / 1e3 if d else None)
    return EvalResult(tuple(thr), tuple(dly))


def reward(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise ValueError(f"throughput vectors differ in length: {len(x)} != {len(y)}")
    if not len(x):
        raise ValueError("no networks")
    return sum(a - b for a, b in zip(x, y)) / len(x)


def default_cache_dir() -> Path:
    return Path(os.environ.get("MACFORGE_CACHE_DIR", "cache"))


class BaselineCache:
    """Legacy-baseline results keyed by scenario content, in memory and optionally on disk."""

    def __init__(self, directory: str | os.PathLike | None = None, persist: bool = True,
                 timing: TimingConstants | None = None, workers: int = 1,
                 max_events: int = DEFAULT_MAX_EVENTS):
        self.max_events = max_events
        self.directory = Path(directory) if directory is not None else default_cache_dir()
        self.persist = persist
        self.timing = timing
        self.workers = workers
        self._mem: dict[str, EvalResult] = {}
        self.hits = 0
        self.misses = 0

    def key(self, scenario: ScenarioInstance) -> str:
        blob = json.dumps({"scenario": scenario.to_json(), "baseline": LEGACY_BASELINE.to_json(),
                           "timing": repr(self.timing or TimingConstants())},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def clear(self, disk: bool = False) -> None:
        self._mem.clear()
        if disk and self.directory.is_dir():
            for f in self.directory.glob("*.json"):
                f.unlink()

    def get(self, scenario: ScenarioInstance) -> EvalResult:
        k = self.key(scenario)
        if k in self._mem:
            self.hits += 1
            return self._mem[k]
        path = self.directory / f"{k}.json"
        if self.persist and path.is_file():
            self.hits += 1
            res = EvalResult.from_json(json.loads(path.read_text())["result"])
            self._mem[k] = res
            return res
        self.misses += 1
        res = evaluate(LEGACY_BASELINE, scenario, self.workers, self.timing, self.max_events)
        self._mem[k] = res
        if self.persist:
            self.directory.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps({"scenario": scenario.to_json(), "result": res.to_json()},
                                      sort_keys=True, indent=1))
            tmp.replace(path)
        return res


def baseline_metrics(scenario: ScenarioInstance, cache: BaselineCache) -> tuple[float, ...]:
    return cache.get(scenario).throughput_mbps


class MacEnv:
    """Scenario-per-episode environment; the scenario stays fixed for ``episode_len`` steps.

    Evaluations are pure functions of (scenario, config), so they are memoised.
    """

    def __init__(self, episode_len: int = 1000, replications: int = 25, sim_duration_s: float = 0.5,
                 channel: ChannelModel | None = None, payload_bytes: int = 1000,
                 scenario: ScenarioInstance | None = None, cache: BaselineCache | None = None,
                 seed: int = 0, workers: int = 1, timing: TimingConstants | None = None,
                 aarf_override: bool = True, memo_size: int = 20_000):
        self.episode_len = episode_len
        self.replications = replications
        self.sim_duration_s = sim_duration_s
        self.channel = channel or ChannelModel()
        self.payload_bytes = payload_bytes
        self.fixed_scenario = scenario
        self.timing = timing
        self.cache = cache or BaselineCache(persist=False, timing=timing, workers=workers)
        self.rng = random.Random(derive_seed(seed, "env"))
        self.workers = workers
        self.aarf_override = aarf_override
        self.memo_size = memo_size
        self._memo: dict[tuple[str, ActionVector], EvalResult] = {}
        self.scenario: ScenarioInstance | None = None
        self.prev_action = BASELINE_ACTION
        self.t = 0
        self.episodes = 0
        self.last_result: EvalResult | None = None

    def sample_scenario(self, rng: random.Random) -> ScenarioInstance:
        nn = rng.randint(1, MAX_NN)
        lam = rng.choice(TRAINING_LAMBDAS)
        traffic = (TrafficSpec.saturated_spec(self.payload_bytes) if lam is None
                   else TrafficSpec.poisson(lam, self.payload_bytes))
        seeds: list[int] = []
        while len(seeds) < self.replications:
            s = rng.getrandbits(63)
            if s not in seeds:
                seeds.append(s)
        return ScenarioInstance(nn, traffic, rng.getrandbits(63), tuple(seeds), self.sim_duration_s,
                                self.channel)

    def reset(self, rng: random.Random | None = None) -> tuple[np.ndarray, ScenarioInstance]:
        rng = rng or self.rng
        self.scenario = self.fixed_scenario or self.sample_scenario(rng)
        self.prev_action = BASELINE_ACTION
        self.t = 0
        self.episodes += 1
        return self.observe(), self.scenario

    def observe(self) -> np.ndarray:
        return observation(self.scenario.traffic, self.scenario.nn, self.prev_action)

    def evaluate_action(self, action: Sequence[int], scenario: ScenarioInstance | None = None) -> EvalResult:
        scenario = scenario or self.scenario
        a = check_action(action)
        key = (scenario.content_hash(), a)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        res = evaluate(decode_action(a, self.aarf_override), scenario, self.workers, self.timing,
                       self.cache.max_events)
        if len(self._memo) >= self.memo_size:
            self._memo.pop(next(iter(self._memo)))
        self._memo[key] = res
        return res

    def action_reward(self, action: Sequence[int], scenario: ScenarioInstance | None = None) -> float:
        scenario = scenario or self.scenario
        res = self.evaluate_action(action, scenario)
        return reward(res.throughput_mbps, baseline_metrics(scenario, self.cache))

    def step(self, action: Sequence[int]) -> tuple[np.ndarray, float, bool]:
        if self.scenario is None:
            raise RuntimeError("step() before reset()")
        a = check_action(action)
        res = self.evaluate_action(a)
        self.last_result = res
        r = reward(res.throughput_mbps, baseline_metrics(self.scenario, self.cache))
        self.prev_action = a
        self.t += 1
        return self.observe(), r, self.t >= self.episode_len
