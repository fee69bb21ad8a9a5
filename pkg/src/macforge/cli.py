"""``macforge`` command line: train, eval, enumerate, baseline, oracle, report."""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .env import (DEFAULT_MAX_EVENTS, BaselineCache, EvaluationAborted, MacEnv, ScenarioInstance,
                  make_scenario)
from .harness import (EVAL_LAMBDAS, EVAL_NN, REPORT_FIELDS, RESULT_FIELDS, ResultRow, aggregate,
                      csv_text, enumerate_actions, eval_grid, read_result_rows, result_record,
                      write_traces)
from .mac import LEGACY_BASELINE
from .oracles import BianchiParams, aloha_throughput, bianchi_throughput
from .phy import ChannelModel
from .ppo import checkpoint as ckpt
from .ppo.algo import PpoHyper, TrainingDiverged, train
from .ppo.net import Architecture
from .seeding import derive_seed
from .traffic import TrafficSpec

log = logging.getLogger("macforge")

EXIT_OK, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_ABORT = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# -- manifests --------------------------------------------------------------

def manifest_hash(command: str, config: dict, seed: int) -> str:
    blob = json.dumps({"command": command, "config": config, "seed": seed, "version": __version__},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Run:
    """Output directory plus a manifest written before any result file."""

    def __init__(self, command: str, config: dict, seed: int, out: Path, identity: dict | None = None):
        self.command, self.config, self.seed, self.out = command, config, seed, out
        # ``identity`` replaces the config in the hash when paths should not matter
        self.hash = manifest_hash(command, config if identity is None else identity, seed)
        self.outputs: list[str] = []
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()
        out.mkdir(parents=True, exist_ok=True)
        self._write_manifest(finished=None)

    def _write_manifest(self, finished):
        doc = {"command": self.command, "config": self.config, "config_hash": self.hash,
               "seed": self.seed, "version": __version__, "started": self.started,
               "finished": finished, "outputs": self.outputs}
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True))

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.outputs.append(name)
        return path

    def finish(self):
        self._write_manifest(_dt.datetime.now(_dt.timezone.utc).isoformat())


# -- config parsing ---------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _field(fn, name: str):
    try:
        return fn()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def scenario_from_config(d: dict, seed: int) -> ScenarioInstance:
    """Full scenario JSON, or a short form whose seeds derive from the master seed."""
    d = dict(d.get("scenario", d))
    if "placement_seed" in d or "replication_seeds" in d:
        return _field(lambda: ScenarioInstance.from_json(d), "scenario")
    reps = d.pop("replications", 25)
    extra = {k: d.pop(k) for k in ("area_m", "sta_radius_m") if k in d}
    unknown = set(d) - {"nn", "traffic", "sim_duration_s", "channel"}
    if unknown:
        raise ConfigError(f"scenario: unknown keys {sorted(unknown)}")
    if "nn" not in d or "traffic" not in d:
        raise ConfigError("scenario: 'nn' and 'traffic' are required")
    return _field(lambda: make_scenario(int(d["nn"]), TrafficSpec.from_json(d["traffic"]),
                                        derive_seed(seed, "scenario"), int(reps),
                                        float(d.get("sim_duration_s", 0.5)),
                                        ChannelModel.from_json(d.get("channel")), **extra), "scenario")


def hyper_from_config(d: dict) -> PpoHyper:
    given = dict(d.get("hyper", {}))
    defaults = PpoHyper()
    for key, default in defaults.to_json().items():
        if key not in given:
            log.info("hyper.%s not set, using default %r", key, default)
    unknown = set(given) - set(defaults.to_json())
    if unknown:
        raise ConfigError(f"hyper: unknown keys {sorted(unknown)}")
    return _field(lambda: PpoHyper(**given), "hyper")


def _cache(args, cfg: dict, workers: int) -> BaselineCache:
    directory = cfg.get("cache_dir")
    budget = _field(lambda: int(cfg.get("max_events", DEFAULT_MAX_EVENTS)), "max_events")
    return BaselineCache(directory, persist=not cfg.get("no_disk_cache", False), workers=workers,
                         max_events=budget)


# -- subcommands ------------------------------------------------------------

def cmd_train(args, cfg: dict) -> int:
    hyper = hyper_from_config(cfg)
    env_cfg = dict(cfg.get("env", {}))
    known_env = {"episode_len", "replications", "sim_duration_s", "payload_bytes", "channel"}
    if set(env_cfg) - known_env:
        raise ConfigError(f"env: unknown keys {sorted(set(env_cfg) - known_env)}")
    scenario = scenario_from_config(cfg["scenario"], args.seed) if "scenario" in cfg else None
    channel = _field(lambda: ChannelModel.from_json(env_cfg.get("channel")), "env.channel")
    env = MacEnv(episode_len=int(env_cfg.get("episode_len", 1000)),
                 replications=int(env_cfg.get("replications", 25)),
                 sim_duration_s=float(env_cfg.get("sim_duration_s", 0.5)), channel=channel,
                 payload_bytes=int(env_cfg.get("payload_bytes", 1000)), scenario=scenario,
                 cache=_cache(args, cfg, args.workers), seed=args.seed, workers=args.workers)
    run = Run("train", cfg, args.seed, args.out)
    rng = np.random.default_rng(derive_seed(args.seed, "policy"))
    arch = Architecture()
    last = {}

    def keep(result):
        last["r"] = result

    try:
        result = train(env, hyper, rng, arch, on_update=keep)
    except TrainingDiverged as exc:
        if last:
            r = last["r"]
            run.write("checkpoint_last_good.json", ckpt.dumps(arch, r.params, r.adam, rng, hyper, r.steps))
        if exc.dump:
            run.write("rollout_dump.json", json.dumps(exc.dump))
        log.error("training diverged: %s", exc)
        run.finish()
        return EXIT_ABORT
    run.write("checkpoint.json", ckpt.dumps(arch, result.params, result.adam, rng, hyper, result.steps,
                                            extra={"manifest": run.hash}))
    rows = [[str(c.step), repr(c.episode_mean_reward), repr(c.entropy), repr(c.value_loss)]
            for c in result.curve]
    run.write("curve.csv", csv_text(["step", "episode_mean_reward", "entropy", "value_loss"], rows, run.hash))
    run.finish()
    return EXIT_OK


def cmd_eval(args, cfg: dict) -> int:
    path = args.checkpoint or cfg.get("checkpoint")
    if not path:
        raise ConfigError("eval: a checkpoint is required (--checkpoint or 'checkpoint' key)")
    loaded = ckpt.load(path, expect=Architecture())
    grid = cfg.get("grid", {})
    nn_values = _field(lambda: [int(x) for x in grid.get("nn", EVAL_NN)], "grid.nn")
    lambdas = _field(lambda: [float(x) for x in grid.get("lambda", EVAL_LAMBDAS)], "grid.lambda")
    channel = _field(lambda: ChannelModel.from_json(cfg.get("channel")), "channel")
    run = Run("eval", cfg, args.seed, args.out)
    rows = eval_grid(loaded["params"], loaded["arch"], args.seed, nn_values, lambdas,
                     int(cfg.get("replications", 25)), float(cfg.get("sim_duration_s", 0.5)), channel,
                     int(cfg.get("payload_bytes", 1000)), _cache(args, cfg, args.workers), args.workers,
                     trace_dir=args.out if args.trace else None)
    run.write("results.csv", csv_text(RESULT_FIELDS, [result_record(r) for r in rows], run.hash))
    run.finish()
    return EXIT_OK


ENUM_FIELDS = ["rank", "cs", "slot", "backoff", "cw_min", "rtscts", "rate", "config", "reward_mbps",
               "mean_throughput_mbps", "mean_delay_us"]


def cmd_enumerate(args, cfg: dict) -> int:
    scenario = scenario_from_config(cfg, args.seed)
    run = Run("enumerate", cfg, args.seed, args.out)
    rows = enumerate_actions(scenario, _cache(args, cfg, 1), workers=args.workers)
    recs = []
    for rank, r in enumerate(rows, 1):
        d = r.result.mean_delay
        recs.append([str(rank), *map(str, r.action), r.config.label(), repr(r.reward),
                     repr(r.result.mean_throughput), "" if d is None else repr(d)])
    run.write("enumerate.csv", csv_text(ENUM_FIELDS, recs, run.hash))
    run.finish()
    return EXIT_OK


def cmd_baseline(args, cfg: dict) -> int:
    scenario = scenario_from_config(cfg, args.seed)
    run = Run("baseline", cfg, args.seed, args.out)
    res = _cache(args, cfg, args.workers).get(scenario)
    row = ResultRow.from_eval("baseline", scenario, "baseline", LEGACY_BASELINE, res)
    run.write("baseline.csv", csv_text(RESULT_FIELDS, [result_record(row)], run.hash))
    if args.trace:
        write_traces(args.out, scenario, [("baseline", LEGACY_BASELINE)])
    run.finish()
    return EXIT_OK


def cmd_oracle(args, cfg: dict) -> int:
    b = cfg.get("bianchi", {})
    a = cfg.get("aloha", {})
    run = Run("oracle", cfg, args.seed, args.out)
    rows = []
    for rts in b.get("rts", [False, True]):
        for n in b.get("n", list(range(2, 31))):
            p = _field(lambda: BianchiParams(n=int(n), w=int(b.get("w", 16)), m=int(b.get("m", 6)),
                                             slot_us=float(b.get("slot_us", 9)),
                                             payload_bits=8 * int(b.get("payload_bytes", 1000)),
                                             data_rate=float(b.get("rate", 13.0)), rts_mode=bool(rts)),
                       "bianchi")
            res = bianchi_throughput(p)
            rows.append(["rts" if rts else "basic", str(n), repr(res.tau), repr(res.p),
                         repr(res.normalized), repr(res.throughput_bps / 1e6)])
    run.write("bianchi.csv", csv_text(["access", "n", "tau", "p", "normalized", "throughput_mbps"],
                                      rows, run.hash))
    g_values = a.get("g", [round(0.05 * i, 2) for i in range(0, 61)])
    rows = [[repr(float(g)), repr(aloha_throughput(float(g))), repr(aloha_throughput(float(g), True))]
            for g in g_values]
    run.write("aloha.csv", csv_text(["g", "pure", "slotted"], rows, run.hash))
    run.finish()
    return EXIT_OK


def cmd_report(args, cfg: dict) -> int:
    inputs = list(args.inputs or []) + list(cfg.get("inputs", []))
    records, digests = [], []
    for path in inputs:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"report input {path}: {exc}") from exc
        records += read_result_rows(text)
        digests.append(hashlib.sha256(text.encode()).hexdigest())
    identity = {**{k: v for k, v in cfg.items() if k != "inputs"}, "input_sha256": digests}
    run = Run("report", {**cfg, "inputs": inputs}, args.seed, args.out, identity)
    run.write("report.csv", csv_text(REPORT_FIELDS, aggregate(records), run.hash))
    run.finish()
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "enumerate": cmd_enumerate,
            "baseline": cmd_baseline, "oracle": cmd_oracle, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macforge", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("inputs", nargs="*", help="result CSVs (report only)")
    p.add_argument("--config", help="JSON config or scenario file")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--trace", action="store_true", help="dump the event trace of replication 0")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--checkpoint", help="checkpoint for eval")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed < 0 or args.seed >= 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ckpt.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except EvaluationAborted as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
