"""Command-line experiment runner: firm {simulate,train,evaluate,localize-eval,compare}."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

from firm.anomaly import Campaign, CampaignParams
from firm.controller.experiment import ExperimentResult, experiment_campaign, make_policy, run_experiment
from firm.controller.policies import POLICY_NAMES, PolicyParams
from firm.extractor import SvmModel
from firm.harness.localize import LOCALIZE_MODES, LocalizeConfig, run_localization, train_localizer
from firm.harness.metrics import latency_cdf
from firm.rl.ddpg import DdpgConfig
from firm.rl.pool import AGENT_MODES, AgentPool, build_pool
from firm.rl.train import TrainConfig, train
from firm.sim import ConfigError, Scenario, load_scenario
from firm.sim.telemetry import TelemetryWriter

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
CONFIG_SECTIONS = ("campaign", "policy", "train", "agent", "localize")


class UsageError(Exception):
    """Bad flags or config; reported with exit code 2."""


@dataclass
class ExperimentConfig:
    command: str
    scenario: str
    seed: int
    policy: str = "none"
    agent_mode: str = "one-for-all"
    episodes: int = 1
    horizon: int = 300
    seeds: int = 1
    checkpoint: str | None = None
    localizer: str | None = None
    campaign: str | None = None
    policies: list[str] = field(default_factory=list)
    mode: str = "both"
    sections: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.episodes < 1:
            raise UsageError("--episodes must be >= 1")
        if self.horizon < 1:
            raise UsageError("--horizon must be >= 1")
        if self.seeds < 1:
            raise UsageError("--seeds must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if self.policy not in POLICY_NAMES:
            raise UsageError(f"--policy must be one of {POLICY_NAMES}")
        if self.agent_mode not in AGENT_MODES:
            raise UsageError(f"--agent-mode must be one of {AGENT_MODES}")
        bad = [p for p in self.policies if p not in POLICY_NAMES]
        if bad:
            raise UsageError(f"unknown policies {bad}; choose from {POLICY_NAMES}")
        unknown = set(self.sections) - set(CONFIG_SECTIONS)
        if unknown:
            raise UsageError(f"unknown config sections {sorted(unknown)}; known: {list(CONFIG_SECTIONS)}")

    def canonical(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- shipped artifacts ---------------------------------------------------------------


def shipped_path(name: str) -> Path | None:
    p = importlib_resources.files("firm.data").joinpath(name)
    return Path(str(p)) if p.is_file() else None


def default_checkpoint(scenario: Scenario) -> Path | None:
    return shipped_path(f"{scenario.name}_agents.json")


def default_localizer(scenario: Scenario) -> Path | None:
    return shipped_path(f"{scenario.name}_svm.json")


# -- config loading ------------------------------------------------------------------


def read_json(path: str, what: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(path, f"cannot read {what}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None


def section(cfg: ExperimentConfig, scenario: Scenario, name: str) -> dict:
    """Command-line config overrides the scenario's own section of the same name."""
    base = scenario.raw.get(name, {}) if name == "policy" else {}
    return {**base, **cfg.sections.get(name, {})}


def campaign_params(cfg: ExperimentConfig) -> CampaignParams:
    try:
        return CampaignParams.from_dict(cfg.sections.get("campaign"))
    except (ValueError, TypeError) as exc:
        raise ConfigError("campaign", str(exc)) from None


def fixed_campaign(cfg: ExperimentConfig) -> Campaign | None:
    """A campaign file holds either a list of scheduled injections or an object of generator settings."""
    if cfg.campaign is None:
        return None
    d = read_json(cfg.campaign, "campaign")
    if isinstance(d, list):
        try:
            return Campaign.load(cfg.campaign, campaign_params(cfg), cfg.seed)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(cfg.campaign, f"bad campaign: {exc}") from None
    return None


def campaign_for(cfg: ExperimentConfig, scenario: Scenario, seed: int) -> Campaign:
    fixed = fixed_campaign(cfg)
    if fixed is not None:
        return fixed
    return experiment_campaign(scenario, seed, cfg.horizon, campaign_params(cfg))


def resolve_sections(cfg: ExperimentConfig) -> None:
    """Merge a --campaign generator-settings file into the campaign section."""
    if cfg.campaign is None:
        return
    d = read_json(cfg.campaign, "campaign")
    if isinstance(d, dict):
        cfg.sections = {**cfg.sections, "campaign": {**cfg.sections.get("campaign", {}), **d}}
    elif not isinstance(d, list):
        raise ConfigError(cfg.campaign, "campaign file must hold a list of injections or an object of settings")


# -- output helpers ------------------------------------------------------------------


def finite_json(obj):
    """Non-finite floats become the strings "inf", "-inf" or "n/a" so the output stays strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "n/a" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: finite_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [finite_json(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(finite_json(obj), sort_keys=True, indent=2, allow_nan=False) + "\n")


def write_manifest(out: Path, cfg: ExperimentConfig, files: list[str]) -> None:
    write_json(out / "manifest.json", {"config": cfg.canonical(), "config_hash": cfg.digest(),
                                       "files": sorted(files)})


def write_cdf(path: Path, latencies: dict[str, list[float]]) -> None:
    with open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["request_type", "probability", "latency_us"])
        for rt in sorted(latencies):
            if not latencies[rt]:
                continue
            for q, v in latency_cdf(latencies[rt]):
                w.writerow([rt, repr(float(q)), repr(float(v))])


# -- policies ------------------------------------------------------------------------


def load_pool(cfg: ExperimentConfig, scenario: Scenario) -> AgentPool:
    ckpt = cfg.checkpoint or default_checkpoint(scenario)
    if ckpt is None:
        raise ConfigError("--checkpoint", f"no trained agents shipped for {scenario.name!r}; pass --checkpoint")
    agent_cfg = DdpgConfig.from_dict(section(cfg, scenario, "agent"))
    return build_pool(cfg.agent_mode, list(scenario.services), agent_cfg, cfg.seed, ckpt)


def load_localizer(cfg: ExperimentConfig, scenario: Scenario) -> SvmModel:
    path = cfg.localizer or default_localizer(scenario)
    if path is not None:
        return SvmModel.load(path)
    return train_localizer(scenario, cfg.seed, LocalizeConfig.from_dict(section(cfg, scenario, "localize")))


def build_policy(name: str, cfg: ExperimentConfig, scenario: Scenario, pool=None, svm=None):
    params = PolicyParams.from_dict(section(cfg, scenario, "policy"))
    if name == "firm":
        pool = pool or load_pool(cfg, scenario)
        svm = svm or load_localizer(cfg, scenario)
    window = LocalizeConfig.from_dict(section(cfg, scenario, "localize")).window_s
    return make_policy(name, scenario, params, pool, svm, window)


def run_one(cfg: ExperimentConfig, policy_name: str, seed: int) -> ExperimentResult:
    scenario = load_scenario(cfg.scenario)
    policy = build_policy(policy_name, cfg, scenario)
    return run_experiment(scenario, policy, seed, cfg.horizon, campaign_for(cfg, scenario, seed))


def run_many(cfg: ExperimentConfig, jobs: list[tuple[str, int]], workers: int) -> list[ExperimentResult]:
    """Independent (policy, seed) runs, optionally in parallel; results keep job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [run_one(cfg, p, s) for p, s in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(run_one, cfg, p, s) for p, s in jobs]
        return [f.result() for f in futs]


def aggregate(results: list[ExperimentResult], request_types) -> dict:
    """Per-policy numbers pooled over seeds."""
    lat = {rt: [x for r in results for x in r.latencies.get(rt, [])] for rt in request_types}
    steps = sum(len(r.steps) for r in results)
    mit = [d for r in results for d in r.mitigation_times()]
    out = {
        "seeds": [r.seed for r in results],
        "violation_steps": sum(r.violation_steps for r in results),
        "violation_rate": sum(r.violation_steps for r in results) / steps if steps else 0.0,
        "mean_mitigation_s": sum(mit) / len(mit) if mit else 0.0,
        "violation_episodes": len(mit),
        "requested_cpu_s": sum(r.requested_cpu for r in results),
        "dropped": sum(r.dropped for r in results),
    }
    for rt in sorted(lat):
        out[f"p99_us:{rt}"] = latency_cdf(lat[rt], (0.99,))[0][1] if lat[rt] else None
    return out


# -- commands ------------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, out: Path, jobs: int) -> None:
    scenario = load_scenario(cfg.scenario)
    campaign = campaign_for(cfg, scenario, cfg.seed)
    policy = build_policy(cfg.policy, cfg, scenario)
    files = ["traces.jsonl", "telemetry.csv", "steps.csv", "campaign.json", "summary.json"]
    with open(out / "telemetry.csv", "w") as tfh, open(out / "traces.jsonl", "w") as sfh:
        result = run_experiment(scenario, policy, cfg.seed, cfg.horizon, campaign, TelemetryWriter(tfh), sfh)
    (out / "campaign.json").write_text(campaign.to_json() + "\n")
    with open(out / "steps.csv", "w") as fh:
        result.write_steps(fh)
    write_json(out / "summary.json", {**result.summary(), "config_hash": cfg.digest()})
    write_manifest(out, cfg, files)


def cmd_train(cfg: ExperimentConfig, out: Path, jobs: int) -> None:
    scenario = load_scenario(cfg.scenario)
    agent_cfg = DdpgConfig.from_dict(section(cfg, scenario, "agent"))
    try:
        tcfg = TrainConfig.from_dict({"campaign": section(cfg, scenario, "campaign"), **section(cfg, scenario, "train")})
    except (ValueError, TypeError) as exc:
        raise ConfigError("train", str(exc)) from None
    pool = build_pool(cfg.agent_mode, list(scenario.services), agent_cfg, cfg.seed, cfg.checkpoint)
    params = PolicyParams.from_dict(section(cfg, scenario, "policy")).firm
    with open(out / "train_log.csv", "w") as fh:
        train(scenario, pool, cfg.episodes, cfg.seed, tcfg, params, log_fh=fh)
    pool.save(out / "checkpoint.json")
    write_manifest(out, cfg, ["checkpoint.json", "train_log.csv"])


def _write_policy_outputs(out: Path, name: str, results: list[ExperimentResult], scenario: Scenario,
                          cfg: ExperimentConfig) -> dict:
    pdir = out / name
    pdir.mkdir(exist_ok=True)
    for r in results:
        with open(pdir / f"steps_seed{r.seed}.csv", "w") as fh:
            r.write_steps(fh)
        with open(pdir / f"mitigations_seed{r.seed}.jsonl", "w") as fh:
            r.write_mitigations(fh)
        write_json(pdir / f"summary_seed{r.seed}.json", {**r.summary(), "config_hash": cfg.digest()})
    lat = {rt: [x for r in results for x in r.latencies.get(rt, [])] for rt in scenario.request_types}
    write_cdf(pdir / "latency_cdf.csv", lat)
    agg = {"policy": name, **aggregate(results, scenario.request_types), "config_hash": cfg.digest()}
    write_json(pdir / "summary.json", agg)
    return agg


def cmd_evaluate(cfg: ExperimentConfig, out: Path, jobs: int) -> None:
    scenario = load_scenario(cfg.scenario)
    seeds = [cfg.seed + k for k in range(cfg.seeds)]
    if cfg.policy == "firm":
        build_policy("firm", cfg, scenario)  # fail fast on missing artifacts
    results = run_many(cfg, [(cfg.policy, s) for s in seeds], jobs)
    _write_policy_outputs(out, cfg.policy, results, scenario, cfg)
    write_manifest(out, cfg, [str(p.relative_to(out)) for p in (out / cfg.policy).iterdir()])


COMPARE_COLUMNS = ["policy", "seeds", "violation_steps", "violation_rate", "mean_mitigation_s", "violation_episodes",
                   "requested_cpu_s", "dropped"]


def cmd_compare(cfg: ExperimentConfig, out: Path, jobs: int) -> None:
    scenario = load_scenario(cfg.scenario)
    policies = cfg.policies or ["firm", "aimd", "k8s"]
    seeds = [cfg.seed + k for k in range(cfg.seeds)]
    if "firm" in policies:
        build_policy("firm", cfg, scenario)
    results = run_many(cfg, [(p, s) for p in policies for s in seeds], jobs)
    rows = []
    for k, name in enumerate(policies):
        rows.append(_write_policy_outputs(out, name, results[k * len(seeds):(k + 1) * len(seeds)], scenario, cfg))
    p99 = [f"p99_us:{rt}" for rt in sorted(scenario.request_types)]
    with open(out / "compare.csv", "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS + p99 + ["config_hash"])
        for row in rows:
            vals = [";".join(map(str, row["seeds"])) if c == "seeds" else row[c] for c in COMPARE_COLUMNS + p99]
            w.writerow([repr(v) if isinstance(v, float) else v for v in vals] + [cfg.digest()])
    files = ["compare.csv"] + [f"{p}/{f.name}" for p in policies for f in (out / p).iterdir()]
    write_manifest(out, cfg, files)


def cmd_localize(cfg: ExperimentConfig, out: Path, jobs: int) -> None:
    scenario = load_scenario(cfg.scenario)
    lcfg = LocalizeConfig.from_dict({**section(cfg, scenario, "localize")})
    if "campaign" in cfg.sections:
        lcfg.campaign = {**lcfg.campaign, **cfg.sections["campaign"]}
    modes = list(LOCALIZE_MODES) if cfg.mode == "both" else [cfg.mode]
    fixed = fixed_campaign(cfg)
    model = SvmModel.load(cfg.localizer) if cfg.localizer else None
    summaries, files = {}, []
    for mode in modes:
        res = run_localization(scenario, cfg.seed, mode, lcfg, fixed, model)
        with open(out / f"roc_{mode}.csv", "w") as fh:
            res.write_sweep(fh)
        with open(out / f"candidates_{mode}.jsonl", "w") as fh:
            res.write_candidates(fh)
        summaries[mode] = res.summary()
        files += [f"roc_{mode}.csv", f"candidates_{mode}.jsonl"]
    write_json(out / "summary.json", {"modes": summaries, "config_hash": cfg.digest()})
    write_manifest(out, cfg, files + ["summary.json"])


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate, "localize-eval": cmd_localize,
            "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="firm", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="scenario JSON path or built-in name (chain6, fanout10, mixed15)")
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--horizon", type=int, default=300, help="seconds of simulated time")
        p.add_argument("--campaign", help="campaign JSON: scheduled injections or generator settings")
        p.add_argument("--config", help="JSON with optional sections " + ", ".join(CONFIG_SECTIONS))
        p.add_argument("--jobs", type=int, default=1, help="parallel seeds")
        p.add_argument("--checkpoint", help="agent checkpoint (defaults to the shipped one for the scenario)")
        p.add_argument("--localizer", help="localization model JSON")
        p.add_argument("--agent-mode", default="one-for-all", choices=AGENT_MODES)
        if name in ("simulate", "evaluate"):
            p.add_argument("--policy", default="none" if name == "simulate" else "firm", choices=POLICY_NAMES)
        if name in ("evaluate", "compare"):
            p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds from --seed")
        if name == "compare":
            p.add_argument("--policies", default="firm,aimd,k8s", help="comma-separated policy list")
        if name == "train":
            p.add_argument("--episodes", type=int, required=True)
        if name == "localize-eval":
            p.add_argument("--mode", default="both", choices=list(LOCALIZE_MODES) + ["both"])
    return ap


def config_from_args(args) -> ExperimentConfig:
    sections = {}
    if args.config:
        sections = read_json(args.config, "config")
        if not isinstance(sections, dict):
            raise ConfigError(args.config, "config must be a JSON object")
    cfg = ExperimentConfig(
        command=args.command,
        scenario=args.scenario,
        seed=args.seed,
        policy=getattr(args, "policy", "none"),
        agent_mode=args.agent_mode,
        episodes=getattr(args, "episodes", 1),
        horizon=args.horizon,
        seeds=getattr(args, "seeds", 1),
        checkpoint=args.checkpoint,
        localizer=args.localizer,
        campaign=args.campaign,
        policies=[p for p in getattr(args, "policies", "").split(",") if p],
        mode=getattr(args, "mode", "both"),
        sections=sections,
    )
    resolve_sections(cfg)
    return cfg


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = config_from_args(args)
        load_scenario(cfg.scenario)
        PolicyParams.from_dict(section(cfg, load_scenario(cfg.scenario), "policy"))
        campaign_params(cfg)
    except (ConfigError, UsageError, ValueError, TypeError) as exc:
        print(f"firm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[cfg.command](cfg, out, max(1, args.jobs))
    except ConfigError as exc:
        print(f"firm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"firm: {cfg.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
