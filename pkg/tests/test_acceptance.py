"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary by conftest)
before asserting, so a failing criterion still reports its measured values.
"""
import json
import math
import time

import numpy as np
import pytest
from gradcheck import check, relu_masks
from oracles import brute_force_critical_paths, percentile_by_sorting, random_staged_trace, smo_svm, synthetic_2d
from scipy.stats import spearmanr

from firm.anomaly import CampaignParams
from firm.controller import PolicyParams, experiment_campaign, make_policy, run_experiment
from firm.extractor import SvmModel, congestion_intensity, extract_critical_path, relative_importance, svm_update
from firm.harness.cli import default_checkpoint, default_localizer, main
from firm.harness.localize import LocalizeConfig, run_localization
from firm.rl.ddpg import Batch, DdpgAgent, DdpgConfig
from firm.rl.pool import AgentPool, build_pool
from firm.rl.train import TrainConfig, moving_average, train
from firm.sim import builtin_scenario
from firm.trace import HappensBeforeStats, build_execution_graph, classify_graph

RESULTS: dict[int, str] = {}

# resource-limit changes cannot undo an injected per-call network delay, so the
# end-to-end comparison draws from the contention and load types only
MITIGABLE_TYPES = ["workload_variation", "cpu_util", "llc_bw_cap", "mem_bw", "io_bw", "net_bw"]
FINE_TUNE_EPISODES = 100
SHIPPED_EPISODES = 3000  # length of the run that produced the shipped chain6 agents
TRANSFER_EPISODES = 1000


def record(k: int, ok: bool, detail: str) -> None:
    RESULTS[k] = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[k])


def seq_pairs(hb):
    return {(a, b) for (a, b, _, _), (o, v) in hb.counts.items() if o >= 20 and v == 0}


# -- 1 ---------------------------------------------------------------------------------


def test_1_critical_path_oracle():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    matches = 0
    for _ in range(1000):
        spans, _, hb = random_staged_trace(rng, max_spans=12)
        optimal, _ = brute_force_critical_paths(spans, seq_pairs(hb))
        g = build_execution_graph(spans)
        got = frozenset(extract_critical_path(g, classify_graph(g, hb)).span_ids)
        matches += got in optimal
    dt = time.perf_counter() - t0
    ok = matches == 1000 and dt < 10
    record(1, ok, f"{matches}/1000 graphs match the brute-force chain oracle in {dt:.1f} s (bound 100%, < 10 s)")
    assert ok


# -- 2 ---------------------------------------------------------------------------------


def test_2_congestion_intensity_oracle():
    rng = np.random.default_rng(2)
    exact = 0
    for _ in range(10_000):
        n = int(rng.integers(2, 400))
        samples = rng.lognormal(8, 1, n).round().astype(int) + 1
        exact += congestion_intensity(samples) == percentile_by_sorting(samples, 99) / percentile_by_sorting(samples, 50)
    ok = exact == 10_000
    record(2, ok, f"{exact}/10000 sample sets equal the sort-based p99/p50 exactly")
    assert ok


# -- 3 ---------------------------------------------------------------------------------


def test_3_relative_importance_identity():
    rng = np.random.default_rng(3)
    worst_sum = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 8))
        parts = rng.gamma(2.0, rng.uniform(0.5, 5, size=(k, 1)), size=(k, int(rng.integers(20, 200))))
        total = parts.sum(axis=0)
        worst_sum = max(worst_sum, abs(sum(relative_importance(p, total, "variance_explained") for p in parts) - 1))
    worst_pcc = 0.0
    for _ in range(100):
        t = rng.normal(rng.uniform(1, 1e4), rng.uniform(0.1, 1e3), int(rng.integers(2, 200)))
        worst_pcc = max(worst_pcc, abs(relative_importance(t, t, "pcc") - 1))
    ok = worst_sum <= 1e-6 and worst_pcc <= 1e-12
    record(3, ok, f"max |sum RI - 1| = {worst_sum:.1e} (bound 1e-6), max |RI(T,T) - 1| = {worst_pcc:.1e} (bound 1e-12)")
    assert ok


# -- 4 ---------------------------------------------------------------------------------


def test_4_rff_svm_agrees_with_exact_kernel_svm():
    t0 = time.perf_counter()
    agreements = []
    for seed in range(5):
        x, y = synthetic_2d(seed, n=500)
        tr, te = slice(0, 350), slice(350, 500)
        mu, sd = x[tr].mean(0), x[tr].std(0, ddof=1)
        exact = smo_svm((x[tr] - mu) / sd, y[tr], c=1 / (1e-4 * 350), gamma=1.0)
        m = SvmModel.init(np.random.default_rng(100 + seed))
        rng = np.random.default_rng(200 + seed)
        for _ in range(30):
            for i in rng.permutation(350):
                svm_update(m, *x[i], y[i] > 0)
        ours = np.array([m.decision(*p) > 0 for p in x[te]])
        agreements.append(float(np.mean(ours == (exact((x[te] - mu) / sd) > 0))))
    dt = time.perf_counter() - t0
    ok = min(agreements) >= 0.9 and dt < 60
    record(4, ok, f"held-out agreement {[round(a, 3) for a in agreements]} in {dt:.1f} s (bound >= 0.9 each, < 60 s)")
    assert ok


# -- 5 ---------------------------------------------------------------------------------


def test_5_gradient_checks():
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(500 + seed)
        agent = DdpgAgent(DdpgConfig(final_scale=1.0), np.random.default_rng(seed))
        batch = Batch(rng.uniform(0, 1, (16, 8)), rng.uniform(-1, 1, (16, 5)), rng.uniform(0, 5, 16),
                      rng.uniform(0, 1, (16, 8)))
        y = agent.critic_targets(batch)
        _, g = agent.critic_loss_grads(batch, y)
        x = np.hstack([batch.s, batch.a])
        rel, _, _, _ = check(lambda: agent.critic_loss_grads(batch, y)[0], agent.critic.params(), g,
                             lambda: relu_masks(agent.critic, x))
        worst = max(worst, rel)

        def masks():
            a = agent.actor(batch.s)
            return relu_masks(agent.actor, batch.s) + relu_masks(agent.critic, np.hstack([batch.s, a]))

        _, g = agent.actor_objective_grads(batch)
        rel, _, _, _ = check(lambda: agent.actor_objective_grads(batch)[0], agent.actor.params(), g, masks)
        worst = max(worst, rel)
    ok = worst < 1e-5
    record(5, ok, f"max relative error {worst:.1e} over actor and critic, 3 seeds (bound < 1e-5)")
    assert ok


# -- 6 ---------------------------------------------------------------------------------


def test_6_ddpg_sanity(chain6):
    t0 = time.perf_counter()
    agent = DdpgAgent(DdpgConfig(gamma=0.0), np.random.default_rng(6))
    rng = np.random.default_rng(7)
    b = Batch(rng.uniform(0, 1, (64, 8)), rng.uniform(-1, 1, (64, 5)), np.full(64, 2.5), rng.uniform(0, 1, (64, 8)))
    steps_needed = None
    for k in range(1, 5001):
        loss, _ = agent.update(b)
        if loss < 1e-3:
            steps_needed = k
            break
    mse_ok = steps_needed is not None

    pool = AgentPool("one-for-all", list(chain6.services), DdpgConfig(), 0)
    logs = train(chain6, pool, 2000, 0, TrainConfig())
    rewards = np.array([log.total_reward for log in logs])
    rho = spearmanr(np.arange(len(rewards)), moving_average(rewards)).statistic
    dt = time.perf_counter() - t0
    ok = mse_ok and rho > 0.6 and dt < 20 * 60
    record(6, ok, f"critic MSE < 1e-3 after {steps_needed or '> 5000'} steps (bound 5000); "
                  f"Spearman(MA reward, episode) = {rho:.3f} over 2000 episodes (bound > 0.6); {dt / 60:.1f} min")
    assert ok


# -- 7 ---------------------------------------------------------------------------------


def test_7_localization_accuracy():
    t0 = time.perf_counter()
    mixed15 = builtin_scenario("mixed15")
    single = run_localization(mixed15, 0, "single", LocalizeConfig(train_horizon=1200, eval_horizon=2700))
    multi = run_localization(mixed15, 0, "multi", LocalizeConfig(train_horizon=1200, eval_horizon=600))
    dt = time.perf_counter() - t0
    tpr = single.roc.best_tpr(0.2)
    ok = single.injections >= 200 and tpr >= 0.9 and multi.accuracy >= 0.85 and dt < 15 * 60
    record(7, ok, f"single: {single.injections} injections, TPR {tpr:.3f} at FPR <= 0.2 (bound 0.9), "
                  f"AUC {single.roc.auc:.3f}; multi: accuracy {multi.accuracy:.3f} (bound 0.85); {dt / 60:.1f} min")
    assert ok


# -- 8 ---------------------------------------------------------------------------------


def test_8_end_to_end(chain6):
    t0 = time.perf_counter()
    pool = build_pool("one-for-all", list(chain6.services), DdpgConfig(), 0, default_checkpoint(chain6))
    train(chain6, pool, FINE_TUNE_EPISODES, 1000, TrainConfig(campaign={"types": MITIGABLE_TYPES}),
          start_episode=SHIPPED_EPISODES)
    svm = SvmModel.load(default_localizer(chain6))
    params = CampaignParams.from_dict({"types": MITIGABLE_TYPES})
    totals = {}
    for name in ("firm", "k8s", "aimd"):
        viol, mit, cpu = 0, [], 0.0
        for seed in range(10):
            policy = make_policy(name, chain6, PolicyParams.from_dict(chain6.raw.get("policy")), pool, svm)
            res = run_experiment(chain6, policy, seed, 300, experiment_campaign(chain6, seed, 300, params))
            viol += res.violation_steps
            mit += res.mitigation_times()
            cpu += res.requested_cpu
        totals[name] = (viol, float(np.mean(mit)) if mit else math.nan, cpu)
    dt = time.perf_counter() - t0
    f, k, a = totals["firm"], totals["k8s"], totals["aimd"]
    ok_a = 2 * f[0] <= k[0]
    ok_b = f[1] < k[1] and f[1] < a[1]
    ok_c = f[2] <= k[2]
    ok = ok_a and ok_b and ok_c and dt < 30 * 60
    fmt = lambda t: f"{t[0]} violating steps, {t[1]:.2f} s mitigation, {t[2]:.0f} CPU-s"  # noqa: E731
    record(8, ok, f"firm {fmt(f)} | k8s {fmt(k)} | aimd {fmt(a)}; "
                  f"(a) {'ok' if ok_a else 'no'} (b) {'ok' if ok_b else 'no'} (c) {'ok' if ok_c else 'no'}; "
                  f"{dt / 60:.1f} min")
    assert ok


# -- 9 ---------------------------------------------------------------------------------


def test_9_transfer_learning(chain6):
    services = list(chain6.services)
    cfg = TrainConfig()
    each = AgentPool("one-for-each", services, DdpgConfig(), 9)
    ma_each = moving_average([log.total_reward for log in train(chain6, each, TRANSFER_EPISODES, 9, cfg)])
    target = ma_each[-1]
    transfer = build_pool("transfer", services, DdpgConfig(), 9, default_checkpoint(chain6))
    ma_tr = moving_average([log.total_reward for log in train(chain6, transfer, TRANSFER_EPISODES, 9, cfg)])
    within = np.flatnonzero(np.abs(ma_tr - target) <= 0.1 * abs(target))
    reached = int(within[0]) + 1 if len(within) else None
    ok = reached is not None and reached <= TRANSFER_EPISODES // 2
    record(9, ok, f"one-for-each final MA {target:.2f} after {TRANSFER_EPISODES} episodes; transfer within 10% "
                  f"after {reached or 'never'} episodes (bound {TRANSFER_EPISODES // 2})")
    assert ok


# -- 10 --------------------------------------------------------------------------------


RERUNS = [
    ["simulate", "--scenario", "chain6", "--seed", "5", "--horizon", "30", "--policy", "aimd"],
    ["evaluate", "--scenario", "chain6", "--seed", "5", "--horizon", "30", "--policy", "firm", "--seeds", "2"],
    ["compare", "--scenario", "chain6", "--seed", "5", "--horizon", "30", "--policies", "none,k8s"],
    ["train", "--scenario", "chain6", "--seed", "5", "--episodes", "3"],
]


@pytest.mark.parametrize("args", RERUNS, ids=[a[0] for a in RERUNS])
def test_10_determinism(tmp_path, args):
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(args + ["--out", str(out)]) for out in outs]
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    data_files = [p for p in files if p.suffix in (".csv", ".jsonl", ".json")]
    same = [p for p in data_files if (outs[0] / p).read_bytes() == (outs[1] / p).read_bytes()]
    ok = codes == [0, 0] and len(data_files) > 0 and len(same) == len(data_files)
    prior = RESULTS.get(10, "")
    passed = ok and "FAIL" not in prior
    detail = (prior.split("  ", 1)[1] + "; " if prior else "") + f"{args[0]}: exit {codes}, {len(same)}/{len(data_files)} identical"
    record(10, passed, detail)
    assert ok, json.dumps([str(p) for p in data_files if p not in same])
