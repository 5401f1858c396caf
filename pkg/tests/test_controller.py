import io
import json
from importlib import resources as importlib_resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from firm.anomaly import US_PER_S, AnomalyInjection, AnomalyType, Campaign, CampaignParams
from firm.controller import (
    AimdController,
    AimdParams,
    FirmParams,
    K8sAutoscaler,
    K8sParams,
    NoPolicy,
    experiment_campaign,
    make_policy,
    mitigation_time,
    run_experiment,
)
from firm.controller.mitigation import MitigationEpisodeRecord, MitigationTracker, mitigation_episodes
from firm.controller.policies import PolicyParams, firm_actions
from firm.extractor import SvmModel
from firm.resources import NUM_RESOURCES, ResourceKind, ResourceLimits
from firm.sim import ScaleIn, ScaleOut, SetLimit, Simulator, builtin_scenario
from firm.sim.cluster import StepResult
from firm.sim.telemetry import InstanceTelemetry, TelemetrySnapshot, TelemetryWriter

RAISE_CPU = np.array([0.5, -0.579, -0.579, -0.579, -0.579])  # CPU to ~3.06, the rest near 0.25


@pytest.fixture(scope="module")
def chain6_svm():
    path = importlib_resources.files("firm.data").joinpath("chain6_svm.json")
    return SvmModel.load(str(path))


class ConstAgent:
    epsilon = 0.0

    def __init__(self, raw):
        self.raw = np.asarray(raw, dtype=float)
        self.calls = 0

    def select_action(self, state, explore=False):
        self.calls += 1
        return self.raw.copy()


class ConstPool:
    def __init__(self, raw):
        self.agent = ConstAgent(raw)

    def agent_for(self, service_id):
        return self.agent


# -- fakes for the baseline policies ------------------------------------------------


class FakeInstance:
    def __init__(self, limits, replicas=1):
        self.limits = limits
        self.replicas = replicas
        self.queue = []
        self.workers = 1
        self.service_id = "A"


class FakeSim:
    def __init__(self, limits):
        self.instances = {"A-0": FakeInstance(limits)}
        self.log = []

    def execute_action(self, iid, action):
        self.log.append((iid, action))
        inst = self.instances[iid]
        if isinstance(action, SetLimit):
            inst.limits.set(int(action.resource), action.value)
        elif isinstance(action, ScaleOut):
            inst.replicas += 1
        elif isinstance(action, ScaleIn):
            inst.replicas -= 1


SLOS = {"r": (1000.0, 99.0)}


def fake_step(sim, t, violated, util=None, cpu_util=0.0):
    inst = sim.instances["A-0"]
    inst.queue = [object()] if violated else []  # backlog makes the instance blamed
    u = np.zeros(NUM_RESOURCES) if util is None else np.asarray(util, dtype=float)
    u[ResourceKind.CPU] = cpu_util * inst.limits.limit[ResourceKind.CPU]
    it = InstanceTelemetry("A-0", "A", u, inst.limits.limit.copy(), inst.limits.lower, inst.limits.upper,
                           inst.replicas, 10.0)
    tel = TelemetrySnapshot(t, {"A-0": it}, 10.0, {"r": 1.0}, {"r": [10**6 if violated else 10]}, {"r": 0})
    return StepResult(tel, [], set())


def default_limits():
    return ResourceLimits([2.0, 0.25, 0.25, 0.25, 0.25], [0.25, 0.05, 0.05, 0.05, 0.05], [4.0, 1.0, 1.0, 1.0, 1.0])


# -- FIRM -----------------------------------------------------------------------------


def test_firm_no_violation_no_actions(chain6, chain6_svm):
    pool = ConstPool(RAISE_CPU)
    policy = make_policy("firm", chain6, pool=pool, svm=chain6_svm)
    res = run_experiment(chain6, policy, 0, 60, Campaign(0, []))
    assert res.violation_steps == 0
    assert all(not s.actions for s in res.steps)
    assert pool.agent.calls == 0


def test_firm_single_cpu_anomaly_localized_and_mitigated(chain6, chain6_svm):
    camp = Campaign(0, [AnomalyInjection("V-0", AnomalyType.CPU_UTIL, 0.9, 30 * US_PER_S, 60 * US_PER_S)])
    base = run_experiment(chain6, NoPolicy(), 0, 120, camp)
    assert base.violation_steps >= 40  # the anomaly alone keeps the SLO broken
    res = run_experiment(chain6, make_policy("firm", chain6, pool=ConstPool(RAISE_CPU), svm=chain6_svm), 0, 120, camp)
    first = next(s for s in res.steps if s.actions)
    assert "V-0" in first.predicted
    cpu_sets = [a for i, a in first.actions if i == "V-0" and a.startswith("set:cpu=")]
    new_cpu = float(cpu_sets[0].split("=")[1])
    assert 2.0 < new_cpu <= 4.0
    assert res.violation_steps < base.violation_steps / 4
    assert res.mitigations and all(m.mitigated_at is not None for m in res.mitigations)
    assert res.mitigations[0].mitigated_at - res.mitigations[0].violation_start == res.mitigation_times()[0]


def test_firm_overflow_becomes_scale_out_only(chain6):
    sim = Simulator(chain6, 0)
    sim.step()
    raw = np.ones(NUM_RESOURCES)  # every resource at its upper bound; the node cannot grant all of them
    acts = firm_actions(sim, "V-0", raw, 0, FirmParams())
    assert acts == [ScaleOut()]


def test_firm_scale_in_needs_floor_and_streak(chain6):
    sim = Simulator(chain6, 0)
    sim.execute_action("V-0", ScaleOut())
    sim.step()
    raw = np.array([-1.0, -0.9, -0.9, -0.9, -0.9])
    assert firm_actions(sim, "V-0", raw, 10, FirmParams()) == [ScaleIn()]
    assert all(isinstance(a, SetLimit) for a in firm_actions(sim, "V-0", raw, 9, FirmParams()))
    raised = np.array([-0.99, -0.9, -0.9, -0.9, -0.9])
    assert all(isinstance(a, SetLimit) for a in firm_actions(sim, "V-0", raised, 10, FirmParams()))


def test_firm_acts_only_on_extractor_culprits(chain6, chain6_svm):
    camp = experiment_campaign(chain6, 3, 120, CampaignParams())
    res = run_experiment(chain6, make_policy("firm", chain6, pool=ConstPool(RAISE_CPU), svm=chain6_svm), 3, 120, camp)
    assert any(s.actions for s in res.steps)
    for s in res.steps:
        assert {i for i, _ in s.actions} <= set(s.predicted)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=5, max_size=5), st.integers(0, 20), st.integers(0, 3))
def test_safety_limits_stay_in_bounds(raw, streak, outs):
    sc = builtin_scenario("chain6")
    sim = Simulator(sc, 1)
    for _ in range(outs):
        sim.execute_action("T-0", ScaleOut())
    sim.step()
    for a in firm_actions(sim, "T-0", np.array(raw), streak, FirmParams()):
        sim.execute_action("T-0", a)
    sim.step()
    inst = sim.instances["T-0"]
    lim = inst.limits
    assert np.all(lim.limit >= lim.lower - 1e-12) and np.all(lim.limit <= lim.upper + 1e-12)
    assert inst.replicas >= 1


# -- K8s ------------------------------------------------------------------------------


def test_k8s_at_target_keeps_replicas():
    k = K8sAutoscaler(K8sParams())
    assert k.desired(3, 0.5) == 3


def test_k8s_formula():
    k = K8sAutoscaler(K8sParams())
    assert k.desired(2, 1.0) == 4
    assert k.desired(8, 1.0) == 8  # capped at max replicas
    assert k.desired(1, 0.0) == 1


def test_k8s_cooldown():
    sim = FakeSim(default_limits())
    k = K8sAutoscaler(K8sParams(cooldown_s=30))
    k.step(sim, fake_step(sim, 0, False, cpu_util=1.0), None)
    assert sim.instances["A-0"].replicas == 2
    for t in range(1, 30):
        k.step(sim, fake_step(sim, t, False, cpu_util=1.0), None)
    assert sim.instances["A-0"].replicas == 2
    k.step(sim, fake_step(sim, 30, False, cpu_util=1.0), None)
    assert sim.instances["A-0"].replicas == 4
    assert all(not isinstance(a, SetLimit) for _, a in sim.log)


def test_k8s_ignores_memory_bandwidth_anomaly(chain6):
    camp = Campaign(0, [AnomalyInjection("U-0", AnomalyType.MEM_BW, 0.9, 30 * US_PER_S, 40 * US_PER_S)])
    res = run_experiment(chain6, make_policy("k8s", chain6), 0, 90, camp)
    assert res.violation_steps > 20
    assert not any(a for s in res.steps[25:75] for i, a in s.actions if i == "U-0")


# -- AIMD -----------------------------------------------------------------------------


def aimd_absolute():
    return AimdController(AimdParams(a_inc=0.1, relative=False, beta=0.8, hold_s=10, low_util=0.5), SLOS)


def test_aimd_sustained_violation_climbs_to_upper():
    sim = FakeSim(default_limits())
    ctl = aimd_absolute()
    seq = []
    for t in range(10):
        ctl.step(sim, fake_step(sim, t, True), None)
        seq.append(float(sim.instances["A-0"].limits.limit[ResourceKind.MEMBW]))
    assert seq[:3] == pytest.approx([0.35, 0.45, 0.55])
    assert seq[-1] == pytest.approx(1.0) and max(seq) <= 1.0
    cpu = float(sim.instances["A-0"].limits.limit[ResourceKind.CPU])
    assert cpu == pytest.approx(3.0)


def test_aimd_quiet_decays_geometrically_to_lower():
    sim = FakeSim(default_limits())
    ctl = aimd_absolute()
    vals = []
    for t in range(40):
        ctl.step(sim, fake_step(sim, t, False), None)
        vals.append(float(sim.instances["A-0"].limits.limit[ResourceKind.MEMBW]))
    assert vals[:9] == [0.25] * 9
    assert vals[9] == pytest.approx(0.2)
    assert vals[10] == pytest.approx(0.16)
    assert vals[-1] == pytest.approx(0.05)


def test_aimd_sawtooth_matches_hand_sequence():
    sim = FakeSim(default_limits())
    ctl = aimd_absolute()
    pattern = [True] * 3 + [False] * 12 + [True] + [False] * 11
    got = []
    for t, v in enumerate(pattern):
        ctl.step(sim, fake_step(sim, t, v), None)
        got.append(float(sim.instances["A-0"].limits.limit[ResourceKind.MEMBW]))
    want, x, quiet = [], 0.25, 0
    for v in pattern:
        if v:
            x, quiet = min(1.0, x + 0.1), 0
        else:
            quiet += 1
            if quiet >= 10:
                x = max(0.05, x * 0.8)
        want.append(x)
    assert got == pytest.approx(want)
    assert want[14] == pytest.approx(0.55 * 0.8**3)


def test_aimd_relative_increment_scales_with_span():
    sim = FakeSim(default_limits())
    ctl = AimdController(AimdParams(), SLOS)
    ctl.step(sim, fake_step(sim, 0, True), None)
    lim = sim.instances["A-0"].limits.limit
    assert lim[ResourceKind.CPU] == pytest.approx(2.0 + 0.1 * 3.75)
    assert lim[ResourceKind.MEMBW] == pytest.approx(0.25 + 0.1 * 0.95)


def test_policy_params_reject_unknown_keys():
    with pytest.raises(ValueError):
        PolicyParams.from_dict({"aimd": {"bogus": 1}})
    with pytest.raises(ValueError):
        PolicyParams.from_dict({"hpa": {}})
    p = PolicyParams.from_dict({"k8s": {"target_util": 0.7}})
    assert p.k8s.target_util == 0.7 and p.aimd.beta == 0.8


# -- no-op policy -------------------------------------------------------------------------


def test_none_policy_is_a_pure_observer(chain6):
    camp = experiment_campaign(chain6, 5, 60, CampaignParams())
    a, b = io.StringIO(), io.StringIO()
    run_experiment(chain6, NoPolicy(), 5, 60, camp, TelemetryWriter(a))
    sim = Simulator(chain6, 5, camp, keep_spans=False)
    w = TelemetryWriter(b)
    for _ in range(60):
        w.write(sim.step().telemetry)
    assert a.getvalue() == b.getvalue()


# -- mitigation time --------------------------------------------------------------------


def test_mitigation_never_violated():
    assert mitigation_time(mitigation_episodes([False] * 20)) == []


def test_mitigation_one_step():
    recs = mitigation_episodes([False, True, False, False, False, False])
    assert mitigation_time(recs) == [(1, False)]


def test_mitigation_hand_computed():
    v = [True, True, False, True, False, False, False, True, True, True, False, False]
    # episode 1 starts at 0; step 2 is compliant but step 3 violates, so compliance for 3 steps begins at 4
    # episode 2 starts at 7; the compliant run 10-11 is cut by the horizon, so it is censored at 12
    recs = mitigation_episodes(v)
    assert [(r.violation_start, r.mitigated_at, r.censored_at) for r in recs] == [(0, 4, None), (7, None, 12)]
    assert mitigation_time(recs) == [(4, False), (5, True)]


def test_mitigation_record_rejects_inverted_times():
    with pytest.raises(ValueError):
        MitigationEpisodeRecord(5, mitigated_at=3)


def test_tracker_gathers_culprits_and_actions():
    tr = MitigationTracker()
    tr.observe(False)
    tr.observe(True, ["a"], ["b"], [(1, "a", "scale_out")])
    tr.observe(False, ["c"])
    for _ in range(3):
        tr.observe(False)
    (rec,) = tr.records()
    assert rec.violation_start == 1 and rec.mitigated_at == 2
    assert rec.predicted == {"a", "c"} and rec.ground_truth == {"b"}
    out = io.StringIO()
    from firm.controller.mitigation import write_records

    write_records(out, [rec])
    d = json.loads(out.getvalue())
    assert d["duration_s"] == 1 and d["censored"] is False
