from fractions import Fraction as F

import pytest

from mapsched.core import (
    DomainError,
    Epsilon,
    Instance,
    Job,
    MachineEnv,
    Objective,
    RefusalError,
    SchemeConfig,
    WEIGHTED_COMPLETION,
    MAKESPAN,
    release_weight,
)
from mapsched.simplify import (
    assign_safety_nets,
    bound_ptimes_unrelated,
    bound_speeds_related,
    cap_small_volume,
    classify_job_classes,
    classify_relevance,
    classify_sizes,
    compose_certificates,
    domination_factor,
    pack_tiny_jobs,
    partition_periods,
    prune_large_jobs,
    relevance_step,
    rescale_parts_nonpreemptive,
    round_instance,
    simplify_pipeline,
    theoretical_constants,
)
from mapsched.oracle import opt_value

from conftest import EPS1, EPS_HALF, mk_instance, mk_job, random_raw_instance


CFG1 = SchemeConfig(eps=EPS1, s=3, K=2, gamma=6)
CFG_HALF = SchemeConfig(eps=EPS_HALF, s=3, K=2, gamma=6)


# -- rounding ----------------------------------------------------------------


def test_round_instance_example():
    inst = mk_instance([Job("a", F(3, 2), F(3, 5), F(3))], eps=EPS1)
    out = round_instance(inst)
    j = out.instance.jobs[0]
    assert (j.r, j.p, j.w) == (2, 1, 4)
    assert out.certificate.factor == 8  # (1+1)^3


def test_round_instance_release_lift():
    inst = mk_instance([Job("a", F(1, 10), F(8), F(1))], eps=EPS1)
    j = round_instance(inst).instance.jobs[0]
    assert (j.r, j.p, j.w) == (8, 8, 1)


def test_round_instance_idempotent():
    inst = mk_instance([Job("a", F(3, 2), F(3, 5), F(3))], eps=EPS1)
    once = round_instance(inst)
    twice = round_instance(once.instance)
    assert twice.instance.jobs == once.instance.jobs
    assert twice.certificate.factor == 8


def test_round_instance_related_speeds():
    inst = Instance(MachineEnv("related", 2, (F(1), F(5, 2))),
                    (Job("a", F(1), F(2), F(1)),), True, WEIGHTED_COMPLETION, EPS1)
    out = round_instance(inst)
    assert out.instance.env.speeds == (1, 2)  # 5/2 rounded down to a power
    assert out.certificate.factor == 16  # one extra (1+eps) for the speeds


# -- size classes --------------------------------------------------------------


def test_classify_sizes_examples():
    # eps=1/2, R_x = 1.5^4: p=1 >= eps^3 R_x = 0.6328 -> large
    inst = mk_instance([Job("a", F(3, 2) ** 4, F(1), F(1))], eps=EPS_HALF)
    assert classify_sizes(inst, CFG_HALF).of(4, "large") == ("a",)
    # boundary: p = eps^3 R_x exactly is large (inclusive)
    inst = mk_instance([Job("b", F(1), F(1, 8), F(1))], eps=EPS_HALF)
    assert classify_sizes(inst, CFG_HALF).of(0, "large") == ("b",)
    # tiny: p = |I_x|/32 <= (eps/2d)|I_x| = |I_x|/16 at d=4
    ix = EPS_HALF.interval_length(0)
    inst = mk_instance([Job("t", F(1), ix / 32, F(1))], eps=EPS_HALF)
    assert classify_sizes(inst, CFG_HALF).of(0, "tiny") == ("t",)


# -- tiny packs ----------------------------------------------------------------


def test_pack_tiny_identity():
    inst = mk_instance([mk_job("a", 1, 1)], eps=EPS_HALF)
    out = pack_tiny_jobs(inst, CFG_HALF)
    assert out.instance.jobs == inst.jobs
    assert out.certificate.factor == 1


def test_pack_tiny_six_equal():
    ix = EPS_HALF.interval_length(0)
    jobs = [Job(f"j{k}", F(1), ix / 32, F(1)) for k in range(6)]
    out = pack_tiny_jobs(mk_instance(jobs, eps=EPS_HALF), CFG_HALF)
    sizes = sorted(len(v) for v in out.packs.values())
    assert sizes == [2, 4]
    assert out.certificate.factor == (F(3, 2)) ** 4


def test_pack_tiny_smith_order_and_windows():
    ix = EPS_HALF.interval_length(0)
    lo = EPS_HALF.value / (2 * CFG_HALF.d) * ix
    hi = 2 * lo
    a = Job("a", F(1), ix / 64, F(1))       # ratio 64/|I|
    b = Job("b", F(1), ix / 32, F(1))       # ratio 32/|I|
    out = pack_tiny_jobs(mk_instance([b, a], eps=EPS_HALF), CFG_HALF)
    (members,) = out.packs.values()
    assert members == ("a", "b")  # higher Smith ratio first
    # every pack's (pre-rounding) total lands in [(eps/2d)|I|, (eps/d)|I|]:
    # the single pack here was padded up to the lower bound
    pack_job = [j for j in out.instance.jobs if j.id.startswith("pack")][0]
    assert EPS_HALF.round_up(lo) <= pack_job.p <= EPS_HALF.round_up(hi)


def test_pack_weight_conserved_before_rounding():
    ix = EPS_HALF.interval_length(0)
    jobs = [Job(f"j{k}", F(1), ix / 32, F(2)) for k in range(4)]
    out = pack_tiny_jobs(mk_instance(jobs, eps=EPS_HALF), CFG_HALF)
    total_w = sum(j.w for j in out.instance.jobs)
    assert total_w >= 8  # rounded up from the conserved sum


# -- prune / cap -----------------------------------------------------------------


def test_prune_large_keeps_top_weight():
    cfg = SchemeConfig(eps=EPS1, s=3, K=2, gamma=6, max_large_per_type=2)
    jobs = [mk_job("a", 1, 1, 4), mk_job("b", 1, 1, 2), mk_job("c", 1, 1, 1)]
    out = prune_large_jobs(mk_instance(jobs, eps=EPS1), cfg)
    by_id = {j.id: j for j in out.instance.jobs}
    assert by_id["a"].r == 1 and by_id["b"].r == 1 and by_id["c"].r == 2
    assert out.certificate.factor == 2
    assert out.shifted == {"c": 1}


def test_prune_identity_under_cap():
    cfg = SchemeConfig(eps=EPS1, s=3, K=2, gamma=6, max_large_per_type=2)
    jobs = [mk_job("a", 1, 1, 4)]
    out = prune_large_jobs(mk_instance(jobs, eps=EPS1), cfg)
    assert out.instance.jobs == tuple(jobs)
    assert out.certificate.factor == 1


def test_prune_tie_breaks_by_id():
    cfg = SchemeConfig(eps=EPS1, s=3, K=2, gamma=6, max_large_per_type=1)
    jobs = [mk_job("b", 1, 1, 2), mk_job("a", 1, 1, 2)]
    out = prune_large_jobs(mk_instance(jobs, eps=EPS1), cfg)
    by_id = {j.id: j for j in out.instance.jobs}
    assert by_id["a"].r == 1  # lexicographically smallest id kept
    assert by_id["b"].r == 2


def test_cap_small_volume_prefix():
    jobs = [Job(k, F(1), F(2, 5), F(2, 5)) for k in "abc"]
    out = cap_small_volume(mk_instance(jobs, eps=EPS1), CFG1)
    shifted = [j for j in out.instance.jobs if j.r == 2]
    assert len(shifted) == 1  # 0.4+0.4 <= 1 < 1.2


def test_cap_small_identity():
    jobs = [Job("a", F(1), F(2, 5), F(1))]
    out = cap_small_volume(mk_instance(jobs, eps=EPS1), CFG1)
    assert out.instance.jobs == tuple(jobs)
    assert out.certificate.factor == 1


# -- safety nets -------------------------------------------------------------------


def test_safety_net_single_job():
    plan = assign_safety_nets(mk_instance([mk_job("a", 1, 1)], eps=EPS1), CFG1)
    w = plan.windows[0]
    assert (w.interval, w.start, w.end) == (2, 7, 8)


def test_safety_net_overflow_reports_minimal_s():
    cfg = SchemeConfig(eps=EPS1, s=1, K=2, gamma=2)
    inst = mk_instance([mk_job("a", 1, 8)], eps=EPS1)
    with pytest.raises(RefusalError) as err:
        assign_safety_nets(inst, cfg)
    assert "increase s" in str(err.value)
    assert "minimal feasible s" in str(err.value)


def test_safety_net_windows_disjoint():
    inst = mk_instance([mk_job("a", 1, 1), mk_job("b", 2, 1)], eps=EPS1)
    plan = assign_safety_nets(inst, CFG1)
    w0, w1 = plan.windows[0], plan.windows[1]
    assert w0.interval != w1.interval or w0.end <= w1.start or w1.end <= w0.start


# -- periods and parts ----------------------------------------------------------------


def _period_instance(rws, eps, s):
    jobs = []
    for k, rw in enumerate(rws):
        if rw:
            r = eps.release_time(k * s)
            jobs.append(Job(f"q{k}", r, F(1), F(rw) / r))
    return mk_instance(jobs, eps=eps)


def test_partition_periods_insignificance():
    cfg = SchemeConfig(eps=EPS_HALF, s=2, K=3, gamma=6)
    ps = partition_periods(_period_instance([100, 20], EPS_HALF, 2), cfg)
    assert [p.insignificant for p in ps.periods] == [False, True]
    assert ps.net_only_jobs == ("q1",)
    ps2 = partition_periods(_period_instance([100, 30], EPS_HALF, 2), cfg)
    assert [p.insignificant for p in ps2.periods] == [False, False]
    assert len(ps2.parts) == 1


def test_partition_single_period():
    cfg = SchemeConfig(eps=EPS_HALF, s=2, K=3, gamma=6)
    ps = partition_periods(_period_instance([5], EPS_HALF, 2), cfg)
    assert len(ps.parts) == 1 and not ps.net_only_jobs


# -- relevance ---------------------------------------------------------------------


def test_relevance_domination_example():
    cfg = SchemeConfig(eps=EPS_HALF, s=1, K=2, gamma=2, delta_jobs=2)
    assert domination_factor(cfg) == F(1, 27)
    jobs = [("w", 0, F(1), True), ("big", 0, F(100), True)]
    flags = relevance_step(jobs, 0, cfg, WEIGHTED_COMPLETION)
    assert flags == {"w": False, "big": True}  # 1 < 100/27


def test_relevance_age_boundary():
    cfg = SchemeConfig(eps=EPS_HALF, s=1, K=2, gamma=2)
    jobs = [("old", 0, F(1), True)]
    flags = relevance_step(jobs, 2, cfg, WEIGHTED_COMPLETION)
    assert flags["old"] is True  # r_exp == x - gamma is not old yet
    flags = relevance_step(jobs, 3, cfg, WEIGHTED_COMPLETION)
    assert flags["old"] is False


def test_relevance_makespan_boundary():
    cfg = SchemeConfig(eps=EPS_HALF, s=2, K=1, gamma=2)
    jobs = [("a", 0, F(1), True)]
    assert relevance_step(jobs, 1, cfg, MAKESPAN)["a"] is True
    assert relevance_step(jobs, 2, cfg, MAKESPAN)["a"] is False  # inclusive


def test_relevance_monotone(rng):
    cfg = SchemeConfig(eps=EPS_HALF, s=2, K=2, gamma=4, delta_jobs=2)
    inst_jobs = []
    for i in range(8):
        inst_jobs.append(Job(f"j{i}", EPS_HALF.power(rng.randint(0, 5)),
                             F(1), EPS_HALF.power(rng.randint(0, 14))))
    inst = mk_instance(inst_jobs, eps=EPS_HALF)
    prev = {}
    for x in range(0, 9):
        flags = classify_relevance(inst, x, cfg)
        for jid, rel in flags.items():
            if jid in prev and not prev[jid]:
                assert not rel  # irrelevant never becomes relevant again
        prev = flags


# -- part rescaling -------------------------------------------------------------------


def test_rescale_parts_example():
    # two parts; earlier parts sum rw=100, first job of part 2 has r*w=10
    cfg = SchemeConfig(eps=EPS1, s=1, K=2, gamma=2)
    j1 = Job("a", F(1), F(1), F(100))       # part 1: rw = 100
    j2 = Job("b", F(4), F(1), F(10) / 4)    # part 2 first job: rw = 10
    inst = mk_instance([j1, j2], eps=EPS1, preemptive=False)
    parts = partition_periods(inst, cfg)
    assert len(parts.parts) == 2
    out = rescale_parts_nonpreemptive(inst, parts)
    assert out.scale_exps[1] == 5  # smallest y with 0.5*10*2^y >= 100
    assert out.instance.job("b").w == F(10) / 4 * 32
    assert out.certificate.factor == 2


def test_rescale_single_part_identity():
    cfg = SchemeConfig(eps=EPS1, s=1, K=2, gamma=2)
    inst = mk_instance([mk_job("a", 1, 1, 1)], eps=EPS1, preemptive=False)
    parts = partition_periods(inst, cfg)
    out = rescale_parts_nonpreemptive(inst, parts)
    assert out.instance.jobs == inst.jobs


# -- machine environment transforms ------------------------------------------------------


def test_bound_speeds_related_example():
    inst = Instance(MachineEnv("related", 2, (F(1), F(10))),
                    (mk_job("a", 1, 1),), True, WEIGHTED_COMPLETION, EPS_HALF)
    out = bound_speeds_related(inst, CFG_HALF)
    assert out.instance.env.speeds == (1,)
    assert out.folded == ((0, 1),)
    assert out.certificate.factor == F(9, 4)


def test_bound_speeds_identity_when_equal():
    inst = Instance(MachineEnv("related", 2, (F(1), F(1))),
                    (mk_job("a", 1, 1),), True, WEIGHTED_COMPLETION, EPS_HALF)
    out = bound_speeds_related(inst, CFG_HALF)
    assert out.instance.env.speeds == (1, 1)
    assert out.folded == ()


def test_bound_speeds_postcondition(rng):
    for _ in range(100):
        m = rng.randint(2, 4)
        speeds = tuple(F(rng.randint(1, 64)) for _ in range(m))
        speeds = tuple(s / min(speeds) for s in speeds)
        inst = Instance(MachineEnv("related", m, speeds), (mk_job("a", 1, 1),),
                        True, WEIGHTED_COMPLETION, EPS_HALF)
        out = bound_speeds_related(inst, CFG_HALF)
        assert out.instance.env.s_max <= F(m) / EPS_HALF.value


def test_bound_ptimes_examples():
    def row_inst(*rows):
        jobs = tuple(Job(f"j{i}", F(1), row, F(1)) for i, row in enumerate(rows))
        return Instance(MachineEnv("unrelated", len(rows[0])), jobs, True,
                        WEIGHTED_COMPLETION, EPS_HALF)

    out, cert = bound_ptimes_unrelated(row_inst((F(1), F(100))), CFG_HALF)
    assert out.jobs[0].proc == (F(1), None)
    out, _ = bound_ptimes_unrelated(row_inst((F(1), F(3))), CFG_HALF)
    assert out.jobs[0].proc == (F(1), F(3))
    single = Instance(MachineEnv("unrelated", 1), (Job("a", F(1), (F(5),), F(1)),),
                      True, WEIGHTED_COMPLETION, EPS_HALF)
    out, _ = bound_ptimes_unrelated(single, CFG_HALF)
    assert out.jobs[0].proc == (F(5),)


def test_bound_ptimes_postcondition(rng):
    m = 3
    for _ in range(100):
        jobs = []
        for i in range(rng.randint(1, 4)):
            row = tuple(
                None if rng.random() < 0.2 else F(rng.randint(1, 200), rng.choice([1, 2, 4]))
                for _ in range(m)
            )
            if all(v is None for v in row):
                row = (F(1),) + row[1:]
            jobs.append(Job(f"j{i}", F(1), row, F(1)))
        inst = Instance(MachineEnv("unrelated", m), tuple(jobs), True,
                        WEIGHTED_COMPLETION, EPS_HALF)
        out, _ = bound_ptimes_unrelated(inst, CFG_HALF)
        for j in out.jobs:
            finite = [p for p in j.proc if p is not None]
            assert finite, "fastest row must survive"
            assert max(finite) / min(finite) <= F(m) / EPS_HALF.value


def test_job_classes():
    def inst_of(rows):
        jobs = tuple(Job(f"j{i}", F(1), row, F(1)) for i, row in enumerate(rows))
        return Instance(MachineEnv("unrelated", 2), jobs, True, WEIGHTED_COMPLETION, EPS_HALF)

    table = classify_job_classes(inst_of([(F(1), F(2)), (F(2), F(4))]))
    assert len(table.classes) == 1  # proportional rows share a class
    table = classify_job_classes(inst_of([(F(1), F(2)), (F(2), F(3))]))
    assert len(table.classes) == 2
    table = classify_job_classes(inst_of([(F(1), None), (F(1), F(2))]))
    assert len(table.classes) == 2  # support differs


# -- theoretical constants ------------------------------------------------------------------


def test_theoretical_constants_values():
    rep = theoretical_constants(EPS_HALF, 1)
    assert rep["distinct_large_sizes"] == 7   # ceil(4 log_{1.5} 2)
    assert rep["max_large_per_type"] == 35    # ceil(1/eps^2 + 1) * 7
    assert rep["Gamma"] == rep["K"] * rep["s"]
    assert rep["warnings"]  # desk-impractical values flagged
    # K satisfies the defining inequality and is minimal
    e = EPS_HALF.value
    dp = e / (1 + e) ** rep["s"]
    t = 1 / (1 + dp)
    K = rep["K"]
    assert t ** K / (1 - t ** K) <= e
    assert t ** (K - 1) / (1 - t ** (K - 1)) > e


# -- pipeline sandwich (smaller version of the acceptance run) -------------------------------


def test_pipeline_invariants_preserved(rng):
    cfg = SchemeConfig(eps=EPS_HALF, s=3, K=2, gamma=6, x_max=12, max_large_per_type=2)
    for _ in range(25):
        inst = random_raw_instance(rng, max_jobs=4)
        result = simplify_pipeline(inst, cfg)
        assert result.instance.is_rounded()
        assert result.factor >= F(27, 8)


def test_pipeline_sandwich_small(rng):
    cfg = SchemeConfig(eps=EPS_HALF, s=3, K=2, gamma=6, x_max=12, max_large_per_type=2)
    for _ in range(30):
        inst = random_raw_instance(rng, max_jobs=4)
        result = simplify_pipeline(inst, cfg)
        lo = opt_value(inst, cfg, grid=False).value
        hi = opt_value(result.instance, cfg, grid=False).value
        assert lo <= hi <= result.factor * lo
