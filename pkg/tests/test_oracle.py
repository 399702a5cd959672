from fractions import Fraction as F

import pytest

from mapsched.core import (
    Epsilon,
    Instance,
    Job,
    MachineEnv,
    Objective,
    RefusalError,
    SchemeConfig,
    MAKESPAN,
    WEIGHTED_COMPLETION,
)
from mapsched.oracle import OracleCache, lower_bounds, opt_value
from mapsched.schedule import check_schedule_feasibility, evaluate_objective

from conftest import EPS1, EPS_HALF, mk_instance, mk_job, random_raw_instance


CFG = SchemeConfig(eps=EPS1, s=6, K=2, gamma=12, G=4, x_max=6)


def test_two_job_nonpreemptive():
    inst = mk_instance([mk_job("a", 1, 1), mk_job("b", 1, 2)], preemptive=False)
    res = opt_value(inst, CFG, grid=False, want_witness=True)
    assert res.value == 6
    assert check_schedule_feasibility(res.witness) is None
    assert evaluate_objective(res.witness, snapped=False) == 6


def test_srpt_instance_refined():
    inst = mk_instance([mk_job("a", 1, 4), mk_job("b", 2, 1)])
    res = opt_value(inst, CFG, grid=False, want_witness=True)
    assert res.value == 9
    assert check_schedule_feasibility(res.witness) is None


def test_srpt_instance_grid_raw_and_snapped():
    inst = mk_instance([mk_job("a", 1, 4), mk_job("b", 2, 1)])
    assert opt_value(inst, CFG, grid=True, snapped=False).value == 9
    assert opt_value(inst, CFG, grid=True).value == 12


def test_single_job_no_choices():
    inst = mk_instance([mk_job("a", 1, 2, 3)], preemptive=False)
    assert opt_value(inst, CFG, grid=False).value == 9
    assert lower_bounds(inst) == 9


def test_no_contention_all_parallel():
    inst = mk_instance([mk_job("a", 1, 1, 2), mk_job("b", 1, 2, 1)], m=2)
    res = opt_value(inst, CFG, grid=True, snapped=False)
    assert res.value == 2 * 2 + 1 * 3  # every job runs immediately


def test_makespan_parallel_finish():
    inst = mk_instance([mk_job("a", 1, 2), mk_job("b", 1, 2)], m=2, objective=MAKESPAN)
    assert opt_value(inst, CFG, grid=True, snapped=False).value == 3


def test_three_equal_jobs_any_order():
    inst = mk_instance([mk_job(k, 1, 1) for k in "abc"], preemptive=False)
    assert opt_value(inst, CFG, grid=False).value == 2 + 3 + 4


def test_lower_bounds_cases():
    assert lower_bounds(mk_instance([])) == 0
    inst = mk_instance([mk_job("a", 1, 2, 3), mk_job("b", 2, 1, 1)])
    assert lower_bounds(inst) <= opt_value(inst, CFG, grid=False).value


def test_job_cap_refusal():
    jobs = [mk_job(f"j{i}", 1, 1) for i in range(8)]
    with pytest.raises(RefusalError):
        opt_value(mk_instance(jobs), CFG, grid=False)


def test_refined_multi_machine_preemptive_refusal():
    inst = mk_instance([mk_job("a", 1, 1)], m=2)
    with pytest.raises(RefusalError):
        opt_value(inst, CFG, grid=False)


def test_grid_at_least_refined_and_preemption_helps(rng):
    # s wide enough that every random instance's volume fits its net window
    cfg = SchemeConfig(eps=EPS_HALF, s=12, K=1, gamma=12, G=4, x_max=10)
    for _ in range(12):
        inst = random_raw_instance(rng, max_jobs=3, allow_m2=False)
        from mapsched.simplify import round_instance

        rounded = round_instance(inst).instance
        pre = Instance(rounded.env, rounded.jobs, True, rounded.objective, rounded.eps)
        non = Instance(rounded.env, rounded.jobs, False, rounded.objective, rounded.eps)
        refined_pre = opt_value(pre, cfg, grid=False).value
        refined_non = opt_value(non, cfg, grid=False).value
        assert refined_pre <= refined_non
        grid_pre = opt_value(pre, cfg, grid=True, snapped=False).value
        assert grid_pre >= refined_pre
        assert refined_pre >= lower_bounds(pre)


def test_cache_transparency(rng):
    cfg = SchemeConfig(eps=EPS_HALF, s=4, K=2, gamma=8, G=4, x_max=10)
    cache = OracleCache()
    for _ in range(10):
        inst = random_raw_instance(rng, max_jobs=3, allow_m2=False)
        cold = opt_value(inst, cfg, grid=False).value
        warm = opt_value(inst, cfg, grid=False, cache=cache).value
        hit = opt_value(inst, cfg, grid=False, cache=cache)
        assert cold == warm == hit.value
        assert hit.cache_hits == 1


def test_cache_normalization_shares_shifted_instances():
    cfg = SchemeConfig(eps=EPS_HALF, s=4, K=2, gamma=8, G=4, x_max=10)
    cache = OracleCache()
    base = mk_instance([Job("a", F(3, 2), F(3, 2) ** -2, F(1))], eps=EPS_HALF)
    shifted = mk_instance([Job("a", F(3, 2) ** 3, F(1), F(1))], eps=EPS_HALF)
    v1 = opt_value(base, cfg, grid=True, cache=cache).value
    res2 = opt_value(shifted, cfg, grid=True, cache=cache)
    assert res2.cache_hits == 1
    assert res2.value == v1 * F(3, 2) ** 2


def test_cache_persistence_drops_corrupt_lines(tmp_path):
    path = tmp_path / "cache.jsonl"
    path.write_text('{"key": "k1", "value": "3/2"}\nnot json\n{"key": 5}\n')
    cache = OracleCache.load(path)
    assert cache.table == {"k1": F(3, 2)}
    cache.table["k2"] = F(7)
    cache.save(path)
    again = OracleCache.load(path)
    assert again.table == {"k1": F(3, 2), "k2": F(7)}


def test_related_nonpreemptive_bb():
    inst = Instance(MachineEnv("related", 2, (F(1), F(2))),
                    (mk_job("a", 1, 2, 1),), False, WEIGHTED_COMPLETION, EPS1)
    # fastest machine halves the processing time
    assert opt_value(inst, CFG, grid=False).value == 2


def test_unrelated_nonpreemptive_bb():
    inst = Instance(MachineEnv("unrelated", 2),
                    (Job("a", F(1), (F(4), F(1)), F(1)),), False, WEIGHTED_COMPLETION, EPS1)
    assert opt_value(inst, CFG, grid=False).value == 2


def test_grid_witness_value_matches():
    inst = mk_instance([mk_job("a", 1, 4), mk_job("b", 2, 1)])
    res = opt_value(inst, CFG, grid=True, want_witness=True)
    assert check_schedule_feasibility(res.witness) is None
    assert evaluate_objective(res.witness, snapped=True) == res.value
