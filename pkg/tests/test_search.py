import sys
from fractions import Fraction as F

import pytest

from mapsched.core import (
    Epsilon,
    Instance,
    Job,
    MachineEnv,
    RefusalError,
    SchemeConfig,
    WEIGHTED_COMPLETION,
    release_weight,
)
from mapsched.algmap import builtin_map, simulate
from mapsched.oracle import OracleCache, opt_value
from mapsched.search import (
    build_universe,
    detect_cycle,
    evaluate_map,
    explicit_universe,
    offset_split,
    reachable_classes,
    search_best_map,
    theoretical_offset_modulus,
    verify_cycle,
)
from mapsched.simplify import classify_relevance

from conftest import EPS1, EPS_HALF, mk_instance, mk_job

sys.setrecursionlimit(100_000)


def small_cfg(**kw):
    base = dict(eps=EPS_HALF, s=4, K=2, gamma=8, G=2, x_max=1, delta_jobs=1,
                oracle_job_cap=8, tree_cap=2_000_000)
    base.update(kw)
    return SchemeConfig(**base)


# -- universe construction ------------------------------------------------------


def test_build_universe_counts():
    cfg = small_cfg(x_max=1)
    uni = build_universe(cfg, [-4], [0], x_max=1)
    # one admissible spec: catalogs are {nothing, the job} per date
    assert len(uni.catalog(0)) == 2
    assert uni.instance_count() == 4


def test_build_universe_delta_zero():
    cfg = small_cfg(delta_jobs=0)
    # wait: delta_jobs=0 means only the empty multiset
    uni = build_universe(cfg, [-4], [0], x_max=1)
    assert len(uni.catalog(0)) == 1
    assert uni.instance_count() == 1


def test_build_universe_window_filter():
    cfg = small_cfg()
    uni = build_universe(cfg, [-20, -4, 5], [0], x_max=1)
    # (eps/2d)|I_x| < p <= (1/eps) R_x keeps only the -4 exponent
    sizes = {spec[0] for cat in uni.catalogs for ms in cat for spec in ms}
    assert sizes == {-4}


def test_instance_for_stop_marker():
    cfg = small_cfg()
    uni = build_universe(cfg, [-4], [0], x_max=1)
    inst = uni.instance_for((1, -1))
    assert len(inst.jobs) == 1


# -- reachable classes and cycling -----------------------------------------------


def _cycling_universe(catalog_pattern, repeat, cfg):
    return explicit_universe(cfg, catalog_pattern, repeat=repeat)


def test_cycle_stationary_period_one():
    cfg = small_cfg(s=2, K=2, gamma=4, x_max=0, e_cap=14)
    uni = _cycling_universe([[((-4, 0),)]], 1, cfg)
    rs = reachable_classes(uni, builtin_map("srpt"))
    assert rs.cycle is not None and rs.cycle[2] == 1
    assert verify_cycle(rs)


def test_cycle_alternating_period_two():
    cfg = small_cfg(s=2, K=2, gamma=4, x_max=0, e_cap=16)
    uni = _cycling_universe([[((-4, 0),)], [()]], 2, cfg)
    rs = reachable_classes(uni, builtin_map("srpt"))
    assert rs.cycle is not None and rs.cycle[2] == 2
    assert verify_cycle(rs)


def test_cycle_rotation_period_three():
    cfg = small_cfg(s=2, K=2, gamma=4, x_max=0, e_cap=20)
    uni = _cycling_universe([[((-4, 0),)], [((-5, 0),)], [()]], 3, cfg)
    rs = reachable_classes(uni, builtin_map("srpt"))
    assert rs.cycle is not None and rs.cycle[2] == 3
    assert verify_cycle(rs)


def test_cycle_none_within_cap():
    cfg = small_cfg(s=2, K=2, gamma=4, x_max=0, e_cap=3)
    uni = _cycling_universe([[((-4, 0),)], [((-5, 0),), ()], [()]], 3, cfg)
    rs = reachable_classes(uni, builtin_map("srpt"), horizon=2)
    assert rs.cycle is None or rs.cycle[1] <= 2


def test_reachable_empty_universe():
    cfg = small_cfg(delta_jobs=0, x_max=0)
    uni = build_universe(cfg, [-4], [0], x_max=0)
    rs = reachable_classes(uni, builtin_map("srpt"))
    assert all(len(level) <= 1 for level in rs.levels)


# -- evaluate_map -------------------------------------------------------------------


def test_evaluate_srpt_single_instance_universe():
    # the universe holding only the 2-job instance family: srpt is optimal
    cfg = SchemeConfig(eps=EPS1, s=6, K=2, gamma=12, G=4, x_max=1,
                       oracle_job_cap=8, tree_cap=2_000_000)
    uni = explicit_universe(cfg, [[((2, 0),)], [((-1, 0),)]])
    rep = evaluate_map(builtin_map("srpt"), uni, "grid")
    assert rep.rho == 1


def test_evaluate_empty_universe_refuses():
    cfg = small_cfg(delta_jobs=0, x_max=0)
    uni = build_universe(cfg, [-4], [0], x_max=0)
    with pytest.raises(RefusalError) as err:
        evaluate_map(builtin_map("srpt"), uni, "grid")
    assert "no end-configurations" in str(err.value)


def test_idle_safety_rho_at_least_one():
    cfg = small_cfg(s=3, K=2, gamma=6, x_max=0, G=4)
    uni = build_universe(cfg, [-4], [0], x_max=0)
    rep = evaluate_map(builtin_map("idle_safety"), uni, "grid")
    assert rep.rho >= 1


def test_monotone_in_universe():
    cfg = small_cfg(s=3, K=2, gamma=6, x_max=1, G=2, delta_jobs=1)
    small = build_universe(cfg, [-4], [0], x_max=1)
    large = build_universe(cfg, [-5, -4], [0], x_max=1)
    cache = OracleCache()
    r_small = evaluate_map(builtin_map("srpt"), small, "grid", cache).rho
    r_large = evaluate_map(builtin_map("srpt"), large, "grid", cache).rho
    assert r_small <= r_large


def test_argmax_witness_replays_exactly():
    cfg = small_cfg(s=3, K=2, gamma=6, x_max=1, G=2, delta_jobs=1)
    uni = build_universe(cfg, [-5, -4], [0, 2], x_max=1)
    rep = evaluate_map(builtin_map("wspt_pmtn"), uni, "grid")
    inst = uni.instance_for(rep.argmax_choices)
    sched = simulate(builtin_map("wspt_pmtn"), inst, cfg)
    end_x = max(c.interval for c in sched.completions.values()) + 1
    flags = classify_relevance(inst, end_x, cfg)
    val = sum(
        inst.job(jid).w * c.snapped
        for jid, c in sched.completions.items()
        if flags[jid]
    )
    rel_jobs = tuple(j for j in inst.jobs if flags[j.id])
    sub = Instance(inst.env, rel_jobs, inst.preemptive, inst.objective, inst.eps)
    opt = opt_value(sub, cfg, grid=True).value
    assert val / opt == rep.rho


def test_report_serialization_deterministic():
    cfg = small_cfg(s=3, K=2, gamma=6, x_max=0, G=2, delta_jobs=1)
    uni = build_universe(cfg, [-4], [0], x_max=0)
    r1 = evaluate_map(builtin_map("srpt"), uni, "grid").to_json()
    r2 = evaluate_map(builtin_map("srpt"), uni, "grid").to_json()
    assert r1 == r2


# -- search ---------------------------------------------------------------------------


def test_search_forced_single_action():
    # universe where only the idle action exists at every key: forced map
    cfg = small_cfg(delta_jobs=0, x_max=0)
    uni = build_universe(cfg, [-4], [0], x_max=0)
    with pytest.raises(RefusalError):
        search_best_map(uni, "grid")  # no end-configurations at all


def test_search_agrees_with_exhaustive():
    cfg = small_cfg(s=3, K=1, gamma=3, x_max=1, G=2, delta_jobs=1,
                    oracle_job_cap=6)
    uni = build_universe(cfg, [-4], [0, 2], x_max=1, preemptive=False)
    bb = search_best_map(uni, "grid")
    full = search_best_map(uni, "grid", exhaustive=True)
    assert bb.report.rho == full.report.rho
    assert full.maps_enumerated <= 10_000
    assert bb.report.rho <= 2 * (1 + EPS_HALF.value)


def test_search_heuristic_flagged():
    cfg = small_cfg(s=3, K=1, gamma=3, x_max=1, G=2, delta_jobs=1, oracle_job_cap=6)
    uni = build_universe(cfg, [-4], [0, 2], x_max=1, preemptive=False)
    out = search_best_map(uni, "grid", heuristic_lookahead=2)
    assert out.report.heuristic and not out.report.exact
    exact = search_best_map(uni, "grid")
    assert out.report.rho >= exact.report.rho


def test_best_map_file_round_trip(tmp_path):
    from mapsched.algmap import AlgorithmMap

    cfg = small_cfg(s=3, K=1, gamma=3, x_max=1, G=2, delta_jobs=1, oracle_job_cap=6)
    uni = build_universe(cfg, [-4], [0, 2], x_max=1, preemptive=False)
    out = search_best_map(uni, "grid")
    path = tmp_path / "best.jsonl"
    path.write_text(out.best_map.to_jsonl())
    loaded = AlgorithmMap.from_jsonl("best", path.read_text())
    rep = evaluate_map(loaded, uni, "grid")
    assert rep.rho == out.report.rho


# -- offset splitting ------------------------------------------------------------------


def test_offset_split_example():
    cfg = SchemeConfig(eps=EPS1, s=1, K=2, gamma=2, x_max=8)
    jobs = (
        Job("a", F(1), F(1), F(9)),
        Job("b", F(2), F(1), F(3) / 2),
        Job("c", F(4), F(1), F(6) / 4),
    )
    inst = mk_instance(jobs, eps=EPS1)
    sp = offset_split(inst, cfg, M=3)
    assert [sp.moved_rw[o] for o in range(3)] == [9, 3, 6]
    assert sum(sp.moved_rw.values()) == sp.rw_total == 18
    assert sum(sp.moved_rw.values()) / 3 == 6


def test_offset_split_single_period():
    cfg = SchemeConfig(eps=EPS1, s=1, K=2, gamma=2)
    inst = mk_instance([mk_job("a", 1, 1, 5)], eps=EPS1)
    sp = offset_split(inst, cfg, M=2)
    assert sorted(sp.moved_rw.values()) == [0, 5]


def test_offset_identity_random(rng):
    cfg = SchemeConfig(eps=EPS_HALF, s=2, K=2, gamma=4)
    for _ in range(30):
        jobs = [
            Job(f"j{i}", EPS_HALF.power(rng.randint(0, 8)), F(1),
                F(rng.randint(1, 9)))
            for i in range(rng.randint(1, 5))
        ]
        inst = mk_instance(jobs, eps=EPS_HALF)
        for M in (2, 3, 5):
            sp = offset_split(inst, cfg, M=M)
            assert sum(sp.moved_rw.values()) == release_weight(inst.jobs)


def test_offset_modulus_theoretical():
    cfg = SchemeConfig(eps=EPS_HALF, s=3, K=2, gamma=6)
    assert theoretical_offset_modulus(cfg) == 7  # ceil(1.5^3 / 0.5)


def test_makespan_offsets_hitting_last_window():
    # at most two offsets move jobs released within the final s-window
    cfg = SchemeConfig(eps=EPS1, s=1, K=2, gamma=2)
    jobs = [Job(f"j{k}", EPS1.power(k), F(1), F(1)) for k in range(6)]
    inst = mk_instance(jobs, eps=EPS1)
    sp = offset_split(inst, cfg, M=3)
    last_period = 5  # six periods of one interval each
    hot = [
        o
        for o in range(sp.M)
        if any(
            EPS1.exponent_of(inst.job(j).r) // cfg.s > last_period - cfg.s
            for j in sp.flagged[o]
        )
    ]
    assert len(hot) <= 2
