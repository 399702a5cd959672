"""Brute-force offline optimum for small instances.

Two schedule spaces are provided.  The grid optimum searches exactly the
interval/slot action space that algorithm maps use (including forced
safety-net completions), so a map can reach ratio 1 against it.  The refined
optimum is the exact continuous-time optimum: completion-order enumeration
for preemptive single-machine instances and branch-and-bound over sequences
for non-preemptive instances.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Tuple, Union

from .core import (
    INF,
    DomainError,
    Instance,
    Objective,
    RefusalError,
    SchemeConfig,
    format_rational,
    parse_rational,
)
from .schedule import (
    CompletionRecord,
    IntervalValue,
    Piece,
    Schedule,
    completion_value,
    pow_rational,
)
from . import algmap
from .algmap import EngineContext, JobState, SimState, job_state

log = logging.getLogger(__name__)

Value = Union[Fraction, IntervalValue]


@dataclass
class OracleResult:
    value: Value
    witness: Optional[Schedule]
    nodes: int
    cache_hits: int
    grid: bool
    snapped: bool


def lower_bounds(inst: Instance) -> Fraction:
    """max(release weight, sum of w*(r + fastest possible processing)); for
    makespan, the best single-job completion bound."""
    if not inst.jobs:
        return Fraction(0)
    env = inst.env

    def best_completion(j):
        if j.unrelated:
            p = j.p_min_finite
        else:
            p = j.p / env.s_max
        return j.r + p

    if inst.objective.kind == "makespan":
        return max(best_completion(j) for j in inst.jobs)
    if inst.objective.kind == "monomial":
        total = Fraction(0)
        for j in inst.jobs:
            powed = pow_rational(best_completion(j), inst.objective.alpha, 60)
            lo = powed.lo if isinstance(powed, IntervalValue) else powed
            total += j.w * inst.objective.k * lo
        return total
    sum_bound = sum((j.w * best_completion(j) for j in inst.jobs), Fraction(0))
    rw = sum((j.r * j.w for j in inst.jobs), Fraction(0))
    return max(rw, sum_bound)


def _as_comparable(v: Value) -> Value:
    return v


def _value_lt(a: Value, b: Value) -> bool:
    if isinstance(a, IntervalValue) or isinstance(b, IntervalValue):
        return a < b  # may raise PrecisionError, by design
    return a < b


# -- grid optimum -------------------------------------------------------------


def _release_plain(state: SimState, jobs, ctx, releases_done):
    """Release without relevance classification: the oracle treats every job
    as relevant (it solves the plain offline optimum)."""
    eps = ctx.eps
    added = tuple(job_state(j, eps) for j in jobs)
    merged = tuple(sorted(state.jobs + added, key=lambda js: js.job.id))
    return SimState(
        state.x, merged, state.history, releases_done, state.parked,
        state.released_any or bool(jobs),
    )


def opt_grid(
    inst: Instance,
    cfg: SchemeConfig,
    snapped: bool = True,
    want_witness: bool = False,
) -> OracleResult:
    """Exact minimum over the map action space (slot grid, small-job rules,
    deadline nets), evaluating completions snapped or raw."""
    if inst.env.kind != "identical":
        raise RefusalError("grid oracle supports identical machines only")
    if not inst.is_power_aligned():
        raise DomainError("grid oracle needs power-of-(1+eps) values")
    ctx = EngineContext(cfg, inst.env, inst.preemptive, inst.objective)
    algmap.check_net_feasibility(inst.jobs, ctx)
    eps = cfg.eps
    by_date: Dict[int, List] = {}
    for j in inst.jobs:
        by_date.setdefault(j.release_exp(eps), []).append(j)
    max_date = max(by_date, default=-1)
    makespan = inst.objective.kind == "makespan"
    lean = snapped  # boundary completion times suffice for snapped values
    maximal = inst.preemptive  # work-conserving actions dominate when preempting
    nodes = 0
    memo: Dict[tuple, Tuple[Value, Optional[tuple]]] = {}

    if want_witness:
        # id-resolved states so the recorded best actions replay verbatim
        def memo_key(state: SimState) -> tuple:
            return (
                state.x,
                tuple((js.job.id, js.f, js.machine, js.done) for js in state.jobs),
            )
    else:
        # twin jobs collapse: the minimum is symmetric under relabeling
        def memo_key(state: SimState) -> tuple:
            return (
                state.x,
                tuple(
                    sorted(
                        (js.r_exp, js.p_exp, js.w_exp, js.f, js.machine is None, js.machine, js.done)
                        for js in state.jobs
                    )
                ),
            )

    def step_cost(completions) -> Value:
        total: Value = Fraction(0)
        best = Fraction(0)
        for c in completions:
            job = inst.job(c.job)
            v = completion_value(c, inst.objective, job.w, snapped, cfg.monomial_precision)
            if makespan:
                best = max(best, v)
            else:
                total = total + v
        return best if makespan else total

    def search(state: SimState) -> Tuple[Value, Optional[tuple]]:
        nonlocal nodes
        state = _release_plain(
            state, sorted(by_date.get(state.x, []), key=lambda j: j.id), ctx, state.x >= max_date
        )
        if state.all_done and state.x > max_date:
            return Fraction(0), None
        key = memo_key(state)
        if key in memo:
            return memo[key]
        nodes += 1
        if nodes > cfg.oracle_node_cap:
            raise RefusalError(f"grid oracle exceeded node cap {cfg.oracle_node_cap}")
        best: Optional[Value] = None
        best_act: Optional[tuple] = None
        for concrete in algmap.enumerate_concrete(state, ctx, maximal=maximal):
            step = algmap.apply_action(state, concrete, ctx, lean=lean)
            sub, _ = search(step.state)
            cost = step_cost(step.completions)
            total = max(cost, sub) if makespan else cost + sub
            if best is None or _value_lt(total, best):
                best = total
                best_act = concrete
        assert best is not None
        memo[key] = (best, best_act)
        return memo[key]

    value, _ = search(SimState(0, (), (), False))

    witness = None
    if want_witness:
        pieces: List[Piece] = []
        comps: Dict[str, CompletionRecord] = {}
        state = SimState(0, (), (), False)
        while True:
            state = _release_plain(
                state, sorted(by_date.get(state.x, []), key=lambda j: j.id), ctx, state.x >= max_date
            )
            if state.all_done and state.x > max_date:
                break
            _, concrete = memo[memo_key(state)]
            step = algmap.apply_action(state, concrete, ctx)
            pieces.extend(step.pieces)
            for c in step.completions:
                comps[c.job] = c
            state = step.state
        witness = Schedule(inst, tuple(pieces), comps)
    return OracleResult(value, witness, nodes, 0, True, snapped)


# -- refined optimum ----------------------------------------------------------


def _snap(inst: Instance, t: Fraction) -> Fraction:
    x = inst.eps.interval_of(t)
    if inst.eps.release_time(x) == t:
        # completions exactly on a boundary snap to that boundary
        return t
    return inst.eps.release_time(x + 1)


def _completion_record(inst: Instance, jid: str, t: Fraction) -> CompletionRecord:
    x = inst.eps.interval_of(t)
    if inst.eps.release_time(x) == t and x > 0:
        x -= 1
    return CompletionRecord(jid, x, t, inst.eps.release_time(x + 1))


def _value_of_records(inst: Instance, records, snapped: bool, precision: int) -> Value:
    if inst.objective.kind == "makespan":
        return max((c.snapped if snapped else c.raw) for c in records) if records else Fraction(0)
    total: Value = Fraction(0)
    for c in records:
        total = total + completion_value(c, inst.objective, inst.job(c.job).w, snapped, precision)
    return total


def opt_refined_preemptive_single(
    inst: Instance, cfg: SchemeConfig, snapped: bool = False, want_witness: bool = False
) -> OracleResult:
    """Exact continuous preemptive optimum on one machine: for every
    completion-priority order, the greedy that always runs the available
    unfinished job of highest priority attains the componentwise-minimal
    completion times; the optimum is the best order."""
    jobs = list(inst.jobs)
    n = len(jobs)
    best: Optional[Value] = None
    best_out = None
    nodes = 0
    for perm in itertools.permutations(range(n)):
        nodes += 1
        prio = {jobs[i].id: rank for rank, i in enumerate(perm)}
        remaining = {j.id: j.p for j in jobs}
        releases = sorted({j.r for j in jobs})
        t = releases[0]
        pieces: List[Piece] = []
        records: List[CompletionRecord] = []
        pending = sorted(jobs, key=lambda j: j.r)
        active: List[str] = []
        idx = 0
        while len(records) < n:
            while idx < len(pending) and pending[idx].r <= t:
                active.append(pending[idx].id)
                idx += 1
            if not active:
                t = pending[idx].r
                continue
            run = min(active, key=lambda jid: prio[jid])
            horizon = pending[idx].r if idx < len(pending) else None
            finish_at = t + remaining[run]
            end = finish_at if horizon is None or finish_at <= horizon else horizon
            if end > t:
                pieces.append(Piece(run, 0, t, end, end - t))
                remaining[run] -= end - t
            if remaining[run] == 0:
                records.append(_completion_record(inst, run, end))
                active.remove(run)
            t = end
        val = _value_of_records(inst, records, snapped, cfg.monomial_precision)
        if best is None or _value_lt(val, best):
            best = val
            best_out = (pieces, records)
    witness = None
    if want_witness and best_out:
        pieces, records = best_out
        witness = Schedule(inst, tuple(pieces), {c.job: c for c in records})
    return OracleResult(best if best is not None else Fraction(0), witness, nodes, 0, False, snapped)


def opt_nonpreemptive_bb(
    inst: Instance, cfg: SchemeConfig, snapped: bool = False, want_witness: bool = False
) -> OracleResult:
    """Exact non-preemptive optimum by branch-and-bound over per-machine job
    sequences with earliest-feasible starts."""
    jobs = sorted(inst.jobs, key=lambda j: j.id)
    n = len(jobs)
    env = inst.env
    makespan = inst.objective.kind == "makespan"
    nodes = 0
    best: Optional[Value] = None
    best_plan: Optional[tuple] = None

    def proc_on(j, machine) -> Optional[Fraction]:
        if j.unrelated:
            return j.proc[machine]
        return j.p / env.speed(machine)

    def optimistic_rest(unscheduled) -> Value:
        if makespan:
            out = Fraction(0)
            for j in unscheduled:
                t = j.r + min(p for p in (proc_on(j, i) for i in range(env.m)) if p is not None)
                out = max(out, t)
            return out
        total: Value = Fraction(0)
        for j in unscheduled:
            t = j.r + min(p for p in (proc_on(j, i) for i in range(env.m)) if p is not None)
            rec = CompletionRecord(j.id, 0, t, t)
            total = total + completion_value(rec, inst.objective, j.w, False, cfg.monomial_precision)
        return total

    def combine(a: Value, b: Value) -> Value:
        return max(a, b) if makespan else a + b

    def dfs(mask: int, ends: Tuple[Fraction, ...], acc: Value, plan: tuple):
        nonlocal nodes, best, best_plan
        nodes += 1
        if nodes > cfg.oracle_node_cap:
            raise RefusalError(f"branch and bound exceeded node cap {cfg.oracle_node_cap}")
        if mask == (1 << n) - 1:
            if best is None or _value_lt(acc, best):
                best = acc
                best_plan = plan
            return
        unscheduled = [jobs[i] for i in range(n) if not mask & (1 << i)]
        bound = combine(acc, optimistic_rest(unscheduled))
        if best is not None:
            try:
                if not _value_lt(bound, best):
                    return
            except Exception:
                pass
        used = sum(1 for e in ends if e > 0)
        for i in range(n):
            if mask & (1 << i):
                continue
            j = jobs[i]
            machine_limit = env.m
            if env.kind == "identical":
                machine_limit = min(env.m, used + 1)  # machine symmetry break
            for machine in range(machine_limit):
                p = proc_on(j, machine)
                if p is None:
                    continue
                start = max(j.r, ends[machine])
                done = start + p
                rec = _completion_record(inst, j.id, done)
                v = (
                    (rec.snapped if snapped else rec.raw)
                    if makespan
                    else completion_value(rec, inst.objective, j.w, snapped, cfg.monomial_precision)
                )
                new_ends = ends[:machine] + (done,) + ends[machine + 1 :]
                dfs(
                    mask | (1 << i),
                    new_ends,
                    combine(acc, v),
                    plan + ((j.id, machine, start, done),),
                )

    if n == 0:
        return OracleResult(Fraction(0), Schedule(inst, (), {}), 0, 0, False, snapped)
    dfs(0, tuple(Fraction(0) for _ in range(env.m)), Fraction(0), ())
    witness = None
    if want_witness and best_plan is not None:
        pieces = []
        comps = {}
        for jid, machine, start, done in best_plan:
            work = done - start
            j = inst.job(jid)
            if not j.unrelated:
                work = (done - start) * env.speed(machine)
            pieces.append(Piece(jid, machine, start, done, work))
            comps[jid] = _completion_record(inst, jid, done)
        witness = Schedule(inst, tuple(pieces), comps)
    return OracleResult(best, witness, nodes, 0, False, snapped)


# -- cache and dispatch -------------------------------------------------------


class OracleCache:
    """Association table canonical-instance-key -> optimum value, persisted
    as JSON lines; corrupt entries are dropped with a warning."""

    def __init__(self):
        self.table: Dict[str, Fraction] = {}
        self.hits = 0

    @staticmethod
    def load(path) -> "OracleCache":
        cache = OracleCache()
        try:
            with open(path) as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        data = json.loads(line)
                        cache.table[data["key"]] = parse_rational(data["value"])
                    except (KeyError, ValueError, TypeError):
                        log.warning("dropping corrupt oracle cache line %d in %s", lineno, path)
        except FileNotFoundError:
            pass
        return cache

    def save(self, path):
        with open(path, "w") as fh:
            for key in sorted(self.table):
                fh.write(json.dumps({"key": key, "value": format_rational(self.table[key])}) + "\n")


def _cache_key(inst: Instance, cfg: SchemeConfig, grid: bool, snapped: bool):
    """Canonical instance key plus the factor recovering the original value
    from the stored (shift/scale normalized) one.

    Power-aligned instances are normalized by shifting release and processing
    exponents so the earliest release is 1 and weight exponents so the
    heaviest weight is 1; equivalent instances then share one cache entry.
    """
    obj = inst.objective
    if obj.kind == "monomial" and obj.alpha.denominator != 1:
        return None, Fraction(1)  # interval-valued results are not cached
    eps = inst.eps
    factor = Fraction(1)
    jobs = []
    if inst.jobs and inst.is_power_aligned():
        shift = min(j.release_exp(eps) for j in inst.jobs)
        wshift = 0
        if obj.kind != "makespan":
            wshift = max(j.weight_exp(eps) for j in inst.jobs)
        c = eps.power(shift)
        if obj.kind == "monomial":
            factor = eps.power(wshift) * c ** obj.alpha.numerator
        elif obj.kind == "makespan":
            factor = c
        else:
            factor = eps.power(wshift) * c
        for j in sorted(inst.jobs, key=lambda j: j.id):
            if j.unrelated:
                p = ["inf" if v is INF else eps.exponent_of(v) - shift for v in j.proc]
            else:
                p = j.proc_exp(eps) - shift
            jobs.append((j.release_exp(eps) - shift, p, j.weight_exp(eps) - wshift))
    else:
        for j in sorted(inst.jobs, key=lambda j: j.id):
            p = (
                ["inf" if v is INF else format_rational(v) for v in j.proc]
                if j.unrelated
                else format_rational(j.proc)
            )
            jobs.append((format_rational(j.r), p, format_rational(j.w)))
    jobs.sort(key=repr)
    payload = {
        "env": inst.env.kind,
        "m": inst.env.m,
        "speeds": [format_rational(s) for s in inst.env.speeds] if inst.env.speeds else None,
        "pre": inst.preemptive,
        "obj": [obj.kind, format_rational(obj.k) if obj.k else None,
                format_rational(obj.alpha) if obj.alpha else None],
        "eps": format_rational(inst.eps.value),
        "grid": grid,
        "snapped": snapped,
        "gear": [cfg.s, cfg.G] if grid else None,
        "jobs": jobs,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")), factor


def opt_value(
    inst: Instance,
    cfg: SchemeConfig,
    grid: bool,
    snapped: Optional[bool] = None,
    cache: Optional[OracleCache] = None,
    want_witness: bool = False,
) -> OracleResult:
    """Offline optimum of a small instance.

    grid=True searches the shared slot/interval space; grid=False is the
    exact continuous optimum (preemptive single machine or non-preemptive).
    Completions are evaluated snapped by default on the grid and raw off it.
    Refuses instead of guessing beyond the configured caps.
    """
    if snapped is None:
        snapped = grid
    if len(inst.jobs) > cfg.oracle_job_cap:
        raise RefusalError(
            f"instance has {len(inst.jobs)} jobs; oracle cap is {cfg.oracle_job_cap}"
        )
    key, factor = _cache_key(inst, cfg, grid, snapped)
    if cache is not None and key is not None and not want_witness:
        if key in cache.table:
            cache.hits += 1
            return OracleResult(cache.table[key] * factor, None, 0, 1, grid, snapped)
    if grid:
        result = opt_grid(inst, cfg, snapped=snapped, want_witness=want_witness)
    elif not inst.preemptive:
        result = opt_nonpreemptive_bb(inst, cfg, snapped=snapped, want_witness=want_witness)
    elif inst.env.kind == "identical" and inst.env.m == 1:
        result = opt_refined_preemptive_single(inst, cfg, snapped=snapped, want_witness=want_witness)
    else:
        raise RefusalError(
            "refined preemptive optimum is exact only on a single identical machine; "
            "use grid=True for multi-machine preemptive instances"
        )
    if cache is not None and key is not None and isinstance(result.value, Fraction):
        cache.table[key] = result.value / factor
    return result
