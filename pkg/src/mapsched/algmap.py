"""Algorithm maps over canonical configuration classes.

A configuration bundles the relevant released jobs (with finished parts) and
a bounded window of recent interval assignments.  Configurations and
interval actions are canonicalized so that two states that differ only by an
interval shift, a uniform weight scale, a relabeling of identical jobs, or a
permutation of identical machines share one key.  Maps are finite tables
from keys to canonical actions; `simulate` runs a map on a concrete
instance.

Time inside interval I_x is cut into G uniform slots.  Safety nets catch
whatever is unfinished when a job's deadline interval r+s-1 ends: relevant
jobs complete inside a tail reservation that the action space must leave
free (its size is derivable from the configuration, so equivalent
configurations see identical action spaces), while jobs that have become
irrelevant leave the configuration and complete on an explicit reserved
net lane (machine index m), the desk stand-in for the time-stretch slack
that pays for safety nets.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .core import (
    DomainError,
    Epsilon,
    Instance,
    Job,
    MachineEnv,
    Objective,
    RefusalError,
    SchemeConfig,
    frac_ceil,
    format_rational,
)
from .schedule import CompletionRecord, Piece, Schedule
from .simplify import relevance_step


class MapIncompleteError(RefusalError):
    def __init__(self, key_text: str):
        super().__init__(f"map incomplete at key {key_text}")
        self.key_text = key_text


@dataclass(frozen=True)
class EngineContext:
    """Everything the per-interval engine needs besides the state."""

    cfg: SchemeConfig
    env: MachineEnv
    preemptive: bool
    objective: Objective

    def __post_init__(self):
        if self.env.kind != "identical":
            raise DomainError("the map engine runs on identical machines")

    @property
    def eps(self) -> Epsilon:
        return self.cfg.eps

    @property
    def m(self) -> int:
        return self.env.m

    @property
    def net_lane(self) -> int:
        return self.m  # virtual machine hosting irrelevant-job net windows

    def slot_len(self, x: int) -> Fraction:
        return self.cfg.slot_length(x)


def context_for(inst: Instance, cfg: SchemeConfig) -> EngineContext:
    return EngineContext(cfg, inst.env, inst.preemptive, inst.objective)


@dataclass(frozen=True)
class JobState:
    """One relevant job inside a configuration."""

    job: Job
    r_exp: int
    p_exp: int
    w_exp: int
    f: Fraction = Fraction(0)
    machine: Optional[int] = None      # binding once started (non-preemptive)
    completed: Optional[Tuple[int, Fraction]] = None  # (interval, raw time)
    relevant: bool = True

    @property
    def done(self) -> bool:
        return self.completed is not None

    @property
    def remaining(self) -> Fraction:
        return self.job.p - self.f

    def deadline(self, s: int) -> int:
        return self.r_exp + s - 1

    def is_large(self, eps: Epsilon) -> bool:
        return self.job.p >= eps.value ** 3 * eps.release_time(self.r_exp)


def job_state(job: Job, eps: Epsilon, relevant: bool = True) -> JobState:
    return JobState(job, job.release_exp(eps), job.proc_exp(eps), job.weight_exp(eps), relevant=relevant)


# Parked irrelevant work: (job, deadline interval, remaining work)
Parked = Tuple[Job, int, Fraction]

# history rows: (job_id, per-machine slot counts, net work)
HistRow = Tuple[str, Tuple[int, ...], Fraction]
HistEntry = Tuple[int, Tuple[HistRow, ...]]


@dataclass(frozen=True)
class SimState:
    """Configuration: interval index, relevant job states, recent interval
    history; plus parked irrelevant work outside the canonical view."""

    x: int
    jobs: Tuple[JobState, ...]          # sorted by job id; all relevant
    history: Tuple[HistEntry, ...]      # newest first, length <= Gamma
    releases_done: bool = False
    parked: Tuple[Parked, ...] = ()     # irrelevant work awaiting its net
    released_any: bool = False

    def unfinished(self) -> Tuple[JobState, ...]:
        return tuple(js for js in self.jobs if not js.done)

    def active(self) -> Tuple[JobState, ...]:
        return tuple(js for js in self.jobs if not js.done and js.relevant)

    @property
    def all_done(self) -> bool:
        return all(js.done for js in self.jobs) and not self.parked

    def is_end_configuration(self) -> bool:
        return self.releases_done and self.released_any and self.all_done


# -- canonicalization --------------------------------------------------------


def _machine_perms(ctx: EngineContext) -> Tuple[Tuple[int, ...], ...]:
    return tuple(itertools.permutations(range(ctx.m)))


def _job_profile(js: JobState, state: SimState, ctx: EngineContext, perm: Tuple[int, ...], hist_maps) -> tuple:
    x = state.x
    f_frac = js.f / js.job.p
    mach = -1 if js.machine is None else perm.index(js.machine)
    if ctx.objective.kind == "makespan":
        return (js.r_exp - x, js.p_exp - x, f_frac, mach)
    rows = []
    for k in range(1, ctx.cfg.gamma + 1):
        hm = hist_maps[k - 1] if k - 1 < len(hist_maps) else None
        if hm is None or js.job.id not in hm:
            rows.append(((0,) * ctx.m, Fraction(0)))
        else:
            counts, net = hm[js.job.id]
            rows.append((tuple(counts[perm[i]] for i in range(ctx.m)), net / js.job.p))
    return (js.r_exp - x, js.p_exp - x, f_frac, 0, mach, tuple(rows))


@lru_cache(maxsize=200_000)
def _canonical(state: SimState, ctx: EngineContext):
    """Returns (key, chosen machine perm, active job ids in canonical order).

    The key is invariant under interval shift, uniform weight scaling, job
    relabeling, and machine permutation; weights enter as exponents relative
    to the heaviest relevant job.
    """
    rel = [js for js in state.jobs if js.relevant]
    hist_maps = [
        {row[0]: (row[1], row[2]) for row in entry[1]} for entry in state.history[: ctx.cfg.gamma]
    ]
    header = (ctx.m, ctx.preemptive, ctx.objective.kind, ctx.cfg.G, ctx.cfg.s, ctx.cfg.gamma)
    if not rel:
        key = header + ((),)
        return key, (tuple(range(ctx.m)),), ()
    w_max = max(js.w_exp for js in rel)
    best = None
    tied: List[Tuple[int, ...]] = []
    for perm in _machine_perms(ctx):
        profiles = []
        for js in rel:
            prof = _job_profile(js, state, ctx, perm, hist_maps)
            if ctx.objective.kind != "makespan":
                prof = prof[:3] + (js.w_exp - w_max,) + prof[4:]
            profiles.append((prof, js.job.id, js.done))
        profiles.sort(key=lambda t: t[0])
        cand = tuple(p for p, _, _ in profiles)
        if best is None or cand < best[0]:
            order = tuple(jid for _, jid, done in profiles if not done)
            best = (cand, order)
            tied = [perm]
        elif cand == best[0]:
            tied.append(perm)
    key = header + (best[0],)
    return key, tuple(tied), best[1]


def canonicalize_configuration(state: SimState, ctx: EngineContext) -> tuple:
    return _canonical(state, ctx)[0]


@lru_cache(maxsize=500_000)
def key_text(key: tuple) -> str:
    """Stable readable text form of a canonical key (sorted-tuple text)."""

    def conv(v):
        if isinstance(v, tuple):
            return [conv(e) for e in v]
        if isinstance(v, Fraction):
            return format_rational(v)
        return v

    return json.dumps(conv(key), separators=(",", ":"))


def equivalent_configurations(sa: SimState, sb: SimState, ctx: EngineContext) -> bool:
    """Reference equivalence check by direct bijection search.

    Tries every bijection between the relevant jobs and every machine
    permutation, requiring the interval shift to scale releases, processing
    requirements, finished parts, and the windowed history, and a uniform
    power of (1+eps) to scale all weights.
    """
    eps = ctx.eps
    ra = [js for js in sa.jobs if js.relevant]
    rb = [js for js in sb.jobs if js.relevant]
    if len(ra) != len(rb):
        return False
    if not ra:
        return True
    shift = sb.x - sa.x
    scale = eps.power(shift)
    ha = [{r[0]: (r[1], r[2]) for r in e[1]} for e in sa.history[: ctx.cfg.gamma]]
    hb = [{r[0]: (r[1], r[2]) for r in e[1]} for e in sb.history[: ctx.cfg.gamma]]

    def hist_of(js, hmaps):
        rows = []
        for k in range(1, ctx.cfg.gamma + 1):
            hm = hmaps[k - 1] if k - 1 < len(hmaps) else None
            if hm is None or js.job.id not in hm:
                rows.append(((0,) * ctx.m, Fraction(0)))
            else:
                rows.append(hm[js.job.id])
        return rows

    use_hist = ctx.objective.kind != "makespan"
    use_weights = ctx.objective.kind != "makespan"
    for sigma in itertools.permutations(range(len(rb))):
        pairs = [(ra[i], rb[sigma[i]]) for i in range(len(ra))]
        ok = all(
            b.r_exp - a.r_exp == shift
            and b.p_exp - a.p_exp == shift
            and b.f == a.f * scale
            for a, b in pairs
        )
        if not ok:
            continue
        if use_weights:
            y = pairs[0][1].w_exp - pairs[0][0].w_exp
            if any(b.w_exp - a.w_exp != y for a, b in pairs):
                continue
        for perm in _machine_perms(ctx):
            ok = all(
                (a.machine is None) == (b.machine is None)
                and (a.machine is None or perm[a.machine] == b.machine)
                for a, b in pairs
            )
            if ok and use_hist:
                for a, b in pairs:
                    rows_a, rows_b = hist_of(a, ha), hist_of(b, hb)
                    for (ca, na), (cb, nb) in zip(rows_a, rows_b):
                        if nb != na * scale:
                            ok = False
                            break
                        if any(cb[perm[i]] != ca[i] for i in range(ctx.m)):
                            ok = False
                            break
                    if not ok:
                        break
            if ok:
                return True
    return False


# -- safety-net reservations ---------------------------------------------------


def due_reservation(state: SimState, ctx: EngineContext):
    """Tail slots that this interval's actions must leave free so that every
    relevant job at its deadline can still be completed.

    Returns (reserved slot count per machine, placement plan).  Derived from
    the relevant jobs only, so equivalent configurations reserve alike.
    Raises RefusalError when the dues cannot fit even into empty machines.
    """
    slot_len = ctx.slot_len(state.x)
    dues = [js for js in state.unfinished() if js.deadline(ctx.cfg.s) <= state.x]
    dues.sort(key=lambda js: (js.r_exp, js.p_exp, js.w_exp, js.job.id))
    free = [ctx.cfg.G] * ctx.m
    plan: List[Tuple[str, int, int]] = []
    for js in dues:
        need = frac_ceil(js.remaining / slot_len)
        if js.machine is not None:
            candidates = [js.machine]
        else:
            candidates = [i for i in range(ctx.m) if free[i] >= need]
            candidates.sort(key=lambda i: (free[i], -i))
        if not candidates or free[candidates[0]] < need:
            raise RefusalError(
                f"safety net overflow in interval {state.x}; increase s"
            )
        machine = candidates[0]
        free[machine] -= need
        plan.append((js.job.id, machine, need))
    reserved = tuple(ctx.cfg.G - f for f in free)
    return reserved, tuple(plan)


def usable_slots(state: SimState, ctx: EngineContext) -> Tuple[int, ...]:
    reserved, _ = due_reservation(state, ctx)
    return tuple(ctx.cfg.G - r for r in reserved)


# -- actions ------------------------------------------------------------------

# Preemptive concrete action: tuple of (job_id, machine, slot count).
# Non-preemptive concrete action: tuple of (job_id, machine, start slot).
ConcreteAction = Tuple[Tuple[str, int, int], ...]

CARRIED = -2  # marker rows in canonical encodings
NOROW = -1


def _slots_needed(remaining: Fraction, slot_len: Fraction) -> int:
    return frac_ceil(remaining / slot_len)


def _deadline_reachable(js: JobState, start_x: int, start_slot: int, machine: int, usable0: int, ctx: EngineContext) -> bool:
    """Can a non-preemptive run starting at (interval, slot) finish by the
    job's deadline interval?  Later intervals are assumed reservation-free."""
    remaining = js.remaining
    x = start_x
    slot = start_slot
    cap = usable0
    while x <= js.deadline(ctx.cfg.s):
        span = max(0, cap - slot) * ctx.slot_len(x)
        if span >= remaining:
            return True
        remaining -= span
        x += 1
        slot = 0
        cap = ctx.cfg.G
    return False


def canonicalize_action(state: SimState, concrete: ConcreteAction, ctx: EngineContext) -> tuple:
    """Canonical class of an interval action relative to the configuration.

    Rows align with the canonical order of the active jobs; machine indices
    go through the key's minimizing machine permutation; rows of jobs with
    identical profiles are sorted so the encoding does not depend on which
    twin got which row.
    """
    key, perms, order = _canonical(state, ctx)
    by_job = {jid: (m, c) for jid, m, c in concrete}
    rel = {js.job.id: js for js in state.jobs if js.relevant}
    hist_maps = [{r[0]: (r[1], r[2]) for r in e[1]} for e in state.history[: ctx.cfg.gamma]]
    rel_js = [rel[jid] for jid in order]
    w_max = max((js.w_exp for js in rel.values()), default=0)

    def prof(js, perm):
        p = _job_profile(js, state, ctx, perm, hist_maps)
        if ctx.objective.kind != "makespan":
            p = p[:3] + (js.w_exp - w_max,) + p[4:]
        return p

    # group boundaries of equal profiles are identical across tied perms
    profs = [prof(js, perms[0]) for js in rel_js]

    def encode(perm: Tuple[int, ...]) -> tuple:
        rows = []
        for jid in order:
            js = rel[jid]
            if not ctx.preemptive and js.machine is not None and not js.done:
                rows.append((CARRIED, CARRIED))
            elif jid in by_job:
                mach, val = by_job[jid]
                rows.append((perm.index(mach), val))
            else:
                rows.append((NOROW, NOROW))
        out: List[tuple] = []
        i = 0
        while i < len(rows):
            j = i
            while j < len(rows) and profs[j] == profs[i]:
                j += 1
            out.extend(sorted(rows[i:j]))
            i = j
        return tuple(out)

    return min(encode(perm) for perm in perms)


def instantiate_action(encoding: tuple, state: SimState, ctx: EngineContext) -> ConcreteAction:
    """Bind a canonical action back to concrete jobs via the canonical order.

    Among tied machine permutations and identically-profiled jobs the binding
    is arbitrary; the candidates are symmetric, so the choice is value-neutral.
    """
    key, perms, order = _canonical(state, ctx)
    if len(encoding) != len(order):
        raise RefusalError(
            f"action shape mismatch: {len(encoding)} rows for {len(order)} active jobs"
        )
    perm = perms[0]
    concrete = []
    for jid, row in zip(order, encoding):
        mc, val = row
        if mc in (NOROW, CARRIED):
            continue
        concrete.append((jid, perm[mc], val))
    return tuple(sorted(concrete))


def _frozen_identity(js: JobState, state: SimState) -> tuple:
    # cheap twin-collapsing identity: exponents, progress, binding
    return (js.r_exp - state.x, js.p_exp - state.x, js.f / js.job.p, js.w_exp, js.machine)


def enumerate_concrete(state: SimState, ctx: EngineContext, maximal: bool = False) -> List[ConcreteAction]:
    """Feasible concrete interval actions, deduplicated only up to twin jobs
    (cheaply); the oracle's state memoization absorbs the rest.

    maximal=True keeps only work-conserving actions (no machine left idle
    that some job could legally absorb): for preemptive minimization these
    dominate, since padding an assignment never delays any completion."""
    ident = {js.job.id: _frozen_identity(js, state) for js in state.jobs}
    seen = {}
    for concrete in _generate_actions(state, ctx, maximal=maximal):
        sig = tuple(sorted((ident[jid], m, v) for jid, m, v in concrete))
        if sig not in seen:
            seen[sig] = concrete
    return [seen[k] for k in sorted(seen)]


def enumerate_actions(state: SimState, ctx: EngineContext) -> List[Tuple[tuple, ConcreteAction]]:
    """All feasible canonical interval actions for the configuration, each
    with one concrete instantiation, sorted by encoding.

    Preemptive: each active job may occupy slots on one machine; small jobs
    run all-or-nothing and finish inside the interval; capacities exclude the
    tail reserved for jobs at their deadline.  Non-preemptive: started jobs
    continue automatically; the choices are which jobs to start, where, and
    after how much deliberate idling, restricted to starts that can still
    meet the job's deadline.
    """
    seen: Dict[tuple, ConcreteAction] = {}
    for concrete in _generate_actions(state, ctx):
        enc = canonicalize_action(state, concrete, ctx)
        if enc not in seen:
            seen[enc] = concrete
    if len(seen) > ctx.cfg.class_cap:
        raise RefusalError(f"action classes exceed cap ({len(seen)})")
    return sorted(seen.items())


def _generate_actions(state: SimState, ctx: EngineContext, maximal: bool = False):
    active = [js for js in state.active() if js.r_exp <= state.x]
    slot_len = ctx.slot_len(state.x)
    usable = usable_slots(state, ctx)
    out: List[ConcreteAction] = []

    if ctx.preemptive:
        needed_of = {js.job.id: _slots_needed(js.remaining, slot_len) for js in active}
        small_of = {js.job.id: not js.is_large(ctx.eps) for js in active}
        choices: List[List[Optional[Tuple[str, int, int]]]] = []
        for js in active:
            opts: List[Optional[Tuple[str, int, int]]] = [None]
            needed = needed_of[js.job.id]
            if js.is_large(ctx.eps):
                counts = range(1, min(ctx.cfg.G, needed) + 1)
            else:
                counts = (needed,)
            for machine in range(ctx.m):
                for c in counts:
                    if c <= usable[machine]:
                        opts.append((js.job.id, machine, c))
            choices.append(opts)

        def is_maximal(picked: List[Tuple[str, int, int]], load: List[int]) -> bool:
            free = [usable[i] - load[i] for i in range(ctx.m)]
            if all(f == 0 for f in free):
                return True
            got = {jid: (machine, c) for jid, machine, c in picked}
            for js in active:
                jid = js.job.id
                if jid in got:
                    machine, c = got[jid]
                    if c < needed_of[jid] and free[machine] >= 1:
                        return False
                else:
                    if small_of[jid]:
                        if any(f >= needed_of[jid] for f in free):
                            return False
                    elif any(f >= 1 for f in free):
                        return False
            return True

        def rec(i: int, load: List[int], picked: List[Tuple[str, int, int]]):
            if i == len(choices):
                if not maximal or is_maximal(picked, load):
                    out.append(tuple(sorted(picked)))
                return
            for opt in choices[i]:
                if opt is None:
                    rec(i + 1, load, picked)
                    continue
                _, machine, c = opt
                if load[machine] + c > usable[machine]:
                    continue
                load[machine] += c
                picked.append(opt)
                rec(i + 1, load, picked)
                picked.pop()
                load[machine] -= c

        rec(0, [0] * ctx.m, [])
    else:
        startable = [js for js in active if js.machine is None]
        cursors = []
        for machine in range(ctx.m):
            used = 0
            for js in state.unfinished():
                if js.machine == machine:
                    used = min(usable[machine], _slots_needed(js.remaining, slot_len))
            cursors.append(used)

        def machine_plans(machine: int) -> List[Tuple[Tuple[str, int, int], ...]]:
            plans: List[Tuple[Tuple[str, int, int], ...]] = []

            def rec(cursor: int, remaining_jobs: Tuple[JobState, ...], acc: Tuple):
                plans.append(acc)
                for idx, js in enumerate(remaining_jobs):
                    needed = _slots_needed(js.remaining, slot_len)
                    small = not js.is_large(ctx.eps)
                    for start in range(cursor, usable[machine]):
                        if small and start + needed > usable[machine]:
                            break
                        if not _deadline_reachable(js, state.x, start, machine, usable[machine], ctx):
                            continue
                        end = min(usable[machine], start + needed)
                        rec(
                            end,
                            remaining_jobs[:idx] + remaining_jobs[idx + 1 :],
                            acc + ((js.job.id, machine, start),),
                        )

            rec(cursors[machine], tuple(startable), ())
            return plans

        def combine(machine: int, used_ids: frozenset, acc: Tuple):
            if machine == ctx.m:
                out.append(tuple(sorted(acc)))
                return
            for plan in machine_plans(machine):
                ids = {jid for jid, _, _ in plan}
                if ids & used_ids:
                    continue
                combine(machine + 1, used_ids | frozenset(ids), acc + plan)

        combine(0, frozenset(), ())

    return out


# -- applying an action -------------------------------------------------------


@dataclass(frozen=True)
class StepResult:
    state: SimState
    pieces: Tuple[Piece, ...]
    completions: Tuple[CompletionRecord, ...]


def check_net_feasibility(jobs: Iterable[Job], ctx: EngineContext):
    """Necessary condition: a date's full volume must fit the machine time of
    its deadline interval, or no behavior can finish it there."""
    eps = ctx.eps
    by_date: Dict[int, Fraction] = {}
    for j in jobs:
        by_date[j.release_exp(eps)] = by_date.get(j.release_exp(eps), Fraction(0)) + j.p
    for d, demand in sorted(by_date.items()):
        target = d + ctx.cfg.s - 1
        if demand > ctx.m * eps.interval_length(target):
            s2 = ctx.cfg.s
            while demand > ctx.m * eps.interval_length(d + s2 - 1):
                s2 += 1
            raise RefusalError(f"safety net infeasible: increase s (minimal feasible s = {s2})")


def apply_action(
    state: SimState, concrete: ConcreteAction, ctx: EngineContext, lean: bool = False
) -> StepResult:
    """Run one interval: the action's slot assignments, then safety-net
    completions, first for relevant jobs at their deadline (inside the tail
    reservation), then for parked irrelevant work (on the net lane).

    lean=True skips pieces and history and snaps completion times to the
    interval end; only callers that evaluate snapped values may use it.
    """
    x = state.x
    eps = ctx.eps
    slot_len = ctx.slot_len(x)
    r_x = eps.release_time(x)
    end_time = eps.release_time(x + 1)
    reserved, net_plan = due_reservation(state, ctx)
    usable = tuple(ctx.cfg.G - r for r in reserved)
    jobs = {js.job.id: js for js in state.jobs}
    pieces: List[Piece] = []
    completions: List[CompletionRecord] = []
    hist_rows: Dict[str, Tuple[List[int], Fraction]] = {}

    def record(jid: str, machine: int, slots: int, net: Fraction):
        if lean:
            return
        counts, netw = hist_rows.setdefault(jid, ([0] * ctx.m, Fraction(0)))
        if machine < ctx.m:
            counts[machine] += slots
        hist_rows[jid] = (counts, netw + net)

    def finish(js: JobState, raw: Fraction, machine=None) -> JobState:
        comp = CompletionRecord(js.job.id, x, raw, end_time)
        completions.append(comp)
        return replace(
            js, f=js.job.p, completed=(x, raw), machine=machine if machine is not None else js.machine
        )

    assignments: Dict[int, List[Tuple[str, int]]] = {i: [] for i in range(ctx.m)}

    if ctx.preemptive:
        for jid, machine, count in concrete:
            assignments[machine].append((jid, count))
        if lean:
            for machine in range(ctx.m):
                if sum(c for _, c in assignments[machine]) > usable[machine]:
                    raise RefusalError(f"action overruns machine {machine} in interval {x}")
                for jid, count in assignments[machine]:
                    js = jobs[jid]
                    if js.r_exp > x or js.done:
                        raise RefusalError(f"action touches unavailable job {jid}")
                    work = min(js.remaining, count * slot_len)
                    if work == js.remaining:
                        jobs[jid] = finish(js, end_time)
                    else:
                        jobs[jid] = replace(js, f=js.f + work)
        else:
            _, _, order = _canonical(state, ctx)
            rank = {jid: i for i, jid in enumerate(order)}
            # realization convention: shortest remaining first within each machine
            rem0 = {js.job.id: js.remaining for js in state.jobs}
            for machine in range(ctx.m):
                cursor = 0
                for jid, count in sorted(
                    assignments[machine], key=lambda t: (rem0[t[0]], rank.get(t[0], 10 ** 9))
                ):
                    js = jobs[jid]
                    if js.r_exp > x or js.done:
                        raise RefusalError(f"action touches unavailable job {jid}")
                    if cursor + count > usable[machine]:
                        raise RefusalError(f"action overruns machine {machine} in interval {x}")
                    start = r_x + cursor * slot_len
                    span = count * slot_len
                    work = min(js.remaining, span)
                    pieces.append(Piece(jid, machine, start, start + span, work))
                    record(jid, machine, count, Fraction(0))
                    cursor += count
                    if work == js.remaining:
                        jobs[jid] = finish(js, start + work)
                    else:
                        jobs[jid] = replace(js, f=js.f + work)
    else:
        # carried runs are forced; action rows start new jobs
        for js in sorted(state.jobs, key=lambda j: j.job.id):
            if js.machine is None or js.done:
                continue
            machine = js.machine
            count = min(usable[machine], _slots_needed(js.remaining, slot_len))
            start = r_x
            span = count * slot_len
            work = min(js.remaining, span)
            if count > 0:
                pieces.append(Piece(js.job.id, machine, start, start + span, work))
                record(js.job.id, machine, count, Fraction(0))
                assignments[machine].append((js.job.id, count))
                if work == js.remaining:
                    jobs[js.job.id] = finish(js, start + work)
                else:
                    jobs[js.job.id] = replace(js, f=js.f + work)
        for jid, machine, start_slot in sorted(concrete, key=lambda t: (t[1], t[2])):
            js = jobs[jid]
            if js.machine is not None or js.done or js.r_exp > x:
                raise RefusalError(f"non-preemptive start of unavailable job {jid}")
            taken = sum(c for _, c in assignments[machine])
            if start_slot < taken or start_slot >= usable[machine]:
                raise RefusalError(f"start slot {start_slot} unusable on machine {machine}")
            count = min(usable[machine] - start_slot, _slots_needed(js.remaining, slot_len))
            start = r_x + start_slot * slot_len
            span = count * slot_len
            work = min(js.remaining, span)
            pieces.append(Piece(jid, machine, start, start + span, work))
            record(jid, machine, count, Fraction(0))
            assignments[machine].append((jid, start_slot + count - taken))
            if work == js.remaining:
                jobs[jid] = finish(js, start + work, machine)
            else:
                jobs[jid] = replace(js, f=js.f + work, machine=machine)

    # relevant jobs at their deadline: complete inside the tail reservation
    consumed = {i: Fraction(0) for i in range(ctx.m)}
    for jid, machine, _slots in net_plan:
        js = jobs[jid]
        if js.done:
            continue
        need = js.remaining
        run_end = end_time - consumed[machine]
        if not lean:
            pieces.append(Piece(jid, machine, run_end - need, run_end, need, net=True))
        record(jid, machine, 0, need)
        consumed[machine] += need
        jobs[jid] = finish(js, run_end, machine if js.machine is None else js.machine)

    # parked irrelevant work at its deadline: complete on the net lane
    keep_parked: List[Parked] = []
    lane_due = [p for p in state.parked if p[1] <= x]
    lane_due.sort(key=lambda p: (p[1], p[0].id))
    lane_consumed = Fraction(0)
    for job, deadline, remaining in state.parked:
        if deadline > x:
            keep_parked.append((job, deadline, remaining))
    for job, deadline, remaining in lane_due:
        run_end = end_time - lane_consumed
        if not lean:
            pieces.append(Piece(job.id, ctx.net_lane, run_end - remaining, run_end, remaining, net=True))
        record(job.id, ctx.net_lane, 0, remaining)
        completions.append(CompletionRecord(job.id, x, run_end, end_time))
        lane_consumed += remaining
    if lane_consumed > eps.interval_length(x):
        raise RefusalError(f"net lane overflow in interval {x}; increase s")

    if lean:
        history: Tuple[HistEntry, ...] = ()
    else:
        entry: HistEntry = (
            x,
            tuple((jid, tuple(counts), net) for jid, (counts, net) in sorted(hist_rows.items())),
        )
        history = ((entry,) + state.history)[: max(ctx.cfg.gamma, 1)]
    new_state = SimState(
        x + 1,
        tuple(jobs[js.job.id] for js in state.jobs),
        history,
        state.releases_done,
        tuple(keep_parked),
        state.released_any,
    )
    return StepResult(new_state, tuple(pieces), tuple(completions))


def add_releases(
    state: SimState,
    new_jobs: Sequence[Job],
    ctx: EngineContext,
    releases_done: bool,
    net_only: frozenset = frozenset(),
) -> SimState:
    """Add the jobs released at R_x, run the monotone relevance update, and
    park whatever just became irrelevant."""
    eps = ctx.eps
    added = tuple(job_state(j, eps) for j in new_jobs if j.id not in net_only)
    parked = list(state.parked)
    for j in new_jobs:
        if j.id in net_only:
            parked.append((j, j.release_exp(eps) + ctx.cfg.s - 1, j.p))
    jobs = tuple(sorted(state.jobs + added, key=lambda js: js.job.id))
    view = [(js.job.id, js.r_exp, js.job.w, js.relevant) for js in jobs]
    flags = relevance_step(view, state.x, ctx.cfg, ctx.objective)
    kept = []
    for js in jobs:
        if flags[js.job.id]:
            kept.append(js)
        elif not js.done:
            parked.append((js.job, js.deadline(ctx.cfg.s), js.remaining))
        # completed jobs that turn irrelevant simply leave the configuration
    parked.sort(key=lambda p: (p[1], p[0].id))
    return SimState(
        state.x,
        tuple(kept),
        state.history,
        releases_done,
        tuple(parked),
        state.released_any or bool(new_jobs),
    )


def initial_state() -> SimState:
    return SimState(0, (), (), False)


# -- algorithm maps -----------------------------------------------------------


class AlgorithmMap:
    """Finite association table from canonical configuration keys to
    canonical interval-action classes."""

    def __init__(self, name: str, table: Optional[Dict[str, tuple]] = None):
        self.name = name
        self.table: Dict[str, tuple] = dict(table or {})

    def action_for(self, key: tuple, state: SimState, ctx: EngineContext) -> tuple:
        text = key_text(key)
        if text not in self.table:
            raise MapIncompleteError(text)
        return self.table[text]

    def to_jsonl(self) -> str:
        lines = []
        for k in sorted(self.table):
            lines.append(json.dumps({"key": json.loads(k), "action": list(map(list, self.table[k]))}))
        return "\n".join(lines) + ("\n" if self.table else "")

    @staticmethod
    def from_jsonl(name: str, text: str) -> "AlgorithmMap":
        table = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            key = json.dumps(data["key"], separators=(",", ":"))
            table[key] = tuple(tuple(row) for row in data["action"])
        return AlgorithmMap(name, table)


class RuleMap(AlgorithmMap):
    """A map backed by a scheduling rule, materialized lazily: the first
    configuration of each class fixes the class's action."""

    def __init__(self, name: str, rule):
        super().__init__(name)
        self.rule = rule

    def action_for(self, key: tuple, state: SimState, ctx: EngineContext) -> tuple:
        text = key_text(key)
        if text not in self.table:
            concrete = self.rule(state, ctx)
            self.table[text] = canonicalize_action(state, concrete, ctx)
        return self.table[text]


def _fill_by_priority(state: SimState, ctx: EngineContext, priority) -> ConcreteAction:
    """Greedy preemptive filling: repeatedly give the best-priority unfinished
    job as many slots as fit on the emptiest machine; jobs at their deadline
    come first regardless."""
    slot_len = ctx.slot_len(state.x)
    _, _, order = _canonical(state, ctx)
    rank = {jid: i for i, jid in enumerate(order)}
    avail = list(usable_slots(state, ctx))
    jobs = sorted(
        state.active(),
        key=lambda js: (js.deadline(ctx.cfg.s) > state.x, priority(js), rank.get(js.job.id, 0)),
    )
    out = []
    for js in jobs:
        machine = max(range(ctx.m), key=lambda i: (avail[i], -i))
        if avail[machine] <= 0:
            break
        needed = _slots_needed(js.remaining, slot_len)
        if js.is_large(ctx.eps):
            count = min(needed, avail[machine])
        else:
            count = needed if needed <= avail[machine] else 0
        if count <= 0:
            continue
        avail[machine] -= count
        out.append((js.job.id, machine, count))
    return tuple(sorted(out))


def _srpt_rule(state: SimState, ctx: EngineContext) -> ConcreteAction:
    return _fill_by_priority(state, ctx, lambda js: (js.remaining,))


def _wspt_rule(state: SimState, ctx: EngineContext) -> ConcreteAction:
    return _fill_by_priority(state, ctx, lambda js: (-(js.job.w / js.job.p),))


def _idle_rule(state: SimState, ctx: EngineContext) -> ConcreteAction:
    return ()


def _smith_list_rule(state: SimState, ctx: EngineContext) -> ConcreteAction:
    """Non-preemptive list scheduling by Smith ratio: start the best ratio
    job on every free machine, no deliberate idling."""
    slot_len = ctx.slot_len(state.x)
    _, _, order = _canonical(state, ctx)
    rank = {jid: i for i, jid in enumerate(order)}
    usable = usable_slots(state, ctx)
    cursors = []
    for machine in range(ctx.m):
        used = 0
        for js in state.unfinished():
            if js.machine == machine:
                used = min(usable[machine], _slots_needed(js.remaining, slot_len))
        cursors.append(used)
    queue = sorted(
        (js for js in state.active() if js.machine is None),
        key=lambda js: (-(js.job.w / js.job.p), rank.get(js.job.id, 0)),
    )
    out = []
    for js in queue:
        machine = min(range(ctx.m), key=lambda i: (cursors[i], i))
        start = cursors[machine]
        if start >= usable[machine]:
            break
        needed = _slots_needed(js.remaining, slot_len)
        if not js.is_large(ctx.eps) and start + needed > usable[machine]:
            continue
        if not _deadline_reachable(js, state.x, start, machine, usable[machine], ctx):
            continue
        out.append((js.job.id, machine, start))
        cursors[machine] = min(usable[machine], start + needed)
    return tuple(sorted(out))


BUILTIN_RULES = {
    "srpt": _srpt_rule,
    "wspt_pmtn": _wspt_rule,
    "smith_list_nonpmtn": _smith_list_rule,
    "idle_safety": _idle_rule,
}


def builtin_map(name: str) -> RuleMap:
    if name not in BUILTIN_RULES:
        raise DomainError(f"unknown builtin map {name!r}; choices: {sorted(BUILTIN_RULES)}")
    return RuleMap(name, BUILTIN_RULES[name])


# -- simulation ----------------------------------------------------------------


def simulate(
    amap: AlgorithmMap,
    inst: Instance,
    cfg: SchemeConfig,
    net_only: frozenset = frozenset(),
    collect_trace: bool = False,
):
    """Run an algorithm map on a power-aligned instance.

    Returns the Schedule, or (Schedule, trace) with the per-interval
    (configuration, key, action) triples when collect_trace is set.
    """
    ctx = context_for(inst, cfg)
    if not inst.is_power_aligned():
        raise DomainError("simulate needs an instance with power-of-(1+eps) values")
    check_net_feasibility(inst.jobs, ctx)
    by_date: Dict[int, List[Job]] = {}
    for j in inst.jobs:
        by_date.setdefault(j.release_exp(ctx.eps), []).append(j)
    max_date = max(by_date, default=-1)

    state = initial_state()
    pieces: List[Piece] = []
    completions: Dict[str, CompletionRecord] = {}
    trace = []
    while True:
        state = add_releases(
            state,
            sorted(by_date.get(state.x, []), key=lambda j: j.id),
            ctx,
            releases_done=state.x >= max_date,
            net_only=net_only,
        )
        if state.all_done and state.x > max_date:
            break
        horizon = max_date + cfg.s + cfg.gamma + 2
        if state.x > horizon:
            raise RefusalError("simulation ran past every deadline without finishing")
        key = canonicalize_configuration(state, ctx)
        encoding = amap.action_for(key, state, ctx)
        concrete = instantiate_action(encoding, state, ctx)
        if collect_trace:
            trace.append((state, key, encoding))
        step = apply_action(state, concrete, ctx)
        pieces.extend(step.pieces)
        for c in step.completions:
            completions[c.job] = c
        state = step.state

    sched = Schedule(inst, tuple(pieces), completions)
    if collect_trace:
        return sched, trace
    return sched
