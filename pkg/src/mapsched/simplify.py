"""Instance and schedule simplifications: geometric rounding, tiny-job
packing, per-date volume caps, safety nets, periods and parts, relevance,
and the machine-environment transformations.

Every transformation returns the transformed instance together with a
multiplicative loss certificate; certificates compose by multiplication.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from .core import (
    INF,
    DomainError,
    RefusalError,
    Epsilon,
    Instance,
    Job,
    MachineEnv,
    Objective,
    SchemeConfig,
    ceil_div,
    format_rational,
    frac_ceil,
    release_weight,
)


@dataclass(frozen=True)
class LossCertificate:
    """Claimed multiplicative loss bound for one simplification step."""

    factor: Fraction
    lemma: str

    def __post_init__(self):
        if self.factor < 1:
            raise DomainError("loss factors are >= 1")


def compose_certificates(certs: Sequence[LossCertificate]) -> Fraction:
    out = Fraction(1)
    for c in certs:
        out *= c.factor
    return out


def _tie_key(job: Job, eps: Epsilon):
    """Deterministic tie-break: value tuple (equals exponent order on rounded
    instances), then id."""
    procs = job.proc if job.unrelated else (job.proc,)
    pvals = tuple(Fraction(-1) if p is INF else p for p in procs)
    return (job.r, pvals, job.w, job.id)


def smith_ratio(job: Job) -> Fraction:
    return job.w / job.p_max_finite


# -- rounding ---------------------------------------------------------------


@dataclass(frozen=True)
class RoundResult:
    instance: Instance
    certificate: LossCertificate


def round_instance(inst: Instance, eps: Optional[Epsilon] = None) -> RoundResult:
    """Round processing times, release dates, and weights up to powers of
    (1+eps); lift releases to max(r, eps*p/s_max, 1).

    Related-machine speeds are normalized so the slowest is 1 and rounded
    down to powers; this adds one (1+eps) to the certificate.
    """
    eps = eps or inst.eps
    env = inst.env
    speed_loss = False
    if env.kind == "related":
        s_min = min(env.speeds)
        speeds = tuple(eps.round_down(s / s_min) for s in env.speeds)
        if speeds != env.speeds:
            speed_loss = True
        env = MachineEnv("related", env.m, speeds)
    s_max = env.s_max
    jobs = []
    for j in inst.jobs:
        if j.unrelated:
            proc: object = tuple(INF if p is INF else eps.round_up(p) for p in j.proc)
            p_ref = min(p for p in proc if p is not INF)
        else:
            proc = eps.round_up(j.proc)
            p_ref = proc / s_max
        r = max(j.r, eps.value * p_ref, Fraction(1))
        jobs.append(Job(j.id, eps.round_up(r), proc, eps.round_up(j.w)))
    factor = (1 + eps.value) ** (4 if speed_loss else 3)
    out = Instance(env, tuple(jobs), inst.preemptive, inst.objective, eps)
    return RoundResult(out, LossCertificate(factor, "rounding"))


# -- size classification ----------------------------------------------------


@dataclass(frozen=True)
class SizeClass:
    """Per release exponent, the large / small / tiny partition of that
    date's jobs.  large: p >= eps^3*R_x; tiny: p <= (eps/2d)|I_x|."""

    by_date: Dict[int, Dict[str, Tuple[str, ...]]]

    def of(self, x: int, kind: str) -> Tuple[str, ...]:
        return self.by_date.get(x, {}).get(kind, ())


def classify_sizes(inst: Instance, cfg: SchemeConfig) -> SizeClass:
    eps = inst.eps
    by_date: Dict[int, Dict[str, List[str]]] = {}
    for j in sorted(inst.jobs, key=lambda j: _tie_key(j, eps)):
        x = j.release_exp(eps)
        slot = by_date.setdefault(x, {"large": [], "small": [], "tiny": []})
        p = j.p_max_finite
        large_cut = eps.value ** 3 * eps.release_time(x)
        tiny_cut = eps.value / (2 * cfg.d) * eps.interval_length(x)
        if p >= large_cut:
            slot["large"].append(j.id)
        elif p <= tiny_cut:
            slot["tiny"].append(j.id)
        else:
            slot["small"].append(j.id)
    return SizeClass({x: {k: tuple(v) for k, v in slot.items()} for x, slot in by_date.items()})


# -- tiny-job packing -------------------------------------------------------


@dataclass(frozen=True)
class PackResult:
    instance: Instance
    certificate: LossCertificate
    packs: Dict[str, Tuple[str, ...]]  # pack id -> member ids in Smith order


def pack_tiny_jobs(inst: Instance, cfg: SchemeConfig) -> PackResult:
    """Group each date's tiny jobs into packs by non-increasing Smith ratio.

    Packs take the largest prefix with total processing <= (eps/d)|I_x|;
    every pack except possibly the last lands in [(eps/2d)|I_x|, (eps/d)|I_x|]
    and the last is padded up to the lower bound.  Pack processing time and
    weight are re-rounded to powers.
    """
    eps = inst.eps
    sizes = classify_sizes(inst, cfg)
    keep = []
    packs: Dict[str, Tuple[str, ...]] = {}
    new_jobs = []
    any_pack = False
    for j in inst.jobs:
        x = j.release_exp(eps)
        if j.id not in sizes.of(x, "tiny"):
            keep.append(j)
    dates = sorted({j.release_exp(eps) for j in inst.jobs})
    for x in dates:
        tiny_ids = set(sizes.of(x, "tiny"))
        if not tiny_ids:
            continue
        any_pack = True
        tiny = sorted(
            (j for j in inst.jobs if j.id in tiny_ids),
            key=lambda j: (-smith_ratio(j), _tie_key(j, eps)),
        )
        cap = eps.value / cfg.d * eps.interval_length(x)
        lower = cap / 2
        idx = 0
        pack_no = 0
        while idx < len(tiny):
            total_p = Fraction(0)
            members: List[Job] = []
            while idx < len(tiny) and total_p + tiny[idx].p <= cap:
                total_p += tiny[idx].p
                members.append(tiny[idx])
                idx += 1
            total_w = sum((m.w for m in members), Fraction(0))
            if idx >= len(tiny) and total_p < lower:
                total_p = lower  # pad the final pack up to the lower bound
            pid = f"pack:{x}:{pack_no}"
            pack_no += 1
            packs[pid] = tuple(m.id for m in members)
            new_jobs.append(
                Job(pid, eps.release_time(x), eps.round_up(total_p), eps.round_up(total_w))
            )
    factor = (1 + eps.value) ** 4 if any_pack else Fraction(1)
    out = inst.with_jobs(tuple(keep) + tuple(new_jobs))
    return PackResult(out, LossCertificate(factor, "tiny-packs"), packs)


# -- large-job pruning and small-volume caps --------------------------------


@dataclass(frozen=True)
class ShiftResult:
    instance: Instance
    certificate: LossCertificate
    shifted: Dict[str, int]  # job id -> number of date shifts applied


def _large_cap(inst: Instance, cfg: SchemeConfig) -> int:
    if cfg.mode == "theoretical":
        report = theoretical_constants(inst.eps, inst.env.m, cfg)
        return report["max_large_per_type"]
    return cfg.max_large_per_type


def prune_large_jobs(inst: Instance, cfg: SchemeConfig) -> ShiftResult:
    """Per (release date, processing time) large type, keep the cap highest-
    weight jobs; the rest move to the next release date, re-applied date by
    date until fixpoint.  Jobs shifted past X_max stop at the overflow date."""
    eps = inst.eps
    cap = _large_cap(inst, cfg)
    jobs = {j.id: j for j in inst.jobs}
    shifts: Dict[str, int] = {}
    overflow = cfg.x_max + 1
    dates = sorted({j.release_exp(eps) for j in jobs.values()})
    seen = 0
    while seen < len(dates):
        x = dates[seen]
        seen += 1
        if x > cfg.x_max:
            continue
        sizes = classify_sizes(inst.with_jobs(jobs.values()), cfg)
        large = [jobs[i] for i in sizes.of(x, "large")]
        by_type: Dict[int, List[Job]] = {}
        for j in large:
            by_type.setdefault(j.proc_exp(eps), []).append(j)
        for _, group in sorted(by_type.items()):
            group.sort(key=lambda j: (-j.w, j.id))
            for j in group[cap:]:
                target = min(x + 1, overflow)
                jobs[j.id] = replace(j, r=eps.release_time(target))
                shifts[j.id] = shifts.get(j.id, 0) + (target - x)
                if target not in dates:
                    dates.append(target)
                    dates.sort()
    dist = max(shifts.values(), default=0)
    factor = (1 + eps.value) ** dist
    return ShiftResult(
        inst.with_jobs(tuple(jobs[j.id] for j in inst.jobs)),
        LossCertificate(factor, "large-prune"),
        shifts,
    )


def cap_small_volume(inst: Instance, cfg: SchemeConfig) -> ShiftResult:
    """Per release date, keep the maximal Smith-order prefix of small jobs
    with total processing <= m|I_x| (speed-summed on related machines); the
    rest move to the next date and re-enter classification there."""
    eps = inst.eps
    env = inst.env
    capacity_rate = sum((env.speed(i) for i in range(env.m)), Fraction(0))
    jobs = {j.id: j for j in inst.jobs}
    shifts: Dict[str, int] = {}
    overflow = cfg.x_max + 1
    dates = sorted({j.release_exp(eps) for j in jobs.values()})
    seen = 0
    while seen < len(dates):
        x = dates[seen]
        seen += 1
        if x > cfg.x_max:
            continue
        sizes = classify_sizes(inst.with_jobs(jobs.values()), cfg)
        small = sorted(
            (jobs[i] for i in sizes.of(x, "small")),
            key=lambda j: (-smith_ratio(j), _tie_key(j, eps)),
        )
        budget = capacity_rate * eps.interval_length(x)
        total = Fraction(0)
        for j in small:
            if total + j.p_max_finite <= budget:
                total += j.p_max_finite
                continue
            target = min(x + 1, overflow)
            jobs[j.id] = replace(j, r=eps.release_time(target))
            shifts[j.id] = shifts.get(j.id, 0) + (target - x)
            if target not in dates:
                dates.append(target)
                dates.sort()
    dist = max(shifts.values(), default=0)
    factor = (1 + eps.value) ** dist
    return ShiftResult(
        inst.with_jobs(tuple(jobs[j.id] for j in inst.jobs)),
        LossCertificate(factor, "small-cap"),
        shifts,
    )


# -- safety nets ------------------------------------------------------------


@dataclass(frozen=True)
class NetWindow:
    date_exp: int
    interval: int
    machine: int
    start: Fraction
    end: Fraction

    @property
    def length(self) -> Fraction:
        return self.end - self.start


@dataclass(frozen=True)
class SafetyNetPlan:
    windows: Dict[int, NetWindow]  # keyed by release exponent


def _net_demand(inst: Instance, date_jobs: Sequence[Job]) -> Fraction:
    env = inst.env
    if env.kind == "unrelated":
        return sum((j.p_min_finite for j in date_jobs), Fraction(0))
    return sum((j.p for j in date_jobs), Fraction(0)) / env.s_max


def assign_safety_nets(inst: Instance, cfg: SchemeConfig) -> SafetyNetPlan:
    """Reserve, per release date R_x, a window at the end of I_{x+s-1} long
    enough to run all of that date's jobs back to back (on the fastest
    machine for related environments).

    Raises DomainError with the minimal feasible s when a window exceeds the
    stretch capacity eps*|I_{x+s-1}|.
    """
    eps = inst.eps
    env = inst.env
    fastest = max(range(env.m), key=lambda i: (env.speed(i), i))
    by_date: Dict[int, List[Job]] = {}
    for j in inst.jobs:
        by_date.setdefault(j.release_exp(eps), []).append(j)

    demands = {x: _net_demand(inst, js) for x, js in by_date.items()}
    min_s = cfg.s
    feasible = True
    for x, demand in demands.items():
        if demand <= eps.value * eps.interval_length(x + cfg.s - 1):
            continue
        feasible = False
        s2 = cfg.s
        while demand > eps.value * eps.interval_length(x + s2 - 1):
            s2 += 1
        min_s = max(min_s, s2)
    if not feasible:
        raise RefusalError(f"safety net infeasible: increase s (minimal feasible s = {min_s})")

    by_interval: Dict[int, List[int]] = {}
    for x in demands:
        by_interval.setdefault(x + cfg.s - 1, []).append(x)
    windows: Dict[int, NetWindow] = {}
    for interval, date_list in sorted(by_interval.items()):
        cursor = eps.release_time(interval + 1)
        total = Fraction(0)
        # most-recent release date innermost: allocate from the interval end
        for x in sorted(date_list, reverse=True):
            start = cursor - demands[x]
            windows[x] = NetWindow(x, interval, fastest, start, cursor)
            cursor = start
            total += demands[x]
        if total > eps.value * eps.interval_length(interval):
            raise RefusalError(
                f"safety net infeasible: stacked windows overflow interval {interval}; increase s"
            )
    return SafetyNetPlan(windows)


# -- periods and parts ------------------------------------------------------


@dataclass(frozen=True)
class Period:
    index: int
    first_interval: int
    last_interval: int
    rw: Fraction
    insignificant: bool


@dataclass(frozen=True)
class PartStructure:
    periods: Tuple[Period, ...]
    parts: Tuple[Tuple[int, ...], ...]       # period indices per part
    net_only_jobs: Tuple[str, ...]           # jobs of insignificant periods
    first_jobs: Tuple[str, ...]              # first-released job id per part

    def part_of_period(self, k: int) -> int:
        for i, part in enumerate(self.parts):
            if k in part:
                return i
        raise KeyError(k)


def partition_periods(inst: Instance, cfg: SchemeConfig) -> PartStructure:
    """Split the horizon into periods of s intervals; a period is
    insignificant when its release weight is dominated by the release weight
    accumulated since the current part began.  Parts end at insignificant
    periods, whose jobs are flagged safety-net-only."""
    eps = inst.eps
    if not inst.jobs:
        return PartStructure((), ((),), (), ())
    last = max(j.release_exp(eps) for j in inst.jobs)
    n_periods = last // cfg.s + 1
    jobs_by_period: Dict[int, List[Job]] = {}
    for j in inst.jobs:
        jobs_by_period.setdefault(j.release_exp(eps) // cfg.s, []).append(j)
    threshold = eps.value / (1 + eps.value) ** cfg.s
    periods: List[Period] = []
    parts: List[List[int]] = [[]]
    net_only: List[str] = []
    cum = Fraction(0)
    for k in range(n_periods):
        rw = release_weight(jobs_by_period.get(k, ()))
        insig = cum > 0 and rw <= threshold * cum
        periods.append(Period(k, k * cfg.s, (k + 1) * cfg.s - 1, rw, insig))
        parts[-1].append(k)
        if insig:
            net_only.extend(sorted(j.id for j in jobs_by_period.get(k, ())))
            parts.append([])
            cum = Fraction(0)
        else:
            cum += rw
    if not parts[-1]:
        parts.pop()
    firsts = []
    for part in parts:
        members = [j for k in part for j in jobs_by_period.get(k, ())]
        if members:
            firsts.append(min(members, key=lambda j: _tie_key(j, eps)).id)
        else:
            firsts.append("")
    return PartStructure(tuple(periods), tuple(tuple(p) for p in parts), tuple(net_only), tuple(firsts))


# -- relevance --------------------------------------------------------------


def domination_factor(cfg: SchemeConfig) -> Fraction:
    if cfg.delta_jobs == 0 or cfg.gamma == 0:
        return Fraction(0)  # nothing can be dominated
    e = cfg.eps.value
    return e / (cfg.delta_jobs * cfg.gamma * (1 + e) ** (cfg.gamma + cfg.s))


def relevance_step(
    jobs: Sequence[Tuple[str, int, Fraction, bool]],
    x: int,
    cfg: SchemeConfig,
    objective: Objective,
) -> Dict[str, bool]:
    """One monotone relevance update at time R_x.

    `jobs` holds (id, release_exp, weight, previously_relevant) for every job
    released up to R_x; previously_relevant is ignored for jobs released at
    R_x (they start relevant unless immediately dominated).
    """
    out: Dict[str, bool] = {}
    if objective.kind == "makespan":
        for jid, r_exp, _, prev in jobs:
            out[jid] = (r_exp > x - cfg.s) and (prev or r_exp == x)
        return out
    factor = domination_factor(cfg)
    eligible_w = [
        w
        for jid, r_exp, w, prev in jobs
        if (r_exp == x) or (prev and r_exp >= x - cfg.gamma)
    ]
    w_top = max(eligible_w, default=None)
    for jid, r_exp, w, prev in jobs:
        alive = prev or r_exp == x
        if not alive or r_exp < x - cfg.gamma:
            out[jid] = False
        elif w_top is not None and w < factor * w_top:
            out[jid] = False
        else:
            out[jid] = True
    return out


def classify_relevance(
    inst: Instance,
    x: int,
    cfg: SchemeConfig,
    net_only: Sequence[str] = (),
) -> Dict[str, bool]:
    """Relevance flags at time R_x for all jobs released up to R_x, obtained
    by replaying the monotone per-interval rule from the first release."""
    eps = inst.eps
    flags: Dict[str, bool] = {}
    blocked = set(net_only)
    for step in range(0, x + 1):
        view = [
            (j.id, j.release_exp(eps), j.w, flags.get(j.id, False))
            for j in inst.jobs
            if j.release_exp(eps) <= step and j.id not in blocked
        ]
        flags.update(relevance_step(view, step, cfg, inst.objective))
    for jid in blocked:
        flags[jid] = False
    return flags


# -- non-preemptive part rescaling ------------------------------------------


@dataclass(frozen=True)
class RescaleResult:
    instance: Instance
    certificate: LossCertificate
    scale_exps: Tuple[int, ...]  # weight-scale exponent applied per part


def rescale_parts_nonpreemptive(inst: Instance, parts: PartStructure) -> RescaleResult:
    """Scale each part's weights by the minimal power of (1+eps) making the
    accumulated release weight of earlier parts dominated by the part's
    first job."""
    if inst.preemptive:
        raise DomainError("part rescaling applies to non-preemptive instances")
    eps = inst.eps
    if not parts.periods:
        return RescaleResult(inst, LossCertificate(1 + eps.value, "part-rescale"), ())
    s = parts.periods[0].last_interval - parts.periods[0].first_interval + 1
    threshold = eps.value / (1 + eps.value) ** s
    period_of = {k: i for i, part in enumerate(parts.parts) for k in part}
    jobs = {j.id: j for j in inst.jobs}
    scale_exps: List[int] = []
    total = Fraction(0)
    for i, part in enumerate(parts.parts):
        members = [j for j in inst.jobs if period_of[j.release_exp(eps) // s] == i]
        if not members:
            scale_exps.append(0)
            continue
        y = 0
        if i > 0 and total > 0:
            first = jobs[parts.first_jobs[i]]
            base = threshold * first.r * first.w
            while base * eps.power(y) < total:
                y += 1
        scale_exps.append(y)
        for j in members:
            jobs[j.id] = replace(j, w=j.w * eps.power(y))
        total += release_weight([jobs[j.id] for j in members])
    out = inst.with_jobs(tuple(jobs[j.id] for j in inst.jobs))
    return RescaleResult(out, LossCertificate(1 + eps.value, "part-rescale"), tuple(scale_exps))


# -- related / unrelated machine transformations ------------------------------


@dataclass(frozen=True)
class SpeedBoundResult:
    instance: Instance
    certificate: LossCertificate
    folded: Tuple[Tuple[int, Fraction], ...]  # removed (machine index, speed)


def bound_speeds_related(inst: Instance, cfg: SchemeConfig) -> SpeedBoundResult:
    """Remove machines with speed <= (eps/m)*s_max (their work replays inside
    the fastest machine's stretch slack) and renormalize so the slowest
    remaining speed is 1; afterwards s_max <= m/eps."""
    if inst.env.kind != "related":
        raise DomainError("speed bounding applies to related machines")
    if not inst.preemptive:
        raise DomainError("speed bounding needs preemption")
    eps = inst.eps
    env = inst.env
    cut = eps.value / env.m * env.s_max
    keep = [(i, s) for i, s in enumerate(env.speeds) if s > cut]
    folded = tuple((i, s) for i, s in enumerate(env.speeds) if s <= cut)
    if not keep:
        raise AssertionError("fastest machine always survives")
    s_min = min(s for _, s in keep)
    speeds = tuple(s / s_min for _, s in keep)
    new_env = MachineEnv("related", len(keep), speeds)
    assert max(speeds) <= Fraction(env.m) / eps.value
    out = Instance(new_env, inst.jobs, inst.preemptive, inst.objective, eps)
    return SpeedBoundResult(out, LossCertificate((1 + eps.value) ** 2, "speed-bound"), folded)


def bound_ptimes_unrelated(inst: Instance, cfg: SchemeConfig) -> Tuple[Instance, LossCertificate]:
    """Blank (to infinity) processing times that exceed m/eps times the job's
    fastest machine; afterwards each job's finite-ratio spread is <= m/eps."""
    if inst.env.kind != "unrelated":
        raise DomainError("processing-time bounding applies to unrelated machines")
    if not inst.preemptive:
        raise DomainError("processing-time bounding needs preemption")
    eps = inst.eps
    m = inst.env.m
    jobs = []
    for j in inst.jobs:
        pmin = j.p_min_finite
        row = tuple(
            INF if (p is not INF and p > pmin and pmin <= eps.value / m * p) else p
            for p in j.proc
        )
        assert any(p is not INF for p in row)
        jobs.append(replace(j, proc=row))
    out = inst.with_jobs(jobs)
    return out, LossCertificate(1 + eps.value, "ptime-range")


@dataclass(frozen=True)
class JobClassTable:
    instance: Instance                      # after excess-job shifts
    classes: Dict[Tuple, Tuple[str, ...]]   # signature -> job ids
    class_of: Dict[str, Tuple]
    p_tilde: Dict[str, Fraction]
    shifted: Tuple[str, ...]


def classify_job_classes(inst: Instance, cfg: Optional[SchemeConfig] = None) -> JobClassTable:
    """Partition unrelated jobs into classes (same finite support, rows
    proportional); per class and release date apply the desk count cap,
    shifting excess jobs to the next date."""
    if inst.env.kind != "unrelated":
        raise DomainError("job classes apply to unrelated machines")
    eps = inst.eps

    def signature(j: Job) -> Tuple:
        support = tuple(i for i, p in enumerate(j.proc) if p is not INF)
        ref = j.proc[support[0]]
        ratios = tuple(j.proc[i] / ref for i in support)
        return (support, ratios)

    jobs = {j.id: j for j in inst.jobs}
    shifted: List[str] = []
    if cfg is not None:
        dates = sorted({j.release_exp(eps) for j in jobs.values()})
        seen = 0
        while seen < len(dates):
            x = dates[seen]
            seen += 1
            if x > cfg.x_max:
                continue
            by_class: Dict[Tuple, List[Job]] = {}
            for j in jobs.values():
                if j.release_exp(eps) == x:
                    by_class.setdefault(signature(j), []).append(j)
            for sig in sorted(by_class, key=repr):
                group = sorted(by_class[sig], key=lambda j: (-j.w, j.id))
                for j in group[cfg.delta_jobs:]:
                    target = min(x + 1, cfg.x_max + 1)
                    jobs[j.id] = replace(j, r=eps.release_time(target))
                    shifted.append(j.id)
                    if target not in dates:
                        dates.append(target)
                        dates.sort()
    classes: Dict[Tuple, List[str]] = {}
    class_of: Dict[str, Tuple] = {}
    for j in sorted(jobs.values(), key=lambda j: j.id):
        sig = signature(j)
        classes.setdefault(sig, []).append(j.id)
        class_of[j.id] = sig
    table = JobClassTable(
        inst.with_jobs(tuple(jobs[j.id] for j in inst.jobs)),
        {sig: tuple(ids) for sig, ids in classes.items()},
        class_of,
        {j.id: j.p_max_finite for j in jobs.values()},
        tuple(shifted),
    )
    return table


# -- theoretical constants ---------------------------------------------------


def _least_power_at_least(eps: Epsilon, target: Fraction) -> int:
    """Least integer n with (1+eps)^n >= target (target > 0)."""
    n = eps._estimate_exponent(target)
    while eps.power(n) < target:
        n += 1
    while n > 0 and eps.power(n - 1) >= target:
        n -= 1
    return max(n, 0)


def theoretical_constants(eps: Epsilon, m: int, cfg: Optional[SchemeConfig] = None) -> dict:
    """Evaluate the closed-form / least-integer constants behind the desk
    knobs and flag values that are impractical to run with."""
    e = eps.value
    d = cfg.d if cfg is not None else 4
    distinct_large = _least_power_at_least(eps, e ** -4)
    max_large_per_type = frac_ceil(Fraction(m) / e ** 2 + m) * distinct_large
    distinct_small = _least_power_at_least(eps, Fraction(2 * d) / e ** 4)
    smalls_per_date = frac_ceil(Fraction(2 * d * m) / e)
    delta = max_large_per_type + smalls_per_date

    # least s with m*(eps + (8/eps^3)*L) <= eps^2 (1+eps)^(s-1), L >= 4 log(1/eps)
    demand = m * (e + Fraction(8, 1) / e ** 3 * distinct_large)
    s = 1 + _least_power_at_least(eps, demand / e ** 2)

    # least K with t^K/(1-t^K) <= eps for t = 1/(1+delta'), delta' = eps/(1+eps)^s
    delta_prime = e / (1 + e) ** s
    target = (1 + e) / e  # (1+delta')^K >= (1+eps)/eps
    base = 1 + delta_prime
    lo = max(1, int(math.log(float(target)) / math.log(float(base))) - 2)
    K = lo
    while base ** K < target:
        K += 1
    gamma = K * s
    dom_log10 = (
        math.log10(float(e))
        - math.log10(delta * gamma)
        - (gamma + s) * math.log10(float(1 + e))
    )
    warnings = []
    if delta > 50:
        warnings.append(f"Delta = {delta} jobs per date is impractical at desk scale")
    if gamma > 30:
        warnings.append(f"Gamma = {gamma} history intervals is impractical at desk scale")
    report = {
        "epsilon": format_rational(e),
        "m": m,
        "distinct_large_sizes": distinct_large,
        "distinct_small_sizes": distinct_small,
        "max_large_per_type": max_large_per_type,
        "Delta": delta,
        "s": s,
        "K": K,
        "Gamma": gamma,
        "domination_factor_log10": dom_log10,
        "pack_lower_over_interval": format_rational(e / (2 * d)),
        "pack_upper_over_interval": format_rational(e / d),
        "d": d,
        "d_note": "d is a configuration input; the bounds above assume it",
        "warnings": warnings,
    }
    return report


# -- the fixed pipeline -------------------------------------------------------


@dataclass(frozen=True)
class PipelineResult:
    instance: Instance
    certificates: Tuple[LossCertificate, ...]
    packs: Dict[str, Tuple[str, ...]]
    shifted: Dict[str, int]

    @property
    def factor(self) -> Fraction:
        return compose_certificates(self.certificates)


def simplify_pipeline(inst: Instance, cfg: SchemeConfig, rescale: bool = False) -> PipelineResult:
    """round -> classify -> pack -> prune -> cap (-> non-preemptive part
    rescale when requested).  Each step re-establishes the invariants the
    next one needs; certificates compose multiplicatively.

    Part rescaling changes the weight scale of later parts, so it is only
    applied on request (ratio arguments need it; value comparisons do not).
    """
    certs: List[LossCertificate] = []
    rounded = round_instance(inst)
    certs.append(rounded.certificate)
    packed = pack_tiny_jobs(rounded.instance, cfg)
    certs.append(packed.certificate)
    pruned = prune_large_jobs(packed.instance, cfg)
    certs.append(pruned.certificate)
    capped = cap_small_volume(pruned.instance, cfg)
    certs.append(capped.certificate)
    out = capped.instance
    if rescale and not inst.preemptive:
        parts = partition_periods(out, cfg)
        rescaled = rescale_parts_nonpreemptive(out, parts)
        certs.append(rescaled.certificate)
        out = rescaled.instance
    shifted = dict(pruned.shifted)
    for jid, n in capped.shifted.items():
        shifted[jid] = shifted.get(jid, 0) + n
    return PipelineResult(out, tuple(certs), packed.packs, shifted)
