"""Concrete schedules: processing pieces with exact rational times,
completion records, feasibility checking and objective evaluation.

A schedule is a flat list of pieces.  Grid-based schedules emit slot-aligned
pieces; the refined oracle emits arbitrary rational pieces.  Both go through
the same checker.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Tuple, Union

import mpmath

from .core import (
    INF,
    DomainError,
    Instance,
    Objective,
    PrecisionError,
    format_rational,
    parse_rational,
)


@dataclass(frozen=True)
class Piece:
    """One maximal run of a job on one machine.

    `work` is the processing requirement consumed (time * speed on related
    machines; raw time on unrelated rows).  `work` may be smaller than the
    occupied span when a job finishes inside a grid slot and the machine
    idles for the remainder.  `net` marks runs inside a safety-net window.
    """

    job: str
    machine: int
    start: Fraction
    end: Fraction
    work: Fraction
    net: bool = False

    def __post_init__(self):
        if self.end <= self.start:
            raise DomainError(f"piece of {self.job}: empty or negative span")
        if self.work <= 0:
            raise DomainError(f"piece of {self.job}: work must be positive")


@dataclass(frozen=True)
class CompletionRecord:
    job: str
    interval: int            # index x of the interval the job finishes in
    raw: Fraction            # actual completion time
    snapped: Fraction        # R_{x+1}


@dataclass(frozen=True)
class Schedule:
    """Pieces plus per-job completion records for one instance."""

    inst: Instance
    pieces: Tuple[Piece, ...]
    completions: Dict[str, CompletionRecord] = field(default_factory=dict)

    def work_of(self, job_id: str) -> Fraction:
        return sum((p.work for p in self.pieces if p.job == job_id), Fraction(0))

    def progress_of(self, job_id: str) -> Fraction:
        """Fraction of the job done; handles unrelated per-machine rates."""
        job = self.inst.job(job_id)
        if not job.unrelated:
            return self.work_of(job_id) / job.p
        total = Fraction(0)
        for p in self.pieces:
            if p.job != job_id:
                continue
            req = job.p_min_finite if p.machine == self.inst.env.m else job.proc[p.machine]
            if req is INF:
                raise DomainError(f"job {job_id} ran on an infeasible machine {p.machine}")
            total += p.work / req
        return total

    def unfinished_jobs(self) -> List[str]:
        out = []
        for j in self.inst.jobs:
            if j.id not in self.completions or self.progress_of(j.id) < 1:
                out.append(j.id)
        return out

    # -- serialization ----------------------------------------------------

    def to_obj(self) -> dict:
        pieces = [
            {
                "job": p.job,
                "machine": p.machine,
                "start": format_rational(p.start),
                "end": format_rational(p.end),
                "work": format_rational(p.work),
                "net": p.net,
            }
            for p in self.pieces
        ]
        comps = {
            c.job: {
                "interval": c.interval,
                "raw": format_rational(c.raw),
                "snapped": format_rational(c.snapped),
            }
            for c in self.completions.values()
        }
        return {"instance": self.inst.to_obj(), "pieces": pieces, "completions": comps}

    def to_json(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_obj(), indent=indent, sort_keys=True)

    @staticmethod
    def from_obj(data: dict) -> "Schedule":
        inst = Instance.from_obj(data["instance"])
        pieces = tuple(
            Piece(
                str(p["job"]),
                int(p["machine"]),
                parse_rational(p["start"]),
                parse_rational(p["end"]),
                parse_rational(p["work"]),
                bool(p.get("net", False)),
            )
            for p in data["pieces"]
        )
        comps = {
            str(job): CompletionRecord(
                str(job), int(c["interval"]), parse_rational(c["raw"]), parse_rational(c["snapped"])
            )
            for job, c in data["completions"].items()
        }
        return Schedule(inst, pieces, comps)


@dataclass(frozen=True)
class Violation:
    rule: str
    detail: str

    def __str__(self):
        return f"{self.rule}: {self.detail}"


def check_schedule_feasibility(sched: Schedule, inst: Optional[Instance] = None) -> Optional[Violation]:
    """Return the first violated constraint, or None when feasible.

    Checks machine exclusivity, per-job non-parallelism, work conservation,
    per-piece rate limits, release-date respect, and (for non-preemptive
    instances) contiguity: a job runs on a single machine and its internal
    gaps must be covered by safety-net runs on that machine.
    """
    inst = inst or sched.inst
    by_machine: Dict[int, List[Piece]] = {}
    by_job: Dict[str, List[Piece]] = {}
    for p in sched.pieces:
        # machine index env.m is the reserved safety-net lane; only net
        # pieces may live there
        if not (0 <= p.machine < inst.env.m) and not (p.machine == inst.env.m and p.net):
            return Violation("machine", f"piece of {p.job} on unknown machine {p.machine}")
        by_machine.setdefault(p.machine, []).append(p)
        by_job.setdefault(p.job, []).append(p)
        try:
            job = inst.job(p.job)
        except KeyError:
            return Violation("job", f"piece for unknown job {p.job}")
        on_lane = p.machine == inst.env.m
        rate = Fraction(1) if on_lane else inst.env.speed(p.machine)
        if job.unrelated and not on_lane:
            if job.proc[p.machine] is INF:
                return Violation("machine", f"job {p.job} on infeasible machine {p.machine}")
            rate = Fraction(1)
        if p.work > (p.end - p.start) * rate:
            return Violation("rate", f"job {p.job} does {p.work} work in span {p.end - p.start}")
        if p.start < job.r:
            return Violation("release", f"job {p.job} processed at {p.start} before release {job.r}")

    for machine, pieces in sorted(by_machine.items()):
        pieces.sort(key=lambda p: (p.start, p.end))
        for a, b in zip(pieces, pieces[1:]):
            if b.start < a.end:
                return Violation(
                    "capacity", f"machine {machine}: {a.job} and {b.job} overlap at {b.start}"
                )

    for job_id, pieces in sorted(by_job.items()):
        pieces.sort(key=lambda p: (p.start, p.end))
        for a, b in zip(pieces, pieces[1:]):
            if b.start < a.end:
                return Violation(
                    "parallel", f"job {job_id} runs on two machines at {b.start}"
                )
        job = inst.job(job_id)
        if job.unrelated:
            total = Fraction(0)
            for p in pieces:
                total += p.work / job.proc[p.machine]
            if total > 1:
                return Violation("conservation", f"job {job_id} overprocessed ({total} of 1)")
        else:
            done = sum((p.work for p in pieces), Fraction(0))
            if done > job.p:
                return Violation("conservation", f"job {job_id} overprocessed ({done} of {job.p})")

    if not inst.preemptive:
        for job_id, all_pieces in sorted(by_job.items()):
            pieces = [p for p in all_pieces if p.machine != inst.env.m]
            if not pieces:
                continue  # completed entirely on the net lane
            machines = {p.machine for p in pieces}
            if len(machines) > 1:
                return Violation("contiguity", f"non-preemptive job {job_id} uses machines {sorted(machines)}")
            machine = next(iter(machines))
            pieces.sort(key=lambda p: p.start)
            cover = sorted(
                (q.start, q.end)
                for q in by_machine.get(machine, [])
                if q.net and q.job != job_id
            )
            for a, b in zip(pieces, pieces[1:]):
                gap_lo, gap_hi = a.end, b.start
                for lo, hi in cover:
                    if gap_lo >= gap_hi:
                        break
                    if lo <= gap_lo < hi:
                        gap_lo = hi
                if gap_lo < gap_hi:
                    return Violation(
                        "contiguity",
                        f"non-preemptive job {job_id} pauses over ({a.end}, {b.start}) without a net window",
                    )
    return None


def interval_view(sched: Schedule, cfg) -> Optional[list]:
    """Per-interval serialization: machine -> (job, slot count) lists plus
    net runs, for slot-aligned schedules.  Returns None when some piece is
    not aligned to the grid (refined witnesses)."""
    eps = sched.inst.eps
    out: Dict[int, dict] = {}
    for p in sorted(sched.pieces, key=lambda p: (p.start, p.machine, p.job)):
        x = eps.interval_of(p.start)
        entry = out.setdefault(
            x, {"x": x, "machines": [[] for _ in range(sched.inst.env.m)], "nets": []}
        )
        if p.net:
            lane = "lane" if p.machine == sched.inst.env.m else p.machine
            entry["nets"].append([p.job, lane, format_rational(p.work)])
            continue
        slot = cfg.slot_length(x)
        count = (p.end - p.start) / slot
        if count.denominator != 1:
            return None
        entry["machines"][p.machine].append([p.job, int(count)])
    return [out[x] for x in sorted(out)]


# -- objective evaluation --------------------------------------------------


@dataclass(frozen=True)
class IntervalValue:
    """A value known only to lie in [lo, hi]; comparisons inside the width fail."""

    lo: Fraction
    hi: Fraction

    def __add__(self, other):
        if isinstance(other, IntervalValue):
            return IntervalValue(self.lo + other.lo, self.hi + other.hi)
        return IntervalValue(self.lo + other, self.hi + other)

    __radd__ = __add__

    def scale(self, c: Fraction) -> "IntervalValue":
        if c < 0:
            return IntervalValue(self.hi * c, self.lo * c)
        return IntervalValue(self.lo * c, self.hi * c)

    def _cmp(self, other, op: str) -> bool:
        lo2, hi2 = (other.lo, other.hi) if isinstance(other, IntervalValue) else (other, other)
        if op == "lt":
            if self.hi < lo2:
                return True
            if self.lo >= hi2:
                return False
        elif op == "gt":
            if self.lo > hi2:
                return True
            if self.hi <= lo2:
                return False
        raise PrecisionError(
            f"comparison of [{self.lo}, {self.hi}] against [{lo2}, {hi2}] is ambiguous; "
            "raise monomial_precision"
        )

    def __lt__(self, other):
        return self._cmp(other, "lt")

    def __gt__(self, other):
        return self._cmp(other, "gt")


def _nth_root_exact(v: Fraction, n: int) -> Optional[Fraction]:
    def iroot(a: int) -> Optional[int]:
        if a in (0, 1):
            return a
        r = round(a ** (1.0 / n))
        for c in (r - 1, r, r + 1):
            if c >= 0 and c ** n == a:
                return c
        return None

    num = iroot(v.numerator)
    den = iroot(v.denominator)
    if num is None or den is None:
        return None
    return Fraction(num, den)


def pow_rational(base: Fraction, alpha: Fraction, precision: int) -> Union[Fraction, IntervalValue]:
    """base**alpha, exact when the power is rational, else a certified interval."""
    if base <= 0:
        raise DomainError("monomial objective needs positive completion times")
    if alpha.denominator == 1:
        return base ** alpha.numerator
    root = _nth_root_exact(base, alpha.denominator)
    if root is not None:
        return root ** alpha.numerator
    with mpmath.workprec(precision):
        lo = mpmath.mpf(base.numerator) / mpmath.mpf(base.denominator)
        val = mpmath.power(lo, mpmath.mpf(alpha.numerator) / mpmath.mpf(alpha.denominator))
        err = mpmath.mpf(2) ** (-precision + 8) * val
        f_lo = Fraction(str(mpmath.nstr(val - err, 40)))
        f_hi = Fraction(str(mpmath.nstr(val + err, 40)))
    return IntervalValue(f_lo, f_hi)


def completion_value(
    c: CompletionRecord, obj: Objective, w: Fraction, snapped: bool, precision: int = 60
) -> Union[Fraction, IntervalValue]:
    """Contribution of one completed job to the objective."""
    t = c.snapped if snapped else c.raw
    if obj.kind == "weighted_completion":
        return w * t
    if obj.kind == "monomial":
        powed = pow_rational(t, obj.alpha, precision)
        if isinstance(powed, IntervalValue):
            return powed.scale(w * obj.k)
        return w * obj.k * powed
    return t  # makespan: combined by max, weight ignored


def evaluate_objective(
    sched: Schedule, obj: Optional[Objective] = None, snapped: bool = False, precision: int = 60
) -> Union[Fraction, IntervalValue]:
    """Objective value of a complete schedule, raw or snapped.

    Raises DomainError naming the unfinished jobs if the schedule is not
    complete.
    """
    obj = obj or sched.inst.objective
    unfinished = sched.unfinished_jobs()
    if unfinished:
        raise DomainError(f"schedule incomplete; unfinished jobs: {sorted(unfinished)}")
    if obj.kind == "makespan":
        times = [(c.snapped if snapped else c.raw) for c in sched.completions.values()]
        return max(times) if times else Fraction(0)
    total: Union[Fraction, IntervalValue] = Fraction(0)
    for j in sched.inst.jobs:
        total = total + completion_value(sched.completions[j.id], obj, j.w, snapped, precision)
    return total
