"""Exact-arithmetic domain model: jobs, instances, machine environments,
objectives and interval geometry.

All quantities are `fractions.Fraction`; rounded instances store values that
are exact powers of (1+eps), so equality and hashing are exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Union


class DomainError(ValueError):
    """An argument is outside the operation's contract."""


class RefusalError(RuntimeError):
    """A computation exceeded its configured caps and refuses to guess."""


class PrecisionError(RuntimeError):
    """An interval-arithmetic comparison was ambiguous at the current precision."""


RationalLike = Union[int, str, Fraction]

INF = None  # sentinel for "this machine cannot run the job" in unrelated rows


def parse_rational(text: RationalLike) -> Fraction:
    """Parse a rational given as int, Fraction, decimal string, or "num/den"."""
    if isinstance(text, Fraction):
        return text
    if isinstance(text, int):
        return Fraction(text)
    s = str(text).strip()
    if "/" in s:
        num, den = s.split("/", 1)
        d = int(den)
        if d == 0:
            raise DomainError(f"zero denominator in rational {text!r}")
        return Fraction(int(num), d)
    return Fraction(s)  # handles decimal strings exactly


def format_rational(value: Fraction) -> str:
    """Serialize a Fraction as "num/den" or a plain integer string."""
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def frac_ceil(x: Fraction) -> int:
    return ceil_div(x.numerator, x.denominator)


def frac_floor(x: Fraction) -> int:
    return x.numerator // x.denominator


@lru_cache(maxsize=500_000)
def _pow_cached(base: Fraction, k: int) -> Fraction:
    return base ** k


@lru_cache(maxsize=500_000)
def _exp_cached(base: Fraction, v: Fraction) -> Optional[int]:
    estimate = round(
        (v.numerator.bit_length() - v.denominator.bit_length()) * math.log(2) / math.log(float(base))
    )
    for cand in range(estimate - 2, estimate + 3):
        if _pow_cached(base, cand) == v:
            return cand
    k = estimate
    while _pow_cached(base, k) < v:
        k += 1
    while _pow_cached(base, k) > v:
        k -= 1
    return k if _pow_cached(base, k) == v else None


@dataclass(frozen=True)
class Epsilon:
    """The accuracy parameter; base (1+eps) of the geometric grid.

    0 < value <= 1 and the base is rational, so every power is exactly
    representable.
    """

    value: Fraction

    def __post_init__(self):
        v = self.value
        if not isinstance(v, Fraction):
            object.__setattr__(self, "value", parse_rational(v))
            v = self.value
        if not (0 < v <= 1):
            raise DomainError(f"epsilon must satisfy 0 < eps <= 1, got {v}")
        object.__setattr__(self, "_base", 1 + v)

    @property
    def base(self) -> Fraction:
        return self._base

    def power(self, k: int) -> Fraction:
        """(1+eps)**k, exact for any integer k."""
        return _pow_cached(self._base, k)

    def release_time(self, x: int) -> Fraction:
        """R_x = (1+eps)**x, the left endpoint of interval x."""
        return self.power(x)

    def interval_length(self, x: int) -> Fraction:
        """|I_x| = eps * (1+eps)**x."""
        return self.value * self.power(x)

    def _estimate_exponent(self, v: Fraction) -> int:
        num_bits = v.numerator.bit_length() - v.denominator.bit_length()
        return round(num_bits * math.log(2) / math.log(float(self.base)))

    def interval_of(self, t: Fraction) -> int:
        """Index x with (1+eps)**x <= t < (1+eps)**(x+1).

        Raises DomainError for t < 1: the time horizon starts at 1.
        """
        t = parse_rational(t)
        if t < 1:
            raise DomainError(f"time {t} is before the horizon start t=1")
        x = max(0, self._estimate_exponent(t))
        while self.power(x) > t:
            x -= 1
        while self.power(x + 1) <= t:
            x += 1
        return x

    def exponent_of(self, v: Fraction) -> int:
        """The integer k with (1+eps)**k == v; DomainError if v is not a power."""
        v = parse_rational(v)
        if v <= 0:
            raise DomainError(f"{v} is not a power of {self.base}")
        k = _exp_cached(self._base, v)
        if k is None:
            raise DomainError(f"{v} is not an exact power of {self.base}")
        return k

    def is_power(self, v: Fraction) -> bool:
        try:
            self.exponent_of(v)
            return True
        except DomainError:
            return False

    def round_up(self, v: Fraction) -> Fraction:
        """Smallest power of (1+eps) that is >= v."""
        v = parse_rational(v)
        if v <= 0:
            raise DomainError(f"cannot round non-positive value {v}")
        k = self._estimate_exponent(v)
        while self.power(k) < v:
            k += 1
        while k > -(10 ** 9) and self.power(k - 1) >= v:
            k -= 1
        return self.power(k)

    def round_down(self, v: Fraction) -> Fraction:
        """Largest power of (1+eps) that is <= v."""
        v = parse_rational(v)
        if v <= 0:
            raise DomainError(f"cannot round non-positive value {v}")
        k = self._estimate_exponent(v)
        while self.power(k) > v:
            k -= 1
        while self.power(k + 1) <= v:
            k += 1
        return self.power(k)


ProcField = Union[Fraction, tuple]  # single requirement, or per-machine row


@dataclass(frozen=True)
class Job:
    """One task: release date, processing requirement(s) and weight.

    `proc` is a single Fraction for identical/related machines or a tuple with
    one entry per machine (None = cannot run there) for unrelated machines.
    """

    id: str
    r: Fraction
    proc: ProcField
    w: Fraction

    def __post_init__(self):
        if self.r <= 0 or self.w <= 0:
            raise DomainError(f"job {self.id}: release date and weight must be positive")
        if isinstance(self.proc, tuple):
            if not any(p is not INF for p in self.proc):
                raise DomainError(f"job {self.id}: no machine can process it")
            for p in self.proc:
                if p is not INF and p <= 0:
                    raise DomainError(f"job {self.id}: processing times must be positive")
        elif self.proc <= 0:
            raise DomainError(f"job {self.id}: processing time must be positive")

    @property
    def unrelated(self) -> bool:
        return isinstance(self.proc, tuple)

    @property
    def p(self) -> Fraction:
        """Single processing requirement (identical/related instances only)."""
        if self.unrelated:
            raise DomainError(f"job {self.id} has per-machine processing times")
        return self.proc

    def p_on(self, machine: int) -> Optional[Fraction]:
        if self.unrelated:
            return self.proc[machine]
        return self.proc

    @property
    def p_max_finite(self) -> Fraction:
        """Largest finite processing requirement across machines."""
        if self.unrelated:
            return max(p for p in self.proc if p is not INF)
        return self.proc

    @property
    def p_min_finite(self) -> Fraction:
        if self.unrelated:
            return min(p for p in self.proc if p is not INF)
        return self.proc

    def release_exp(self, eps: Epsilon) -> int:
        return eps.exponent_of(self.r)

    def proc_exp(self, eps: Epsilon) -> int:
        return eps.exponent_of(self.p)

    def weight_exp(self, eps: Epsilon) -> int:
        return eps.exponent_of(self.w)


@dataclass(frozen=True)
class MachineEnv:
    """Machine environment: identical(m), related(speeds), or unrelated(m)."""

    kind: str
    m: int
    speeds: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("identical", "related", "unrelated"):
            raise DomainError(f"unknown machine kind {self.kind!r}")
        if self.m < 1:
            raise DomainError("machine count must be >= 1")
        if self.kind == "related":
            if self.speeds is None or len(self.speeds) != self.m:
                raise DomainError("related environment needs one speed per machine")
            if min(self.speeds) <= 0:
                raise DomainError("speeds must be positive")
        elif self.speeds is not None:
            raise DomainError(f"{self.kind} environment takes no speeds")

    def speed(self, machine: int) -> Fraction:
        if self.kind == "related":
            return self.speeds[machine]
        return Fraction(1)

    @property
    def s_max(self) -> Fraction:
        if self.kind == "related":
            return max(self.speeds)
        return Fraction(1)


@dataclass(frozen=True)
class Objective:
    """weighted_completion, monomial(k, alpha), or makespan."""

    kind: str
    k: Optional[Fraction] = None
    alpha: Optional[Fraction] = None

    def __post_init__(self):
        if self.kind not in ("weighted_completion", "monomial", "makespan"):
            raise DomainError(f"unknown objective {self.kind!r}")
        if self.kind == "monomial":
            if self.k is None or self.alpha is None:
                raise DomainError("monomial objective needs k and alpha")
            if self.k <= 0 or self.alpha < 1:
                raise DomainError("monomial needs k > 0 and alpha >= 1")
        elif self.k is not None or self.alpha is not None:
            raise DomainError(f"{self.kind} objective takes no parameters")

    @property
    def weighted(self) -> bool:
        return self.kind != "makespan"


WEIGHTED_COMPLETION = Objective("weighted_completion")
MAKESPAN = Objective("makespan")


@dataclass(frozen=True)
class Instance:
    """Machine environment + job list + preemption flag + objective."""

    env: MachineEnv
    jobs: tuple
    preemptive: bool
    objective: Objective
    eps: Epsilon

    def __post_init__(self):
        ids = [j.id for j in self.jobs]
        if len(set(ids)) != len(ids):
            raise DomainError("job ids must be unique")
        for j in self.jobs:
            if self.env.kind == "unrelated":
                if not j.unrelated or len(j.proc) != self.env.m:
                    raise DomainError(f"job {j.id}: needs a full per-machine row")
            elif j.unrelated:
                raise DomainError(f"job {j.id}: per-machine row in a {self.env.kind} instance")

    def job(self, job_id: str) -> Job:
        for j in self.jobs:
            if j.id == job_id:
                return j
        raise KeyError(job_id)

    def is_power_aligned(self) -> bool:
        """True when every value is an exact power of (1+eps) and r >= 1."""
        e = self.eps
        for j in self.jobs:
            vals = [j.r, j.w]
            procs = j.proc if j.unrelated else (j.proc,)
            vals.extend(p for p in procs if p is not INF)
            if not all(e.is_power(v) for v in vals):
                return False
            if j.r < 1:
                return False
        if self.env.kind == "related":
            if not all(e.is_power(s) for s in self.env.speeds):
                return False
        return True

    def is_rounded(self) -> bool:
        """True when power-aligned and r >= eps*p (speed-adjusted), the full
        pipeline invariant."""
        if not self.is_power_aligned():
            return False
        e = self.eps
        for j in self.jobs:
            limit = e.value * j.p_max_finite
            if self.env.kind == "related":
                limit = e.value * j.p_max_finite / self.env.s_max
            if self.env.kind == "unrelated":
                limit = e.value * j.p_min_finite
            if j.r < limit:
                return False
        if self.env.kind == "related" and min(self.env.speeds) != 1:
            return False
        return True

    def with_jobs(self, jobs: Iterable[Job]) -> "Instance":
        return replace(self, jobs=tuple(jobs))

    # -- JSON wire format -------------------------------------------------

    def to_obj(self) -> dict:
        machines = {"kind": self.env.kind, "m": self.env.m}
        if self.env.kind == "related":
            machines["speeds"] = [format_rational(s) for s in self.env.speeds]
        obj: dict = {"kind": self.objective.kind}
        if self.objective.kind == "monomial":
            obj["k"] = format_rational(self.objective.k)
            obj["alpha"] = format_rational(self.objective.alpha)
        jobs = []
        for j in self.jobs:
            if j.unrelated:
                p = ["inf" if v is INF else format_rational(v) for v in j.proc]
            else:
                p = format_rational(j.proc)
            jobs.append({"id": j.id, "r": format_rational(j.r), "p": p, "w": format_rational(j.w)})
        return {
            "epsilon": format_rational(self.eps.value),
            "machines": machines,
            "preemptive": self.preemptive,
            "objective": obj,
            "jobs": jobs,
        }

    def to_json(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_obj(), indent=indent, sort_keys=True)

    @staticmethod
    def from_obj(data: dict) -> "Instance":
        try:
            eps = Epsilon(parse_rational(data["epsilon"]))
            mach = data["machines"]
            speeds = None
            if mach["kind"] == "related":
                speeds = tuple(parse_rational(s) for s in mach["speeds"])
            env = MachineEnv(mach["kind"], int(mach["m"]), speeds)
            objd = data["objective"]
            if objd["kind"] == "monomial":
                objective = Objective("monomial", parse_rational(objd["k"]), parse_rational(objd["alpha"]))
            else:
                objective = Objective(objd["kind"])
            jobs = []
            for jd in data["jobs"]:
                praw = jd["p"]
                if isinstance(praw, list):
                    proc: ProcField = tuple(
                        INF if str(v).strip() == "inf" else parse_rational(v) for v in praw
                    )
                else:
                    proc = parse_rational(praw)
                jobs.append(Job(str(jd["id"]), parse_rational(jd["r"]), proc, parse_rational(jd["w"])))
            return Instance(env, tuple(jobs), bool(data["preemptive"]), objective, eps)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(f"malformed instance JSON: {exc}") from exc

    @staticmethod
    def from_json(text: str) -> "Instance":
        return Instance.from_obj(json.loads(text))


def release_weight(jobs: Iterable[Job]) -> Fraction:
    """Sum of r_j * w_j; a universal lower bound on the weighted-completion
    contribution of the given jobs."""
    return sum((j.r * j.w for j in jobs), Fraction(0))


@dataclass(frozen=True)
class SchemeConfig:
    """Engine constants.

    Desk mode runs with these values directly; theoretical mode only changes
    what `theoretical_constants` reports.  gamma must equal K*s, and 1/mu and
    1/delta_prob must be integers.
    """

    eps: Epsilon
    s: int = 3
    delta_jobs: int = 2          # max jobs per release date (Delta)
    K: int = 2                   # period-domination constant
    gamma: int = 6               # relevance window, = K*s
    mu: Fraction = Fraction(1, 2)
    d: int = 4                   # tiny-job pack constant
    delta_prob: Fraction = Fraction(1, 8)
    G: int = 4                   # per-interval grid slots
    x_max: int = 4               # last release interval of the universe
    e_cap: int = 40              # BFS depth cap
    mode: str = "desk"
    max_large_per_type: int = 4  # desk-mode cap used by prune_large_jobs
    oracle_job_cap: int = 7
    oracle_node_cap: int = 10 ** 7
    class_cap: int = 200_000
    tree_cap: int = 500_000
    rand_enum_cap: int = 64
    monomial_precision: int = 60

    def __post_init__(self):
        if self.mode not in ("desk", "theoretical"):
            raise DomainError(f"unknown mode {self.mode!r}")
        for name in ("s", "delta_jobs", "K", "gamma", "d", "G", "x_max", "e_cap"):
            if getattr(self, name) < 0 or (name in ("s", "d", "G") and getattr(self, name) < 1):
                raise DomainError(f"config field {name} must be positive")
        if self.gamma != self.K * self.s:
            raise DomainError(f"gamma must equal K*s ({self.K * self.s}), got {self.gamma}")
        for name in ("mu", "delta_prob"):
            v = getattr(self, name)
            if not (0 < v <= 1) or (1 / v).denominator != 1:
                raise DomainError(f"1/{name} must be a positive integer, got {v}")

    @property
    def slot_fraction(self) -> Fraction:
        return Fraction(1, self.G)

    def slot_length(self, x: int) -> Fraction:
        return self.eps.interval_length(x) / self.G

    CONFIG_KEYS = {
        "epsilon": "eps", "ε": "eps",
        "s": "s",
        "Delta": "delta_jobs", "Δ": "delta_jobs",
        "Gamma": "gamma", "Γ": "gamma",
        "K": "K",
        "mu": "mu", "μ": "mu",
        "d": "d",
        "delta": "delta_prob", "δ": "delta_prob",
        "G": "G",
        "X_max": "x_max",
        "E_cap": "e_cap",
        "mode": "mode",
        "max_large_per_type": "max_large_per_type",
        "oracle_job_cap": "oracle_job_cap",
        "oracle_node_cap": "oracle_node_cap",
        "class_cap": "class_cap",
        "tree_cap": "tree_cap",
        "rand_enum_cap": "rand_enum_cap",
        "monomial_precision": "monomial_precision",
    }

    @staticmethod
    def from_obj(data: dict) -> "SchemeConfig":
        kwargs = {}
        for key, value in data.items():
            attr = SchemeConfig.CONFIG_KEYS.get(key)
            if attr is None:
                raise DomainError(f"unknown scheme config key {key!r}")
            if attr == "eps":
                kwargs[attr] = Epsilon(parse_rational(value))
            elif attr in ("mu", "delta_prob"):
                kwargs[attr] = parse_rational(value)
            elif attr == "mode":
                kwargs[attr] = str(value)
            else:
                kwargs[attr] = int(value)
        if "eps" not in kwargs:
            raise DomainError("scheme config needs an epsilon")
        return SchemeConfig(**kwargs)

    def to_obj(self) -> dict:
        return {
            "epsilon": format_rational(self.eps.value),
            "s": self.s,
            "Delta": self.delta_jobs,
            "Gamma": self.gamma,
            "K": self.K,
            "mu": format_rational(self.mu),
            "d": self.d,
            "delta": format_rational(self.delta_prob),
            "G": self.G,
            "X_max": self.x_max,
            "E_cap": self.e_cap,
            "mode": self.mode,
            "max_large_per_type": self.max_large_per_type,
        }
