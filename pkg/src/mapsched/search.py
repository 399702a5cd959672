"""The enumeration engine: bounded adversary universes, reachable
configuration classes, cycle detection, exact map evaluation, best-map
search, and the randomized extension.

A universe fixes, per release date, a finite catalog of job multisets the
adversary may release (always including releasing nothing), plus the option
to stop forever.  Instances are choice sequences; competitive ratios are
exact maxima over the realistic end-configuration classes.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
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
    WEIGHTED_COMPLETION,
    format_rational,
    frac_ceil,
    frac_floor,
    parse_rational,
    release_weight,
)
from .schedule import IntervalValue, completion_value
from . import algmap, oracle
from .algmap import (
    AlgorithmMap,
    EngineContext,
    MapIncompleteError,
    SimState,
    canonicalize_configuration,
    key_text,
)
from .oracle import OracleCache, opt_value


# -- universes ----------------------------------------------------------------


JobSpec = Tuple[int, int]          # (processing exponent relative to date, weight exponent)
Multiset = Tuple[JobSpec, ...]     # sorted job specs released together


@dataclass(frozen=True)
class Universe:
    """Per release date, the catalog of multisets the adversary may release.

    With repeat=k the last k catalog entries recur forever (for cycling
    studies); otherwise nothing is released past the catalog end.
    """

    cfg: SchemeConfig
    env: MachineEnv
    preemptive: bool
    objective: Objective
    catalogs: Tuple[Tuple[Multiset, ...], ...]
    repeat: Optional[int] = None

    def catalog(self, x: int) -> Tuple[Multiset, ...]:
        if x < len(self.catalogs):
            return self.catalogs[x]
        if self.repeat:
            base = len(self.catalogs) - self.repeat
            return self.catalogs[base + (x - base) % self.repeat]
        return ((),)

    @property
    def finite(self) -> bool:
        return not self.repeat

    @property
    def max_date(self) -> int:
        return len(self.catalogs) - 1

    def jobs_for(self, x: int, multiset: Multiset) -> Tuple[Job, ...]:
        eps = self.cfg.eps
        out = []
        for i, (pe, we) in enumerate(multiset):
            out.append(
                Job(f"x{x}n{i}", eps.release_time(x), eps.power(x + pe), eps.power(we))
            )
        return tuple(out)

    def instance_for(self, choices: Sequence[int]) -> Instance:
        """Materialize a choice sequence; -1 marks the adversary stopping."""
        jobs: List[Job] = []
        for x, pick in enumerate(choices):
            if pick < 0:
                break
            jobs.extend(self.jobs_for(x, self.catalog(x)[pick]))
        return Instance(self.env, tuple(jobs), self.preemptive, self.objective, self.cfg.eps)

    def instance_count(self) -> int:
        if not self.finite:
            raise RefusalError("infinite universe: instance count is unbounded")
        n = 1
        for c in self.catalogs:
            n *= len(c)
        return n

    def all_instances(self) -> Iterable[Tuple[Tuple[int, ...], Instance]]:
        for choices in itertools.product(*(range(len(c)) for c in self.catalogs)):
            yield choices, self.instance_for(choices)


def build_universe(
    cfg: SchemeConfig,
    proc_rel_exps: Sequence[int],
    weight_exps: Sequence[int] = (0,),
    m: int = 1,
    preemptive: bool = True,
    objective: Objective = WEIGHTED_COMPLETION,
    x_max: Optional[int] = None,
    repeat: Optional[int] = None,
) -> Universe:
    """Catalogs of all multisets of up to Delta admissible jobs per date.

    A processing exponent is admissible when the resulting size sits inside
    the simplified window ((eps/2d)|I_x|, (1/eps) R_x]; sizes outside it never
    appear.  The same relative exponents recur at every date, so catalogs are
    shift-stationary.
    """
    eps = cfg.eps
    e = eps.value
    x_max = cfg.x_max if x_max is None else x_max
    admissible = []
    for pe in sorted(set(proc_rel_exps)):
        rel_size = eps.power(pe)
        if e ** 2 / (2 * cfg.d) < rel_size <= 1 / e:
            admissible.append(pe)
    specs = [(pe, we) for pe in admissible for we in sorted(set(weight_exps))]
    multisets: List[Multiset] = [()]
    for size in range(1, cfg.delta_jobs + 1):
        multisets.extend(itertools.combinations_with_replacement(specs, size))
    catalogs = tuple(tuple(multisets) for _ in range(x_max + 1))
    uni = Universe(cfg, MachineEnv("identical", m), preemptive, objective, catalogs, repeat)
    if uni.finite and uni.instance_count() > cfg.tree_cap:
        raise RefusalError(
            f"universe holds {uni.instance_count()} instances, over cap {cfg.tree_cap}"
        )
    env_ctx = EngineContext(cfg, uni.env, preemptive, objective)
    for x in range(x_max + 1):
        for ms in uni.catalog(x):
            algmap.check_net_feasibility(uni.jobs_for(x, ms), env_ctx)
    return uni


def explicit_universe(
    cfg: SchemeConfig,
    catalogs: Sequence[Sequence[Multiset]],
    m: int = 1,
    preemptive: bool = True,
    objective: Objective = WEIGHTED_COMPLETION,
    repeat: Optional[int] = None,
) -> Universe:
    cats = tuple(tuple(tuple(sorted(ms)) for ms in cat) for cat in catalogs)
    return Universe(cfg, MachineEnv("identical", m), preemptive, objective, cats, repeat)


def universe_context(uni: Universe) -> EngineContext:
    return EngineContext(uni.cfg, uni.env, uni.preemptive, uni.objective)


# -- reachable classes and cycling ---------------------------------------------


@dataclass(frozen=True)
class Branch:
    """One BFS node: a configuration plus how the adversary got here."""

    state: SimState
    choices: Tuple[int, ...]   # catalog picks per date so far (-1 marks stop)

    @property
    def stopped(self) -> bool:
        return self.state.releases_done


@dataclass
class ReachableSets:
    levels: List[List[str]]                    # sorted key texts per interval
    cycle: Optional[Tuple[int, int, int]]      # (x_bar, x_bar2, period)
    truncated: bool
    witnesses: Dict[str, Branch]               # first concrete branch per key


def _branch_children(branch: Branch, encoding: tuple, uni: Universe, ctx: EngineContext) -> List[Branch]:
    """Apply the action, then branch the adversary: stop, or any catalog
    multiset for the next date."""
    concrete = algmap.instantiate_action(encoding, branch.state, ctx)
    step = algmap.apply_action(branch.state, concrete, ctx)
    x_next = step.state.x
    children = []
    if branch.stopped:
        nxt = algmap.add_releases(step.state, (), ctx, releases_done=True)
        return [Branch(nxt, branch.choices)]
    cat = uni.catalog(x_next)
    stop_implied = uni.finite and x_next > uni.max_date
    if not stop_implied:
        stopped = algmap.add_releases(step.state, (), ctx, releases_done=True)
        children.append(Branch(stopped, branch.choices + (-1,)))
        for pick, ms in enumerate(cat):
            jobs = uni.jobs_for(x_next, ms)
            nxt = algmap.add_releases(step.state, jobs, ctx, releases_done=False)
            children.append(Branch(nxt, branch.choices + (pick,)))
    else:
        nxt = algmap.add_releases(step.state, (), ctx, releases_done=True)
        children.append(Branch(nxt, branch.choices))
    return children


def _initial_branches(uni: Universe, ctx: EngineContext) -> List[Branch]:
    out = []
    empty = SimState(0, (), (), False)
    stopped = algmap.add_releases(empty, (), ctx, releases_done=True)
    out.append(Branch(stopped, (-1,)))
    for pick, ms in enumerate(uni.catalog(0)):
        st = algmap.add_releases(empty, uni.jobs_for(0, ms), ctx, releases_done=False)
        out.append(Branch(st, (pick,)))
    return out


def reachable_classes(
    uni: Universe,
    amap: Optional[AlgorithmMap] = None,
    horizon: Optional[int] = None,
) -> ReachableSets:
    """BFS level by level over configuration classes; amap=None branches over
    every feasible action (all-maps mode)."""
    ctx = universe_context(uni)
    cfg = uni.cfg
    horizon = cfg.e_cap if horizon is None else horizon
    frontier = _initial_branches(uni, ctx)
    levels: List[List[str]] = []
    witnesses: Dict[str, Branch] = {}
    truncated = False
    for x in range(horizon + 1):
        seen: Dict[Tuple[str, bool], Branch] = {}
        for br in frontier:
            kt = key_text(canonicalize_configuration(br.state, ctx))
            witnesses.setdefault(kt, br)
            seen.setdefault((kt, br.stopped), br)
        levels.append(sorted({kt for kt, _ in seen}))
        if len(witnesses) > cfg.class_cap:
            raise RefusalError(f"class count {len(witnesses)} over cap at level {x}")
        nxt: List[Branch] = []
        for (kt, stopped), br in sorted(seen.items()):
            if br.state.is_end_configuration():
                continue
            if br.stopped and br.state.all_done:
                continue  # never-released empty chain
            if amap is None:
                actions = [enc for enc, _ in algmap.enumerate_actions(br.state, ctx)]
            else:
                key = canonicalize_configuration(br.state, ctx)
                actions = [amap.action_for(key, br.state, ctx)]
            for enc in actions:
                nxt.extend(_branch_children(br, enc, uni, ctx))
        frontier = nxt
        if not frontier:
            break
    else:
        truncated = True
    rs = ReachableSets(levels, None, truncated, witnesses)
    rs.cycle = detect_cycle(rs)
    return rs


def detect_cycle(rs: ReachableSets) -> Optional[Tuple[int, int, int]]:
    """First pair of equal level sets; the difference is the cycle period."""
    seen: Dict[Tuple[str, ...], int] = {}
    for x, level in enumerate(rs.levels):
        sig = tuple(level)
        if sig in seen:
            return (seen[sig], x, x - seen[sig])
        seen[sig] = x
    return None


def verify_cycle(rs: ReachableSets) -> bool:
    """Explicitly check level-set repetition for every lag up to the horizon."""
    if rs.cycle is None:
        return False
    x1, x2, _ = rs.cycle
    for k in range(len(rs.levels) - x2):
        if rs.levels[x1 + k] != rs.levels[x2 + k]:
            return False
    return True


# -- competitive evaluation -----------------------------------------------------


@dataclass
class CompetitiveReport:
    rho: Optional[Fraction]
    policy: str
    map_name: str
    table: List[Tuple[str, Fraction]]          # (end key text, ratio)
    argmax_key: Optional[str]
    argmax_choices: Optional[Tuple[int, ...]]
    certificate_factor: Fraction
    end_classes: int
    heuristic: bool = False
    exact: bool = True
    truncated: bool = False
    notes: List[str] = field(default_factory=list)

    def to_obj(self) -> dict:
        return {
            "rho": format_rational(self.rho) if self.rho is not None else None,
            "policy": self.policy,
            "map": self.map_name,
            "ratios": {k: format_rational(v) for k, v in sorted(self.table)},
            "argmax": {
                "key": self.argmax_key,
                "choices": list(self.argmax_choices) if self.argmax_choices else None,
            },
            "certificate_factor": format_rational(self.certificate_factor),
            "end_classes": self.end_classes,
            "heuristic": self.heuristic,
            "exact": self.exact,
            "truncated": self.truncated,
            "notes": self.notes,
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_obj(), indent=indent, sort_keys=True)


def nominal_certificate(cfg: SchemeConfig) -> Fraction:
    """Composed desk-mode loss bound of the simplifications the universe
    presumes: rounding^3, packing^4, one prune shift, one cap shift, the
    safety-net stretch, and the part split."""
    return (1 + cfg.eps.value) ** 11


def relevant_subinstance(state: SimState, uni: Universe) -> Instance:
    jobs = tuple(js.job for js in state.jobs if js.relevant)
    return Instance(uni.env, jobs, uni.preemptive, uni.objective, uni.cfg.eps)


def value_of_relevant(state: SimState, uni: Universe) -> Fraction:
    """Snapped objective of the relevant jobs in the configuration history."""
    obj = uni.objective
    eps = uni.cfg.eps
    total = Fraction(0)
    best = Fraction(0)
    for js in state.jobs:
        if not js.relevant:
            continue
        interval, raw = js.completed
        snapped = eps.release_time(interval + 1)
        if obj.kind == "makespan":
            best = max(best, snapped)
        elif obj.kind == "monomial":
            from .schedule import CompletionRecord

            rec = CompletionRecord(js.job.id, interval, raw, snapped)
            v = completion_value(rec, obj, js.job.w, True, uni.cfg.monomial_precision)
            if isinstance(v, IntervalValue):
                raise RefusalError("irrational monomial values cannot be ranked exactly")
            total += v
        else:
            total += js.job.w * snapped
    return best if obj.kind == "makespan" else total


def _end_ratio(
    branch: Branch,
    uni: Universe,
    policy: str,
    cache: Optional[OracleCache],
) -> Optional[Fraction]:
    state = branch.state
    sub = relevant_subinstance(state, uni)
    if not sub.jobs:
        return None
    val = value_of_relevant(state, uni)
    res = opt_value(sub, uni.cfg, grid=(policy == "grid"), cache=cache)
    if not isinstance(res.value, Fraction) or res.value <= 0:
        raise RefusalError("optimum is not a positive rational; cannot form a ratio")
    return val / res.value


def evaluate_map(
    amap: AlgorithmMap,
    uni: Universe,
    opt_policy: str = "grid",
    cache: Optional[OracleCache] = None,
) -> CompetitiveReport:
    """Exact worst end-configuration ratio of a map over the universe.

    For every realistic end-configuration class, the snapped objective of its
    relevant jobs is divided by the offline optimum of those jobs under the
    chosen policy; rho' is the maximum.
    """
    if opt_policy not in ("grid", "refined"):
        raise DomainError(f"unknown opt policy {opt_policy!r}")
    ctx = universe_context(uni)
    cfg = uni.cfg
    cache = cache if cache is not None else OracleCache()
    frontier = _initial_branches(uni, ctx)
    ratios: Dict[str, Fraction] = {}
    argmax: Optional[Tuple[str, Branch]] = None
    truncated = False
    level_sigs: Dict[tuple, int] = {}
    for x in range(cfg.e_cap + 1):
        seen: Dict[Tuple[str, bool], Branch] = {}
        ends: List[Tuple[str, Branch]] = []
        for br in frontier:
            kt = key_text(canonicalize_configuration(br.state, ctx))
            if br.state.is_end_configuration():
                if kt not in ratios:
                    ends.append((kt, br))
                continue
            seen.setdefault((kt, br.stopped), br)
        for kt, br in sorted(ends, key=lambda t: t[0]):
            if kt in ratios:
                continue
            r = _end_ratio(br, uni, opt_policy, cache)
            if r is None:
                continue
            ratios[kt] = r
            if argmax is None or r > ratios[argmax[0]]:
                argmax = (kt, br)
        if not uni.finite:
            sig = tuple(sorted({kt for kt, _ in seen}))
            if sig in level_sigs and level_sigs[sig] < x:
                truncated = True
                break
            level_sigs.setdefault(sig, x)
        nxt: List[Branch] = []
        for (kt, stopped), br in sorted(seen.items()):
            if br.stopped and br.state.all_done and not br.state.released_any:
                continue  # the instance that never releases anything
            key = canonicalize_configuration(br.state, ctx)
            enc = amap.action_for(key, br.state, ctx)
            nxt.extend(_branch_children(br, enc, uni, ctx))
        frontier = nxt
        if not frontier:
            break
    else:
        truncated = True

    report = CompetitiveReport(
        rho=None,
        policy=opt_policy,
        map_name=amap.name,
        table=sorted(ratios.items()),
        argmax_key=None,
        argmax_choices=None,
        certificate_factor=nominal_certificate(cfg),
        end_classes=len(ratios),
        truncated=truncated,
    )
    if not ratios:
        raise RefusalError("no end-configurations: the universe admits no finished instance")
    report.rho = max(ratios.values())
    report.argmax_key = argmax[0]
    report.argmax_choices = argmax[1].choices
    return report


# -- best-map search -------------------------------------------------------------


@dataclass
class SearchOutcome:
    best_map: AlgorithmMap
    report: CompetitiveReport
    maps_enumerated: int
    nodes: int


def search_best_map(
    uni: Universe,
    opt_policy: str = "grid",
    cache: Optional[OracleCache] = None,
    exhaustive: bool = False,
    heuristic_lookahead: Optional[int] = None,
) -> SearchOutcome:
    """Depth-first branch-and-bound over assignments key -> action on the
    configuration-class DAG.

    A partial assignment is abandoned as soon as one closed end-configuration
    already forces a ratio at or above the incumbent.  exhaustive=True
    disables pruning (for agreement tests).  heuristic_lookahead switches to
    a greedy non-exact mode that commits the action minimizing the worst
    ratio reachable within the lookahead depth.
    """
    ctx = universe_context(uni)
    cfg = uni.cfg
    if not uni.finite:
        raise RefusalError("best-map search needs a finite universe")
    cache = cache if cache is not None else OracleCache()
    ratio_memo: Dict[str, Optional[Fraction]] = {}
    nodes = 0
    maps_enumerated = 0

    def end_ratio(kt: str, br: Branch) -> Optional[Fraction]:
        if kt not in ratio_memo:
            ratio_memo[kt] = _end_ratio(br, uni, opt_policy, cache)
        return ratio_memo[kt]

    action_memo: Dict[str, List[tuple]] = {}

    def actions_of(kt: str, br: Branch) -> List[tuple]:
        if kt not in action_memo:
            action_memo[kt] = [enc for enc, _ in algmap.enumerate_actions(br.state, ctx)]
        return action_memo[kt]

    def dedup_level(branches) -> List[Tuple[str, Branch]]:
        seen: Dict[Tuple[str, bool], Branch] = {}
        for br in branches:
            kt = key_text(canonicalize_configuration(br.state, ctx))
            seen.setdefault((kt, br.stopped), br)
        return sorted(((kt, br) for (kt, _), br in seen.items()), key=lambda t: (t[0], t[1].stopped))

    best: List = [None, None]  # [rho, assignment dict]

    def dfs(level: List[Tuple[str, Branch]], assign: Dict[str, tuple], current: Optional[Fraction]):
        """level: deduplicated (key text, witness branch) pairs, all at one
        interval; close end-configurations, then branch over actions for the
        first unassigned key, then advance the whole level."""
        nonlocal nodes, maps_enumerated
        nodes += 1
        if nodes > cfg.tree_cap:
            raise RefusalError(f"search exceeded node cap {cfg.tree_cap}")
        live: List[Tuple[str, Branch]] = []
        for kt, br in level:
            if br.state.is_end_configuration():
                r = end_ratio(kt, br)
                if r is not None:
                    current = r if current is None else max(current, r)
            elif not (br.stopped and br.state.all_done and not br.state.released_any):
                live.append((kt, br))
        if not exhaustive and best[0] is not None and current is not None and current >= best[0]:
            return
        if not live:
            maps_enumerated += 1
            if current is None:
                return
            if best[0] is None or current < best[0]:
                best[0] = current
                best[1] = dict(assign)
            return
        unassigned = [(kt, br) for kt, br in live if kt not in assign]
        if unassigned:
            kt, br = unassigned[0]
            for enc in actions_of(kt, br):
                assign[kt] = enc
                dfs(live, assign, current)
                del assign[kt]
            return
        children: List[Branch] = []
        try:
            for kt, br in live:
                children.extend(_branch_children(br, assign[kt], uni, ctx))
        except RefusalError:
            return  # this assignment strands a job; abandon the branch
        dfs(dedup_level(children), assign, current)

    def greedy(lookahead: int) -> Dict[str, tuple]:
        assign: Dict[str, tuple] = {}

        def horizon_worst(br: Branch, depth: int) -> Fraction:
            """Worst closed-end ratio reachable from br within the lookahead,
            choosing the per-key minimum where nothing is committed yet."""
            kt2 = key_text(canonicalize_configuration(br.state, ctx))
            if br.state.is_end_configuration():
                r = end_ratio(kt2, br)
                return r if r is not None else Fraction(0)
            if br.stopped and br.state.all_done and not br.state.released_any:
                return Fraction(0)
            if depth <= 0:
                return Fraction(0)
            if kt2 in assign:
                kids = _branch_children(br, assign[kt2], uni, ctx)
                return max((horizon_worst(c, depth - 1) for c in kids), default=Fraction(0))
            opts = []
            for enc, _ in algmap.enumerate_actions(br.state, ctx):
                try:
                    kids = _branch_children(br, enc, uni, ctx)
                except RefusalError:
                    continue
                opts.append(max((horizon_worst(c, depth - 1) for c in kids), default=Fraction(0)))
            return min(opts) if opts else Fraction(0)

        pending = list(_initial_branches(uni, ctx))
        while pending:
            pending.sort(key=lambda b: (b.state.x, key_text(canonicalize_configuration(b.state, ctx))))
            br = pending.pop(0)
            state = br.state
            kt = key_text(canonicalize_configuration(state, ctx))
            if state.is_end_configuration():
                continue
            if br.stopped and state.all_done and not state.released_any:
                continue
            if kt not in assign:
                scored = []
                for enc, _ in algmap.enumerate_actions(state, ctx):
                    assign[kt] = enc
                    try:
                        score = horizon_worst(br, lookahead)
                    except RefusalError:
                        del assign[kt]
                        continue
                    del assign[kt]
                    scored.append((score, enc))
                if not scored:
                    raise RefusalError(f"no viable action at key {kt}")
                scored.sort(key=lambda t: (t[0], t[1]))
                assign[kt] = scored[0][1]
            pending.extend(_branch_children(br, assign[kt], uni, ctx))
        return assign

    if heuristic_lookahead is not None:
        table = greedy(heuristic_lookahead)
        amap = AlgorithmMap("heuristic", {k: v for k, v in table.items()})
        report = evaluate_map(amap, uni, opt_policy, cache)
        report.heuristic = True
        report.exact = False
        return SearchOutcome(amap, report, 1, nodes)

    dfs(dedup_level(_initial_branches(uni, ctx)), {}, None)
    if best[0] is None:
        raise RefusalError("no complete map found (every assignment refused)")
    amap = AlgorithmMap("best", best[1])
    report = evaluate_map(amap, uni, opt_policy, cache)
    return SearchOutcome(amap, report, maps_enumerated, nodes)


# -- randomized maps --------------------------------------------------------------


@dataclass
class RandomizedMap:
    """Association table key -> probability vector over action classes;
    probabilities are multiples of delta and sum to one."""

    name: str
    table: Dict[str, Tuple[Tuple[tuple, Fraction], ...]]

    def validate_grid(self, delta: Fraction):
        for kt, vec in self.table.items():
            total = sum((p for _, p in vec), Fraction(0))
            if total != 1:
                raise DomainError(f"probabilities at {kt} sum to {total}")
            for _, p in vec:
                if p < 0 or (p / delta).denominator != 1:
                    raise DomainError(f"probability {p} at {kt} is not a multiple of {delta}")

    def vector_for(self, kt: str, state=None, ctx=None) -> Tuple[Tuple[tuple, Fraction], ...]:
        if kt not in self.table:
            raise MapIncompleteError(kt)
        return self.table[kt]


class RandomizedRuleMap(RandomizedMap):
    """Randomized map backed by a vector-producing rule, materialized lazily
    (the first configuration of each class fixes the class's vector)."""

    def __init__(self, name: str, filler):
        super().__init__(name, {})
        self.filler = filler

    def vector_for(self, kt: str, state=None, ctx=None):
        if kt not in self.table:
            if state is None or ctx is None:
                raise MapIncompleteError(kt)
            self.table[kt] = tuple(self.filler(state, ctx))
        return self.table[kt]


def embed_deterministic(amap: AlgorithmMap, name: Optional[str] = None) -> RandomizedMap:
    return RandomizedMap(name or amap.name, {k: ((v, Fraction(1)),) for k, v in amap.table.items()})


def discretize_map(rmap: RandomizedMap, delta: Fraction) -> RandomizedMap:
    """Round each probability vector to the delta grid: floor everything,
    then hand out the residual mass in delta chunks by largest remainder
    (ties by canonical action order)."""
    if (1 / delta).denominator != 1:
        raise DomainError("1/delta must be an integer")
    out: Dict[str, Tuple[Tuple[tuple, Fraction], ...]] = {}
    for kt, vec in rmap.table.items():
        floors = []
        for enc, p in vec:
            k = frac_floor(p / delta)
            floors.append([enc, k * delta, p - k * delta])
        residual = 1 - sum((f[1] for f in floors), Fraction(0))
        chunks = frac_ceil(residual / delta) if residual > 0 else 0
        order = sorted(range(len(floors)), key=lambda i: (-floors[i][2], floors[i][0]))
        for i in range(chunks):
            floors[order[i % len(floors)]][1] += delta
        out[kt] = tuple((enc, p) for enc, p, _ in floors)
    g = RandomizedMap(f"{rmap.name}~{delta}", out)
    g.validate_grid(delta)
    return g


def _completion_contribution(completions, inst: Instance, uni: Universe) -> Fraction:
    """Snapped objective contribution of one interval's completions."""
    obj = uni.objective
    total = Fraction(0)
    best = Fraction(0)
    for c in completions:
        if obj.kind == "makespan":
            best = max(best, c.snapped)
        elif obj.kind == "monomial":
            v = completion_value(c, obj, inst.job(c.job).w, True, uni.cfg.monomial_precision)
            if isinstance(v, IntervalValue):
                raise RefusalError("irrational monomial values cannot be ranked exactly")
            total += v
        else:
            total += inst.job(c.job).w * c.snapped
    return best if obj.kind == "makespan" else total


def evaluate_randomized_map(
    rmap: RandomizedMap,
    uni: Universe,
    opt_policy: str = "grid",
    cache: Optional[OracleCache] = None,
) -> CompetitiveReport:
    """Exact expected competitive ratio: for every instance of the finite
    universe, the full probability tree over interval actions is enumerated
    and E[value]/Opt computed; rho' is the worst instance."""
    if not uni.finite:
        raise RefusalError("randomized evaluation needs a finite universe")
    ctx = universe_context(uni)
    cfg = uni.cfg
    cache = cache if cache is not None else OracleCache()
    worst: Optional[Fraction] = None
    worst_choices = None
    table: List[Tuple[str, Fraction]] = []
    for choices, inst in uni.all_instances():
        if not inst.jobs:
            continue
        by_date: Dict[int, List[Job]] = {}
        for j in inst.jobs:
            by_date.setdefault(j.release_exp(cfg.eps), []).append(j)
        max_date = max(by_date)
        leaves = 0
        makespan = uni.objective.kind == "makespan"

        def expected(state: SimState, acc: Fraction) -> Fraction:
            nonlocal leaves
            state = algmap.add_releases(
                state,
                tuple(sorted(by_date.get(state.x, []), key=lambda j: j.id)),
                ctx,
                releases_done=state.x >= max_date,
            )
            if state.all_done and state.x > max_date:
                leaves += 1
                if leaves > cfg.tree_cap:
                    raise RefusalError("randomized outcome tree over cap")
                return acc
            kt = key_text(canonicalize_configuration(state, ctx))
            vec = rmap.vector_for(kt, state, ctx)
            total = Fraction(0)
            for enc, p in vec:
                if p == 0:
                    continue
                concrete = algmap.instantiate_action(enc, state, ctx)
                step = algmap.apply_action(state, concrete, ctx)
                contrib = _completion_contribution(step.completions, inst, uni)
                nxt = max(acc, contrib) if makespan else acc + contrib
                total += p * expected(step.state, nxt)
            return total

        e_val = expected(SimState(0, (), (), False), Fraction(0))
        res = opt_value(inst, cfg, grid=(opt_policy == "grid"), cache=cache)
        ratio = e_val / res.value
        table.append((",".join(map(str, choices)), ratio))
        if worst is None or ratio > worst:
            worst = ratio
            worst_choices = choices
    if worst is None:
        raise RefusalError("no end-configurations: the universe admits no finished instance")
    return CompetitiveReport(
        rho=worst,
        policy=opt_policy,
        map_name=rmap.name,
        table=sorted(table),
        argmax_key=None,
        argmax_choices=worst_choices,
        certificate_factor=nominal_certificate(cfg),
        end_classes=len(table),
        notes=["randomized: per-instance expected value over the action tree"],
    )


# -- offset splitting ---------------------------------------------------------------


@dataclass(frozen=True)
class OffsetSplit:
    M: int
    rw_total: Fraction
    moved_rw: Dict[int, Fraction]          # offset -> release weight moved to nets
    flagged: Dict[int, Tuple[str, ...]]    # offset ->安全 net-only job ids
    parts: Dict[int, Tuple[Tuple[int, int], ...]]  # offset -> part period ranges


def theoretical_offset_modulus(cfg: SchemeConfig) -> int:
    e = cfg.eps.value
    return frac_ceil((1 + e) ** cfg.s / e)


def offset_split(
    inst: Instance, cfg: SchemeConfig, offset: Optional[int] = None, M: Optional[int] = None
) -> OffsetSplit:
    """Move every job released in periods congruent to the offset (mod M) to
    its safety net, cutting the instance into parts of M periods.

    With offset=None all offsets are produced; the moved release weights over
    all offsets add up to exactly the total release weight.
    """
    eps = inst.eps
    M = theoretical_offset_modulus(cfg) if M is None else M
    if M < 1:
        raise DomainError("offset modulus must be >= 1")
    offsets = range(M) if offset is None else (offset % M,)
    by_period: Dict[int, List[Job]] = {}
    for j in inst.jobs:
        by_period.setdefault(j.release_exp(eps) // cfg.s, []).append(j)
    moved: Dict[int, Fraction] = {}
    flagged: Dict[int, Tuple[str, ...]] = {}
    parts: Dict[int, Tuple[Tuple[int, int], ...]] = {}
    n_periods = (max(by_period) + 1) if by_period else 0
    for o in offsets:
        ids = []
        rw = Fraction(0)
        for k, js in sorted(by_period.items()):
            if k % M == o:
                ids.extend(sorted(j.id for j in js))
                rw += release_weight(js)
        moved[o] = rw
        flagged[o] = tuple(ids)
        spans = []
        start = 0
        for k in range(n_periods + 1):
            if k % M == o or k == n_periods:
                if start < k:
                    spans.append((start, k - 1))
                start = k + 1
        parts[o] = tuple(spans)
    return OffsetSplit(M, release_weight(inst.jobs), moved, flagged, parts)
