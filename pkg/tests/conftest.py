import random
from fractions import Fraction as F

import pytest

from mapsched.core import (
    Epsilon,
    Instance,
    Job,
    MachineEnv,
    Objective,
    SchemeConfig,
    WEIGHTED_COMPLETION,
)

EPS1 = Epsilon(F(1))
EPS_HALF = Epsilon(F(1, 2))


def mk_instance(jobs, eps=EPS1, preemptive=True, m=1, kind="identical", speeds=None,
                objective=WEIGHTED_COMPLETION):
    return Instance(MachineEnv(kind, m, speeds), tuple(jobs), preemptive, objective, eps)


def mk_job(jid, r, p, w=1):
    return Job(jid, F(r), F(p), F(w))


def random_raw_instance(rng: random.Random, eps=EPS_HALF, max_jobs=5, allow_m2=True):
    """Arbitrary positive rationals, broad ranges, exact-oracle-solvable."""
    n = rng.randint(1, max_jobs)
    m = rng.choice([1, 1, 1, 2]) if allow_m2 else 1
    preemptive = rng.random() < 0.5 if m == 1 else False
    jobs = []
    for i in range(n):
        r = F(rng.randint(4, 16), 4)
        p = F(rng.randint(1, 40), 8)
        w = F(rng.randint(1, 16), 4)
        jobs.append(Job(f"j{i}", r, p, w))
    return mk_instance(jobs, eps=eps, preemptive=preemptive, m=m)


@pytest.fixture
def rng():
    return random.Random(20260809)
