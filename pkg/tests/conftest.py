import math

import numpy as np
import pytest

from borrowoc import ContrastBorrowDesign, ControlBorrowDesign, MixtureNormal, SuccessRule, robustify

S_NEW = 0.40783986633260666
LOG_OR = math.log(1.6)


@pytest.fixture(scope="session")
def map_prior():
    return MixtureNormal([0.51, 0.44, 0.05], [-51.0, -46.8, -54.1], [19.9, 7.6, 51.7])


@pytest.fixture(scope="session")
def robust_map(map_prior):
    return robustify(map_prior, 0.2, -50.0, 88.0)


@pytest.fixture(scope="session")
def vague_c():
    return MixtureNormal.normal(-50.0, 8800.0)


@pytest.fixture(scope="session")
def robust_contrast():
    return MixtureNormal([0.7, 0.3], [0.48, 0.0], [0.121, 2.87])


@pytest.fixture(scope="session")
def adult():
    return MixtureNormal.normal(0.48, 0.121)


@pytest.fixture(scope="session")
def vague_contrast():
    return MixtureNormal.normal(0.0, 100.0)


@pytest.fixture(scope="session")
def crohns_rule():
    return SuccessRule(0.0, "less", 0.975)


@pytest.fixture(scope="session")
def crohns_design(vague_c, robust_map, crohns_rule):
    """Robust-MAP control design; swap the control prior with ``with_prior``."""
    return ControlBorrowDesign(40, 20, 88.0, vague_c, robust_map, crohns_rule)


@pytest.fixture(scope="session")
def lupus_design(robust_contrast):
    return ContrastBorrowDesign(S_NEW, robust_contrast)


def random_mixture(rng, k_max=3, loc=0.0, scale=1.0, sd_range=(0.2, 2.0)):
    k = int(rng.integers(1, k_max + 1))
    w = rng.dirichlet(np.full(k, 2.0))
    m = loc + scale * rng.normal(size=k)
    s = scale * rng.uniform(*sd_range, size=k)
    return MixtureNormal(w / w.sum(), m, s)


def mc_gap(q: float, rep) -> float:
    """Distance between a quadrature value and an MC report, in binomial SEs at ``q``."""
    n = rep.n_reps
    se = max(math.sqrt(q * (1 - q) / n), 1.0 / n)
    return abs(rep.value - q) / se


ACCEPTANCE: dict = {}


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
