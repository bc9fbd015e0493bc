from fractions import Fraction

import pytest

from cphbl.config import PolicySpec, Seeds, SystemConfig, evaluation_config

CRITERIA: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    CRITERIA.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)


def make_config(**overrides) -> SystemConfig:
    """Two EFSs, five users, six files: small enough for exhaustive checks."""
    fields = dict(
        num_efs=2,
        num_users=5,
        user_assignment=((0, 2, 4), (1, 3)),
        file_sizes=(1, 2, 4, 1, 2, 3),
        efs_capacity=(5, 6),
        unit_storage_cost=Fraction(1),
        budget=(Fraction(3), Fraction(4)),
        v_param=Fraction(20),
        horizon=3000,
        history_counts=((10,) * 6,) * 2,
        zipf_skew=(0.6, 0.8, 1.0, 1.1, 0.9),
        seeds=Seeds(11, 12, 13),
        policy=PolicySpec(),
    )
    fields.update(overrides)
    return SystemConfig(**fields)


@pytest.fixture
def small_cfg() -> SystemConfig:
    return make_config()


@pytest.fixture(scope="session")
def eval_cfg() -> SystemConfig:
    return evaluation_config()
