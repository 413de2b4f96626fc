from __future__ import annotations

import pytest

from fkefield.model import FractionalSheet, Riesz, White, validate


@pytest.fixture(scope="session")
def heat06():
    """d=1 white noise, alpha=0, gamma=2, H=0.6: alpha1=0.7, alpha2=0.35."""
    return validate(1, 0.0, 2.0, 0.6, White())


@pytest.fixture(scope="session")
def heat075():
    """The alpha1=1 (logarithmic gauge) model with Q=3."""
    return validate(1, 0.0, 2.0, 0.75, White())


@pytest.fixture(scope="session")
def bessel06():
    return validate(1, 1.0, 1.0, 0.6, White())


@pytest.fixture(scope="session")
def riesz05():
    return validate(1, 0.0, 2.0, 0.6, Riesz(0.5))


@pytest.fixture(scope="session")
def sheet2d():
    return validate(2, 0.0, 2.0, 0.7, FractionalSheet((0.75, 0.75)))


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Records one PASS/FAIL line per acceptance criterion."""

    def record(number: int, ok: bool, title: str, detail: str) -> None:
        line = f"ACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        _ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
