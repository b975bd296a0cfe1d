import pytest

import mildsing as ms

#: collected (number, name, passed, detail) rows from the acceptance module
ACCEPTANCE_RESULTS = []


def record_criterion(num: int, name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((num, name, bool(passed), detail))
    tail = f" ({detail})" if detail else ""
    print(f"criterion {num:2d} [{'PASS' if passed else 'FAIL'}] {name}{tail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, passed, detail in sorted(ACCEPTANCE_RESULTS):
        tail = f" ({detail})" if detail else ""
        terminalreporter.write_line(
            f"criterion {num:2d} [{'PASS' if passed else 'FAIL'}] {name}{tail}"
        )


@pytest.fixture(scope="session")
def unit_interval_257():
    return ms.build_interval_mesh(1.0, 257)


@pytest.fixture(scope="session")
def unit_square_9():
    return ms.build_rectangle_mesh(1.0, 1.0, 9, 9)


@pytest.fixture(scope="session")
def unit_square_65():
    return ms.build_rectangle_mesh(1.0, 1.0, 65, 65)


@pytest.fixture(scope="session")
def identity_65(unit_square_65):
    return ms.Coefficient.identity(unit_square_65)
