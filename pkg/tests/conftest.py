import functools

import pytest

from momentoc.compactify import compactify
from momentoc.conic import Settings, solve
from momentoc.problem import builtin
from momentoc.relax import RelaxOptions, assemble


def pytest_addoption(parser):
    parser.addoption("--stretch", action="store_true", help="run the long order-6 rendezvous solve")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--stretch"):
        return
    skip = pytest.mark.skip(reason="stretch run; pass --stretch")
    for item in items:
        if "stretch" in item.keywords:
            item.add_marker(skip)


@functools.lru_cache(maxsize=None)
def solved(name, order, mass_bound=None):
    """(relaxation, solution) for a builtin; cached across the session."""
    cp = compactify(builtin(name))
    rel = assemble(cp, order, RelaxOptions(mass_bound=mass_bound))
    return rel, solve(rel.program, Settings())


ACCEPTANCE = {}


def record(criterion, ok, detail=""):
    """Remember one acceptance verdict; printed at the end of the run."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
