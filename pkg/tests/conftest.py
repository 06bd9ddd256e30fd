import numpy as np
import pytest

from frugalsense import gp, timeseries as ts


@pytest.fixture(scope="session")
def small_data():
    """Two weeks of synthetic data and hand-set hyperparameters (no fitting)."""
    d = ts.generate_synthetic(ts.SyntheticProfile(), 2 * 672)
    ctx = d.window(0, 672)
    off, sc = gp.standardization(ctx.features())
    p = gp.KernelParams(gp.MaternParams(40.0, 0.05, 1.5), gp.PeriodicParams(40.0, 0.15, 1.0), 0.15,
                        float(np.mean(ctx.laeq)), off, sc)
    return d, ctx, p


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line: ``report(n, label, ok, detail)``."""
    def _report(n, label, ok, detail=""):
        ACCEPTANCE_LINES.append(f"criterion {n:>2} {label:<24} {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
