"""Shared oracles for the test suite: central-difference gradients and a
relative-error metric tolerant of exact zeros."""

import time
from contextlib import contextmanager

import numpy as np
import pytest


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar f at x, element by element.
    x must be float64 for the h^2 truncation error to dominate roundoff."""
    assert x.dtype == np.float64
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(analytic, numeric):
    """Max elementwise |a-n| / max(|a|+|n|, 1e-3); the floor keeps exact-zero
    gradients (relu/maxpool dead units) from dividing by zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(n), 1e-3)
    return float(np.max(np.abs(a - n) / denom))


@pytest.fixture
def rng64():
    """Fresh deterministic draw stream for float64 test tensors."""
    from demnet.tensor import RngState
    return RngState(20240915)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # one PASS/FAIL line per acceptance criterion, echoed after the run so
    # they survive output capture
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """Context manager factory: `with acceptance("name") as notes:` runs the
    checks, then records and prints one PASS/FAIL line; tests may append
    short strings to `notes` for the PASS line."""
    @contextmanager
    def criterion(name):
        notes = []
        start = time.perf_counter()
        try:
            yield notes
        except BaseException as exc:
            line = f"FAIL {name}: {exc}"
            print(line)
            request.config._acceptance_lines.append(line)
            raise
        took = time.perf_counter() - start
        suffix = "; " + ", ".join(notes) if notes else ""
        line = f"PASS {name} ({took:.1f}s{suffix})"
        print(line)
        request.config._acceptance_lines.append(line)
    return criterion
