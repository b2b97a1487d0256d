import numpy as np
import pytest

# ``ACn ...: PASS|FAIL`` lines from the acceptance tests, echoed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def dense_correlation(frame, kernel, bias=0.0):
    """Reference cross-correlation with replicate padding, one pixel at a time."""
    H, W = frame.shape
    k = kernel.shape[0]
    r = k // 2
    out = np.empty((H, W))
    for y in range(H):
        for x in range(W):
            acc = bias
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), H - 1)
                    xx = min(max(x + dx, 0), W - 1)
                    acc += kernel[dy + r, dx + r] * frame[yy, xx]
            out[y, x] = acc
    return out
