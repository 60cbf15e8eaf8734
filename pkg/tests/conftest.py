import numpy as np
import pytest

from upllrs import data


def rel_err(a, b, floor=1e-6):
    # floor sits above central-difference roundoff (~1e-11) on exact-zero entries
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def fd_grad(f, z, eps=1e-5):
    """Central finite differences of scalar f at array z."""
    z = np.array(z, dtype=float)
    g = np.zeros_like(z)
    it = np.nditer(z, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = z[i]
        z[i] = orig + eps
        hi = f(z)
        z[i] = orig - eps
        lo = f(z)
        z[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return g


def random_candidates(rng, n, C, min_size=1, max_size=None):
    max_size = C if max_size is None else max_size
    mask = np.zeros((n, C), dtype=bool)
    for i in range(n):
        k = rng.integers(min_size, max_size + 1)
        mask[i, rng.choice(C, size=k, replace=False)] = True
    return mask


def standardized_gaussians(n, C, d, separation, seed):
    ds = data.synth_gaussians(n, C, d, separation, seed)
    return data.LabeledDataset(data.standardize(ds.features), ds.labels, C)


@pytest.fixture
def small_split():
    ds = standardized_gaussians(600, 4, 8, 6.0, 0)
    return data.synthesize(ds, 0.3, 0.1, 0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
