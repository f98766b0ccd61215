import numpy as np
import pytest

from octoseg import tensor as T
from octoseg.tensor import Tensor

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
    return float(np.linalg.norm(a - b) / denom)


def fd_check(f, inputs, rng, eps=1e-5, max_entries=None):
    """Central-difference check of ``sum(f(*inputs) * w)`` w.r.t. every input tensor.

    Returns the worst per-tensor relative error (norm-wise over checked entries).
    """
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = f(*inputs)
    w = rng.standard_normal(out.shape)
    T.backward(T.tensor_sum(T.mul(out, Tensor(w))))
    worst = 0.0
    for x in inputs:
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        fd = np.empty(len(idx))
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            lp = float((f(*inputs).data * w).sum())
            flat[i] = old - eps
            lm = float((f(*inputs).data * w).sum())
            flat[i] = old
            fd[n] = (lp - lm) / (2 * eps)
        an = np.zeros(flat.size) if x.grad is None else x.grad.reshape(-1)
        worst = max(worst, rel_err(fd, an[idx]))
    return worst
