import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    scale = np.maximum(np.abs(b), 1e-300)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_check(f, params, grads, rng, per_tensor=8, h=1e-5, pattern=None):
    """Worst relative error per tensor between ``grads`` and central differences of ``f``.

    ``pattern`` returns the ReLU on/off state of the last evaluation; coordinates
    whose perturbation flips it sit on a kink and are swapped for fresh ones.
    """
    worst = {}
    base = pattern() if pattern else None
    for name, p in params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        todo = [int(np.argmax(np.abs(g)))]
        todo += rng.permutation(flat.size).tolist()
        errs = []
        for i in todo:
            if len(errs) >= min(per_tensor, flat.size):
                break
            old = flat[i]
            flat[i] = old + h
            fp = f()
            kink = pattern is not None and not np.array_equal(pattern(), base)
            flat[i] = old - h
            fm = f()
            kink = kink or (pattern is not None and not np.array_equal(pattern(), base))
            flat[i] = old
            if kink:
                continue
            num = (fp - fm) / (2 * h)
            errs.append(abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-7))
        assert errs, f"no smooth coordinate found in {name}"
        worst[name] = max(errs)
    return worst


def relu_pattern(mlps):
    """Sign pattern of every pre-activation in the last forward of each MLP."""
    return lambda: np.concatenate([(a > 0).ravel() for m in mlps for a in m._cache[1]])


@pytest.fixture
def acceptance(request):
    """Records one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, passed, detail):
        lines.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        print(lines[-1])
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
