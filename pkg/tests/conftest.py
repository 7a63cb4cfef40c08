import os
from pathlib import Path

import numpy as np
import pytest

from sparsetrace.data import load_idx

# Real MNIST IDX files are looked up under $MNIST_DIR or ./data/mnist.
# The standard filenames (gzipped or raw) are accepted.
_MNIST_FILES = {
    "train_images": ["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
    "train_labels": ["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
    "test_images": ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"],
    "test_labels": ["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"],
}


def find_mnist():
    root = Path(os.environ.get("MNIST_DIR", Path(__file__).parent.parent / "data" / "mnist"))
    found = {}
    for key, names in _MNIST_FILES.items():
        for name in names:
            for cand in (root / name, root / (name + ".gz")):
                if cand.exists():
                    found[key] = cand
                    break
            if key in found:
                break
        if key not in found:
            return None
    return found


@pytest.fixture(scope="session")
def mnist():
    paths = find_mnist()
    if paths is None:
        pytest.skip("MNIST IDX files not found (set MNIST_DIR or place them in data/mnist); "
                    "this environment has no dataset network access")
    train = load_idx(paths["train_images"], paths["train_labels"], "train")
    test = load_idx(paths["test_images"], paths["test_labels"], "test")
    return train, test


def central_differences(loss_fn, arrays, step=1e-4):
    """Independent finite-difference oracle: d loss / d entry for every
    entry of every array in `arrays` (mutated in place, then restored)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.ravel()
        gflat = g.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            lp = loss_fn()
            flat[k] = orig - step
            lm = loss_fn()
            flat[k] = orig
            gflat[k] = (lp - lm) / (2.0 * step)
        grads.append(g)
    return grads


# ---------------------------------------------------------------------------
# Acceptance-criterion reporting: tests marked @pytest.mark.criterion(n, desc)
# are aggregated into one PASS/FAIL/SKIP line per criterion at session end.

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, desc): acceptance criterion this test verifies")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    num, desc = m.args
    entry = _CRITERIA.setdefault(num, {"desc": desc, "passed": 0, "failed": 0,
                                       "skipped": 0, "skip_reasons": []})
    if rep.when == "call" and rep.passed:
        entry["passed"] += 1
    elif rep.failed:
        entry["failed"] += 1
    elif rep.skipped:
        entry["skipped"] += 1
        reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
        entry["skip_reasons"].append(reason)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        e = _CRITERIA[num]
        if e["failed"]:
            verdict = "FAIL"
        elif e["passed"]:
            verdict = "PASS"
        else:
            verdict = "SKIP"
        note = ""
        if verdict == "PASS" and e["skipped"]:
            note = f"  ({e['skipped']} variant(s) skipped: no MNIST data)"
        elif verdict == "SKIP":
            note = f"  ({e['skip_reasons'][0] if e['skip_reasons'] else 'skipped'})"
        tr.write_line(f"criterion {num:2d}: {verdict} - {e['desc']}{note}")
