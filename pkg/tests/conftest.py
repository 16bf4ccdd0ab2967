from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from zootwin.zoo.data import from_arrays, load_idx_dataset, read_idx_images, read_idx_labels

ROOT = Path(__file__).resolve().parents[1]
DESK_DIR = ROOT / "data" / "mnist-desk"
DESK_FILES = {
    "train_images": DESK_DIR / "train-images-idx3-ubyte.gz",
    "train_labels": DESK_DIR / "train-labels-idx1-ubyte.gz",
    "test_images": DESK_DIR / "t10k-images-idx3-ubyte.gz",
    "test_labels": DESK_DIR / "t10k-labels-idx1-ubyte.gz",
}


@pytest.fixture(scope="session")
def desk_raw():
    return {k: (read_idx_images(p) if "images" in k else read_idx_labels(p)) for k, p in DESK_FILES.items()}


@pytest.fixture(scope="session")
def tiny_data(desk_raw):
    """600/200 slice of the desk split: big enough to learn, fast enough for unit tests."""
    return from_arrays(desk_raw["train_images"][:600], desk_raw["train_labels"][:600],
                       desk_raw["test_images"][:200], desk_raw["test_labels"][:200], name="tiny")


@pytest.fixture(scope="session")
def desk_data():
    f = DESK_FILES
    return load_idx_dataset(f["train_images"], f["train_labels"], f["test_images"], f["test_labels"], name="mnist-desk")


@pytest.fixture(scope="session")
def artifact_dir(tmp_path_factory):
    """Where desk-scale artifacts live; ZOOTWIN_DESK_CACHE keeps them across sessions."""
    cache = os.environ.get("ZOOTWIN_DESK_CACHE")
    if cache:
        path = Path(cache)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return tmp_path_factory.mktemp("desk")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- acceptance summary ------------------------------------------------------------
ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance line, then asserts ``ok``."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((n, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
