"""Shared fixtures: corpus paths and mock service plumbing."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).resolve().parent

# Make tests/*.py helper modules importable regardless of rootdir.
if str(TESTS_DIR) not in sys.path:
    sys.path.insert(0, str(TESTS_DIR))

from corpus_fixtures import CORPUS_DIR, good_corpus_paths  # noqa: E402


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return CORPUS_DIR


@pytest.fixture(scope="session")
def good_corpus() -> list[Path]:
    paths = good_corpus_paths()
    assert len(paths) >= 100, "golden corpus must hold at least 100 good files"
    return paths
