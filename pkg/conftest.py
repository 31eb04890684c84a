# File: conftest.py
# Shared pytest fixtures: runtime isolation, tiny network specs, synthetic and CIFAR-format datasets

import json
import os

import numpy as np
import pytest
import structlog

from create_sample_cifar_data import create_sample_cifar_dir
from seqnet.services.data import synthetic_classification
from seqnet.src import runtime
from seqnet.src.builder import build_cifar_template

SLOW_ENV = "SEQCONV_SLOW_TESTS"


def pytest_configure(config):
    config.addinivalue_line("markers", f"slow: desk-scale acceptance run, enabled by {SLOW_ENV}=1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get(SLOW_ENV):
        return
    skip = pytest.mark.skip(reason=f"set {SLOW_ENV}=1 to run desk-scale acceptance tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def runtime_defaults():
    """Every test starts single precision, single threaded and deterministic, and leaks nothing."""
    with runtime.settings(precision="single", threads=1, deterministic=True):
        yield


@pytest.fixture(autouse=True)
def reset_structlog():
    """CLI tests configure structlog against pytest's captured stderr; undo that after each test."""
    yield
    structlog.reset_defaults()


@pytest.fixture
def double():
    with runtime.settings(precision="double"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec():
    return build_cifar_template(k=4, r=1, n=1)


@pytest.fixture
def tiny_data():
    return synthetic_classification(10, 40, (3, 8, 8), seed=0)


@pytest.fixture
def cifar_dir(tmp_path):
    directory = tmp_path / "cifar-10-batches-bin"
    create_sample_cifar_dir(str(directory), per_batch=20, test=20, classes=10, seed=7)
    return directory


@pytest.fixture
def run_config_file(tmp_path):
    """Factory writing a run config dict to a JSON file under tmp_path."""

    def write(payload, name="run.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return write
