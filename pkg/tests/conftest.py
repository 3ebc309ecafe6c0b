import sys

import pytest

from gherkin_mbt.gherkin_parser import parse_file
from gherkin_mbt.model_builder import build_model
from gherkin_mbt.sim_harness import LocalExecutor, bundled, load_spec


def sim_command(spec_name, *extra):
    return [sys.executable, "-m", "gherkin_mbt.sim", "--spec", bundled(spec_name), *extra]


def model_of(feature_name):
    return build_model(parse_file(bundled(feature_name)).scenarios).model


def local(spec_name, log=False):
    return LocalExecutor(load_spec(bundled(spec_name)), log=log)


@pytest.fixture
def ehealth_model():
    return model_of("ehealth.feature")


@pytest.fixture
def stack_model():
    return model_of("stack.feature")


@pytest.fixture
def lab_model():
    return model_of("lab_results.feature")
