import os

import hypothesis
import numpy as np
import pytest

from hybrid_quant.config import reset_config
from hybrid_quant.models import View
from hybrid_quant.params import init_parameters

from .helpers import TOY_CONFIG, random_bags, random_pairs

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def toy_model():
    return init_parameters(TOY_CONFIG)


@pytest.fixture
def toy_pairs():
    return random_pairs(TOY_CONFIG, 6, seed=3)


@pytest.fixture
def toy_items():
    return random_bags(TOY_CONFIG, View.ITEM, 50, seed=11)


@pytest.fixture(autouse=True)
def fresh_runtime_config():
    reset_config()
    yield
    reset_config()
