import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from network_manager import ArchConfig  # noqa: E402
from partition_manager import TaskFamilyConfig, make_task_family, split_pers_eval  # noqa: E402


@pytest.fixture
def tiny_arch():
    return ArchConfig(input_dim=4, hidden_widths=(6, 5), n_classes=3,
                      modulator_feature_dims=(5,), modulator_head_dims=(4,))


@pytest.fixture
def tiny_task():
    return TaskFamilyConfig(n_clients=6, n_classes=3, samples_per_client=24, input_dim=4,
                            shift="concept", n_groups=2, permutation_style="cyclic", seed=3)


@pytest.fixture
def tiny_clients(tiny_task):
    return [split_pers_eval(c, 0.5, 100 + c.client_id) for c in make_task_family(tiny_task)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
