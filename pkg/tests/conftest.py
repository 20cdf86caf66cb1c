from pathlib import Path

import numpy as np
import pytest

from gradsteer import (ControlPartition, Dataset, LossScale, ModelKind,
                       ModelSpec, Objective, SplitSpec)

REPO = Path(__file__).resolve().parent.parent

# seven enzyme initial-rate experiments (sucrose concentration, velocity)
TABLE_W = [0.3330, 0.1670, 0.0833, 0.0416, 0.0208, 0.0104, 0.0052]
TABLE_V = [3.6360, 3.6360, 3.2360, 2.6660, 2.1140, 1.4660, 0.8661]
THETA_REPORTED = np.array([3.9059, 0.0178])


@pytest.fixture(scope="session")
def table_data() -> Dataset:
    return Dataset(np.array(TABLE_W)[:, None], np.array(TABLE_V))


@pytest.fixture(scope="session")
def split() -> SplitSpec:
    # experiments {1,3,5,7} train, {2,4,6} validation (1-based), 0-based here
    return SplitSpec((0, 2, 4, 6), (1, 3, 5))


@pytest.fixture(scope="session")
def mm_model() -> ModelSpec:
    return ModelSpec(ModelKind.MICHAELIS_MENTEN)


@pytest.fixture(scope="session")
def mm_train_half(table_data, split, mm_model) -> Objective:
    return Objective(mm_model, split.train(table_data), LossScale.HALF)


@pytest.fixture(scope="session")
def mm_train_one(table_data, split, mm_model) -> Objective:
    return Objective(mm_model, split.train(table_data), LossScale.ONE)


@pytest.fixture(scope="session")
def mm_validation(table_data, split) -> Dataset:
    return split.validation(table_data)


@pytest.fixture(scope="session")
def partition_10() -> ControlPartition:
    return ControlPartition.from_leader(np.array([1.0, 0.0]))


def linear_objective(inputs, outputs, scale=LossScale.HALF,
                     param_dim=None) -> Objective:
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    dim = param_dim if param_dim is not None else inputs.shape[1]
    model = ModelSpec(ModelKind.LINEAR, param_dim=dim)
    return Objective(model, Dataset(inputs, np.asarray(outputs, dtype=float)),
                     scale)
