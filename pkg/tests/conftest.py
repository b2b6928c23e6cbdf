import numpy as np
import pytest

from deqpocs.rng import RandomStream
from deqpocs.tensors import gaussian_tensor
from oracles import materialize_linear_operator


@pytest.fixture
def rand_tensor():
    def make(shape, seed=0):
        return gaussian_tensor(shape, RandomStream(seed))

    return make


@pytest.fixture
def materialize():
    return materialize_linear_operator
