import os

os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

import numpy as np
import pytest
import torch

torch.set_num_threads(2)

from sketchsplat.mesh import default_head_mesh
from sketchsplat.nn.arch import DEFAULT_ARCH
from sketchsplat.nn.weights import init_weights

DEFAULT_SEED = 1234


@pytest.fixture(scope="session")
def mesh():
    return default_head_mesh()


@pytest.fixture(scope="session")
def store():
    return init_weights(DEFAULT_ARCH, DEFAULT_SEED)


@pytest.fixture(scope="session")
def arch():
    return DEFAULT_ARCH


def random_quaternion(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return (q / np.linalg.norm(q)).astype(np.float32)


def quat_multiply(a, b):
    """Hamilton product of wxyz quaternions (test-side helper)."""
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], dtype=np.float64)
