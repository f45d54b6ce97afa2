import numpy as np
import pytest

from tracelearn import _kernels_py, kernels
from tracelearn.mdp import make_grid

compiled = pytest.importorskip("tracelearn._kernels")


@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    g = make_grid(12, 10, seed)
    rng = np.random.default_rng(seed)
    mask = g.mask
    for _ in range(20):
        goal, start = (int(v) for v in rng.integers(0, g.n_cells, 2))
        tables = {}
        for penalty in (1, 20):
            a = compiled.cost_to_go(mask, g.width, g.height, goal, penalty)
            b = _kernels_py.cost_to_go(mask, g.width, g.height, goal, penalty)
            np.testing.assert_array_equal(a, b)
            tables[penalty] = b
        for mode in (0, 1, 2):
            args = (mask, g.width, g.height, start, goal, tables[1], tables[20], 20, mode)
            ra, rb = compiled.rollout(*args), _kernels_py.rollout(*args)
            assert list(ra[0]) == list(rb[0])
            assert list(ra[1]) == list(rb[1])
            assert ra[2] == rb[2]


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
