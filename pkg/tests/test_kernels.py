import numpy as np
import pytest

from radarfusion.kernels import _kernels_py

try:
    from radarfusion.kernels import _kernels_c
except ImportError:
    _kernels_c = None

BACKENDS = [_kernels_py] + ([_kernels_c] if _kernels_c is not None else [])


@pytest.fixture(params=BACKENDS, ids=lambda m: m.BACKEND)
def backend(request):
    return request.param


def test_cython_backend_built():
    assert _kernels_c is not None, "compiled kernel extension missing"


class TestIouMatrix:
    def test_basic(self, backend):
        a = np.array([[0, 0, 2, 2], [0, 0, 1, 1]], dtype=float)
        b = np.array([[1, 1, 3, 3]], dtype=float)
        out = backend.iou_matrix(a, b)
        assert out.shape == (2, 1)
        assert out[0, 0] == pytest.approx(1 / 7)
        assert out[1, 0] == 0.0

    def test_empty(self, backend):
        out = backend.iou_matrix(np.zeros((0, 4)), np.zeros((3, 4)))
        assert out.shape == (0, 3)

    def test_backends_agree(self):
        if _kernels_c is None:
            pytest.skip("no compiled backend")
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 50, size=(40, 4))
        a[:, 2:] += a[:, :2]
        b = rng.uniform(0, 50, size=(30, 4))
        b[:, 2:] += b[:, :2]
        np.testing.assert_array_equal(_kernels_py.iou_matrix(a, b), _kernels_c.iou_matrix(a, b))


class TestRoiPoolMax:
    def test_constant_map(self, backend):
        fm = np.full((8, 8, 3), 2.5)
        out, argmax = backend.roi_pool_max(fm, 1.0, 1.0, 6.0, 6.0, 4, 4)
        assert np.all(out == 2.5)
        assert np.all(argmax >= 0)

    def test_2x2_to_1x1_takes_max(self, backend):
        fm = np.zeros((2, 2, 1))
        fm[:, :, 0] = [[1.0, 7.0], [3.0, 5.0]]
        out, argmax = backend.roi_pool_max(fm, 0.0, 0.0, 2.0, 2.0, 1, 1)
        assert out[0, 0, 0] == 7.0
        assert argmax[0, 0, 0] == 1  # row 0, col 1

    def test_empty_bins_zero(self, backend):
        fm = np.ones((4, 4, 1))
        # box hanging off the top-left corner: clipped bins come out empty
        out, argmax = backend.roi_pool_max(fm, -6.0, -6.0, 3.0, 3.0, 3, 3)
        assert out[2, 2, 0] == 1.0
        assert np.all(out[0, :, 0] == 0.0)
        assert np.all(out[:, 0, 0] == 0.0)
        assert np.all(argmax[0, :, 0] == -1)

    def test_backends_agree(self):
        if _kernels_c is None:
            pytest.skip("no compiled backend")
        rng = np.random.default_rng(1)
        for _ in range(30):
            fm = rng.normal(size=(10, 12, 4))
            x1, y1 = rng.uniform(-1, 8, size=2)
            x2 = x1 + rng.uniform(0.2, 8)
            y2 = y1 + rng.uniform(0.2, 8)
            out_p, arg_p = _kernels_py.roi_pool_max(fm, x1, y1, x2, y2, 5, 5)
            out_c, arg_c = _kernels_c.roi_pool_max(fm, x1, y1, x2, y2, 5, 5)
            np.testing.assert_array_equal(out_p, out_c)
            np.testing.assert_array_equal(arg_p, arg_c)
