import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radarfusion.geometry import (
    Box2D,
    Box3D,
    CameraCalibration,
    FORWARD_CAMERA_ROTATION,
    box3d_corners,
    enclosing_box2d,
    iou_2d,
    planar_distance,
    project_to_image,
)


def make_calib(fx=100.0, fy=100.0, cx=320.0, cy=240.0, width=640, height=480):
    """Camera at the vehicle origin, optical axis along vehicle +x."""
    return CameraCalibration(
        fx=fx, fy=fy, cx=cx, cy=cy,
        rotation=FORWARD_CAMERA_ROTATION,
        translation=np.zeros(3),
        width=width, height=height,
    )


class TestCalibration:
    def test_rejects_non_orthonormal_rotation(self):
        bad = np.eye(3)
        bad[0, 0] = 1.1
        with pytest.raises(ValueError):
            CameraCalibration(100, 100, 0, 0, bad, np.zeros(3), 10, 10)

    def test_rejects_reflection(self):
        refl = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            CameraCalibration(100, 100, 0, 0, refl, np.zeros(3), 10, 10)

    def test_rejects_non_positive_focal(self):
        with pytest.raises(ValueError):
            CameraCalibration(0.0, 100, 0, 0, np.eye(3), np.zeros(3), 10, 10)


class TestProjectToImage:
    def test_principal_point(self):
        # point on the optical axis maps to the principal point
        uv = project_to_image((10.0, 0.0, 0.0), make_calib())
        assert uv == pytest.approx((320.0, 240.0))

    def test_pinhole_arithmetic(self):
        # camera-frame point (1, 0, 2): u = 100 * (1/2) + 320 = 370
        calib = CameraCalibration(
            fx=100, fy=100, cx=320, cy=240,
            rotation=np.eye(3), translation=np.zeros(3),
            width=640, height=480,
        )
        uv = project_to_image((1.0, 0.0, 2.0), calib)
        assert uv == pytest.approx((370.0, 240.0))

    def test_behind_camera_absent(self):
        calib = CameraCalibration(
            fx=100, fy=100, cx=320, cy=240,
            rotation=np.eye(3), translation=np.zeros(3),
            width=640, height=480,
        )
        assert project_to_image((0.0, 0.0, -5.0), calib) is None

    def test_scale_consistency(self):
        # doubling fx doubles the pixel offset from the principal point
        p = (0.7, 0.0, 2.0)
        calib1 = CameraCalibration(100, 100, 320, 240, np.eye(3), np.zeros(3), 640, 480)
        calib2 = CameraCalibration(200, 100, 320, 240, np.eye(3), np.zeros(3), 640, 480)
        u1 = project_to_image(p, calib1)[0] - 320
        u2 = project_to_image(p, calib2)[0] - 320
        assert u2 == pytest.approx(2 * u1)


class TestBox3dCorners:
    def test_unit_cube(self):
        corners = box3d_corners(Box3D(center=(0, 0, 0), size=(1, 1, 1), yaw=0.0))
        expected = {(sx * 0.5, sy * 0.5, sz * 0.5) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)}
        got = {tuple(np.round(c, 12)) for c in corners}
        assert got == expected

    def test_yaw_quarter_turn_swaps_extents(self):
        a = box3d_corners(Box3D(center=(0, 0, 0), size=(2.0, 6.0, 1.0), yaw=0.0))
        b = box3d_corners(Box3D(center=(0, 0, 0), size=(2.0, 6.0, 1.0), yaw=math.pi / 2))
        ax = a[:, 0].max() - a[:, 0].min()
        ay = a[:, 1].max() - a[:, 1].min()
        bx = b[:, 0].max() - b[:, 0].min()
        by = b[:, 1].max() - b[:, 1].min()
        assert (bx, by) == pytest.approx((ay, ax))

    def test_yaw_45_square_grows_sqrt2(self):
        # oracle: brute-force rotate-and-bound of the corner set
        w = l = 2.0
        base = [(sx * l / 2, sy * w / 2) for sx in (-1, 1) for sy in (-1, 1)]
        ang = math.pi / 4
        rotated = [
            (x * math.cos(ang) - y * math.sin(ang), x * math.sin(ang) + y * math.cos(ang))
            for x, y in base
        ]
        expected_extent = max(x for x, _ in rotated) - min(x for x, _ in rotated)
        corners = box3d_corners(Box3D(center=(0, 0, 0), size=(w, l, 1.0), yaw=ang))
        extent = corners[:, 0].max() - corners[:, 0].min()
        assert extent == pytest.approx(expected_extent)
        assert extent == pytest.approx(l * math.sqrt(2))

    def test_yaw0_bound_roundtrip_exact(self):
        box = Box3D(center=(3.0, -2.0, 1.0), size=(1.5, 4.0, 2.0), yaw=0.0)
        corners = box3d_corners(box)
        assert corners[:, 0].min() == 3.0 - 2.0 and corners[:, 0].max() == 3.0 + 2.0
        assert corners[:, 1].min() == -2.0 - 0.75 and corners[:, 1].max() == -2.0 + 0.75
        assert corners[:, 2].min() == 0.0 and corners[:, 2].max() == 2.0


class TestEnclosingBox2d:
    def test_on_axis_cube_symmetric(self):
        calib = make_calib()
        box = enclosing_box2d(Box3D(center=(10, 0, 0), size=(2, 2, 2), yaw=0.0), calib)
        assert box is not None
        assert (box.x1 + box.x2) / 2 == pytest.approx(320.0)
        assert (box.y1 + box.y2) / 2 == pytest.approx(240.0)

    def test_behind_camera_absent(self):
        calib = make_calib()
        box = enclosing_box2d(Box3D(center=(-10, 0, 0), size=(2, 2, 2), yaw=0.0), calib)
        assert box is None

    def test_half_extent_bounds(self):
        # 2 m cube at 10 m, fx = 500: half-extent between 500/11 and 500/9
        calib = make_calib(fx=500.0, fy=500.0)
        box = enclosing_box2d(Box3D(center=(10, 0, 0), size=(2, 2, 2), yaw=0.0), calib)
        half = (box.x2 - box.x1) / 2
        assert 500.0 / 11.0 < half < 500.0 / 9.0

    def test_contains_all_visible_corners(self):
        rng = np.random.default_rng(7)
        calib = make_calib()
        for _ in range(100):
            box3 = Box3D(
                center=(rng.uniform(5, 30), rng.uniform(-5, 5), rng.uniform(0, 2)),
                size=tuple(rng.uniform(0.5, 4.0, size=3)),
                yaw=rng.uniform(-math.pi, math.pi - 1e-9),
            )
            box2 = enclosing_box2d(box3, calib)
            if box2 is None:
                continue
            for corner in box3d_corners(box3):
                uv = project_to_image(corner, calib)
                u = min(max(uv[0], 0.0), calib.width)
                v = min(max(uv[1], 0.0), calib.height)
                assert box2.x1 - 1e-9 <= u <= box2.x2 + 1e-9
                assert box2.y1 - 1e-9 <= v <= box2.y2 + 1e-9


def _raster_iou(a: Box2D, b: Box2D, step=0.001) -> float:
    """Rasterization oracle: count sub-pixel cells inside each box."""
    x_lo = min(a.x1, b.x1)
    x_hi = max(a.x2, b.x2)
    y_lo = min(a.y1, b.y1)
    y_hi = max(a.y2, b.y2)
    xs = np.arange(x_lo + step / 2, x_hi, step)
    ys = np.arange(y_lo + step / 2, y_hi, step)
    in_a = ((xs >= a.x1) & (xs <= a.x2))[None, :] & ((ys >= a.y1) & (ys <= a.y2))[:, None]
    in_b = ((xs >= b.x1) & (xs <= b.x2))[None, :] & ((ys >= b.y1) & (ys <= b.y2))[:, None]
    inter = np.count_nonzero(in_a & in_b)
    union = np.count_nonzero(in_a | in_b)
    return inter / union


class TestIou2d:
    def test_identical(self):
        box = Box2D(1, 2, 4, 8)
        assert iou_2d(box, box) == 1.0

    def test_disjoint(self):
        assert iou_2d(Box2D(0, 0, 1, 1), Box2D(2, 2, 3, 3)) == 0.0

    def test_one_seventh_vs_raster_oracle(self):
        a = Box2D(0, 0, 2, 2)
        b = Box2D(1, 1, 3, 3)
        assert iou_2d(a, b) == pytest.approx(1.0 / 7.0)
        assert iou_2d(a, b) == pytest.approx(_raster_iou(a, b), abs=1e-3)

    @given(
        st.tuples(*[st.floats(-50, 50) for _ in range(4)]),
        st.tuples(*[st.floats(-50, 50) for _ in range(4)]),
    )
    def test_symmetry(self, raw_a, raw_b):
        def mk(raw):
            x1, y1, dx, dy = raw
            return Box2D(x1, y1, x1 + abs(dx) + 0.1, y1 + abs(dy) + 0.1)

        a, b = mk(raw_a), mk(raw_b)
        assert iou_2d(a, b) == iou_2d(b, a)
        assert 0.0 <= iou_2d(a, b) <= 1.0


class TestPlanarDistance:
    def test_345(self):
        assert planar_distance((3.0, 4.0, 1.7)) == 5.0

    def test_origin(self):
        assert planar_distance((0.0, 0.0, 0.0)) == 0.0

    def test_negative_components(self):
        assert planar_distance((-6.0, 8.0, 0.0)) == 10.0
