import math

import numpy as np
import pytest

from radarfusion.radar import RadarDetection, aggregate_sweeps, to_vehicle_frame


def det(x, y, z=0.0, vx=0.0, vy=0.0, t=0.0):
    return RadarDetection(position=(x, y, z), velocity=(vx, vy), timestamp=t)


class TestToVehicleFrame:
    def test_identity(self):
        dets = [det(1, 2), det(3, -4)]
        out = to_vehicle_frame(dets, np.eye(3), np.zeros(3))
        assert [d.position for d in out] == [d.position for d in dets]

    def test_pure_translation_leaves_velocity(self):
        out = to_vehicle_frame([det(1, 2, vx=3, vy=4)], np.eye(3), np.array([1.0, 0, 0]))
        assert out[0].position == pytest.approx((2.0, 2.0, 0.0))
        assert out[0].velocity == pytest.approx((3.0, 4.0))

    def test_quarter_turn(self):
        ang = math.pi / 2
        rot = np.array(
            [[math.cos(ang), -math.sin(ang), 0], [math.sin(ang), math.cos(ang), 0], [0, 0, 1]]
        )
        out = to_vehicle_frame([det(1, 0, vx=1, vy=0)], rot, np.zeros(3))
        assert out[0].position == pytest.approx((0.0, 1.0, 0.0), abs=1e-12)
        assert out[0].velocity == pytest.approx((0.0, 1.0), abs=1e-12)

    def test_rejects_bad_rotation(self):
        bad = np.eye(3) * 1.001
        with pytest.raises(ValueError):
            to_vehicle_frame([det(1, 0)], bad, np.zeros(3))

    def test_isometry(self):
        rng = np.random.default_rng(3)
        # random rotation via QR with positive diagonal
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q = q @ np.diag(np.sign(np.diag(r)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        dets = [det(*rng.uniform(1, 10, size=3)) for _ in range(6)]
        out = to_vehicle_frame(dets, q, rng.normal(size=3))
        for i in range(len(dets)):
            for j in range(i):
                d_in = np.linalg.norm(np.subtract(dets[i].position, dets[j].position))
                d_out = np.linalg.norm(np.subtract(out[i].position, out[j].position))
                assert d_out == pytest.approx(d_in, abs=1e-9)


class TestAggregateSweeps:
    def test_single_current_sweep(self):
        dets = [det(1, 1, t=5.0)]
        out = aggregate_sweeps([(dets, 5.0)], reference_time=5.0)
        assert out.detections == tuple(dets)
        assert out.reference_time == 5.0

    def test_stale_sweep_dropped(self):
        out = aggregate_sweeps([([det(1, 1)], 0.0)], reference_time=10.0, max_age=0.5)
        assert len(out) == 0

    def test_motion_compensation(self):
        d = det(5, 0, vx=10.0, t=0.0)
        out = aggregate_sweeps([([d], 0.0)], reference_time=0.1, compensate_motion=True)
        assert out.detections[0].position == pytest.approx((6.0, 0.0, 0.0))

    def test_compensation_off_by_default(self):
        d = det(5, 0, vx=10.0, t=0.0)
        out = aggregate_sweeps([([d], 0.0)], reference_time=0.1)
        assert out.detections[0].position == (5.0, 0.0, 0.0)

    def test_infinite_age_concatenates_exactly(self):
        sweeps = [([det(1, 1, t=0.0)], 0.0), ([det(2, 2, t=1.0), det(3, 3, t=1.0)], 1.0)]
        out = aggregate_sweeps(sweeps, reference_time=1.0, max_age=math.inf)
        assert list(out.detections) == sweeps[0][0] + sweeps[1][0]

    def test_size_bound(self):
        sweeps = [([det(1, 1, t=0.0)], 0.0), ([det(2, 2, t=0.9)], 0.9)]
        out = aggregate_sweeps(sweeps, reference_time=1.0, max_age=0.5)
        assert len(out) <= 2


class TestRadarDetection:
    def test_rejects_origin(self):
        with pytest.raises(ValueError):
            RadarDetection(position=(0.0, 0.0, 0.0))

    def test_rejects_nonfinite_timestamp(self):
        with pytest.raises(ValueError):
            RadarDetection(position=(1.0, 0.0, 0.0), timestamp=math.nan)
