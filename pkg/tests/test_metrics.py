"""
Description:
    Tests of the evaluation metrics, the plot series and the sequence report.

To-do:
"""
# third party imports
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

# local imports
from managers.energy import GroundPlane
from managers.fpp_net import FppPrediction
from managers.metrics import (
    MetricsError, REPORT_FIELDS, contact_prf_iou, contact_slide, depth_error,
    evaluate_sequence, foot_acceleration_series, foot_jitter, mfce, model_contact_from_fit,
    mpjpe, pmpjpe, pressure_error, pve_feet, reports_to_dataframe, similarity_align, traj,
    trajectory_series)
from managers.pressure_contact import DenseContact
from managers.synth_oracle import grid_search_alignment_error


def _skeleton(seed, n_joints=17):
    return np.random.RandomState(seed).uniform(-0.5, 0.5, (n_joints, 3))


def test_mpjpe_in_millimeters():
    gt = np.zeros((2, 4, 3))
    pred = gt.copy()
    pred[..., 0] = 0.01

    assert mpjpe(pred, gt) == pytest.approx(10.0)
    assert mpjpe(gt, gt) == 0.0

    with pytest.raises(MetricsError):
        mpjpe(np.zeros((4, 3)), np.zeros((5, 3)))
    with pytest.raises(MetricsError):
        mpjpe(np.zeros((4, 2)), np.zeros((4, 2)))


def test_pmpjpe_ignores_similarity_transforms():
    gt = _skeleton(0)
    rotation = Rotation.from_rotvec([0.3, -1.2, 0.5]).as_matrix()
    pred = 1.7 * gt.dot(rotation.T) + np.array([2.0, -1.0, 4.0])

    assert mpjpe(pred, gt) > 100.0
    assert pmpjpe(pred, gt) == pytest.approx(0.0, abs=1e-6)
    assert np.allclose(similarity_align(pred[None], gt[None])[0], gt)


def test_pmpjpe_excludes_reflections():
    gt = _skeleton(1)
    mirrored = gt * np.array([-1.0, 1.0, 1.0])

    assert pmpjpe(mirrored, gt) > 10.0


def test_pmpjpe_matches_the_grid_search():
    gt = _skeleton(2)
    noise = 0.005 * np.random.RandomState(2).randn(*gt.shape)
    pred = 1.25 * gt.dot(Rotation.from_euler('z', 30, degrees=True).as_matrix().T) + noise

    closed_form = pmpjpe(pred, gt)
    searched = grid_search_alignment_error(pred, gt)

    assert closed_form < 10.0
    assert abs(closed_form - searched) < 1.5


def test_alignment_never_increases_the_error():
    rng = np.random.RandomState(5)

    for i in range(1000):
        gt = _skeleton(1000 + i)
        if i % 4 == 0:
            pred = _skeleton(5000 + i)
        else:
            rotation = Rotation.from_rotvec(rng.uniform(-np.pi, np.pi, 3) / np.sqrt(3)).as_matrix()
            pred = rng.uniform(0.5, 2.0) * gt.dot(rotation.T) + rng.randn(3) \
                + rng.uniform(0.0, 0.05) * rng.randn(*gt.shape)

        assert pmpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9


def test_pve_feet_uses_the_foot_vertices():
    gt = np.zeros((10, 3))
    pred = gt.copy()
    pred[[2, 3], 1] = 0.02

    assert pve_feet(pred, gt, [2, 3]) == pytest.approx(20.0)
    assert pve_feet(pred, gt, [0, 1]) == 0.0


def test_trajectory_error():
    gt = np.zeros((3, 3))
    pred = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.03, 0.0]])

    assert traj(pred, gt) == pytest.approx(10.0)
    absolute = (2.0 + np.hypot(1.0, 0.03)) * 1000.0 / 3.0
    assert traj(pred, gt, relative=False) == pytest.approx(absolute)

    with pytest.raises(MetricsError):
        traj(np.zeros((0, 3)), np.zeros((0, 3)))


def test_mfce():
    pred = np.array([[1, 1, 0], [0, 0, 0]])
    gt = np.zeros((2, 3), dtype=int)

    assert mfce(pred, gt) == pytest.approx(np.sqrt(2.0) / 2.0)
    assert mfce(gt, gt) == 0.0

    with pytest.raises(MetricsError):
        mfce(np.zeros((2, 3)), np.zeros((2, 4)))


def test_contact_scores():
    precision, recall, f1, iou = contact_prf_iou(np.array([[1, 1, 0, 0]]), np.array([[1, 0, 1, 0]]))

    assert (precision, recall, f1) == pytest.approx((0.5, 0.5, 0.5))
    assert iou == pytest.approx(1.0 / 3.0)

    nothing = np.zeros((3, 4), dtype=int)
    assert contact_prf_iou(nothing, nothing) == (1.0, 1.0, 1.0, 1.0)

    missed = contact_prf_iou(nothing, np.eye(3, 4, dtype=int))
    assert missed == (0.0, 0.0, 0.0, 0.0)


def test_contact_scores_accept_contact_types():
    gt = [DenseContact(np.full(4, 0.7), np.array([1, 1, 0, 0]))]
    pred = [FppPrediction(np.array([0.9, 0.5, 0.49, 0.1]), np.zeros(4))]

    assert contact_prf_iou(pred, gt) == (1.0, 1.0, 1.0, 1.0)


def test_foot_jitter():
    dt = 0.1
    t = np.arange(6)[:, None, None] * dt
    velocity = np.array([0.3, 0.0, -0.2])

    steady = np.zeros((6, 24, 3)) + velocity * t
    assert foot_jitter(steady, dt) == pytest.approx(0.0, abs=1e-9)

    accelerating = np.zeros((6, 24, 3))
    accelerating[..., 1] = 0.5 * 2.0 * t[..., 0] ** 2
    assert foot_jitter(accelerating, dt) == pytest.approx(2.0)

    assert foot_jitter(steady[:2], dt) == 0.0


def test_contact_slide_counts_kept_contacts_only():
    vertices = np.zeros((3, 6, 3))
    vertices[1, :, 0] = 0.01
    vertices[2, :, 0] = 0.04
    labels = np.array([[1, 1, 0], [1, 0, 1], [1, 0, 1]])

    # vertex 0 slides 10 mm then 30 mm, vertex 2 slides 30 mm
    assert contact_slide(vertices, labels, [0, 1, 2]) == pytest.approx(70.0 / 3.0)
    assert contact_slide(vertices, np.zeros((3, 3), dtype=int), [0, 1, 2]) == 0.0

    with pytest.raises(MetricsError):
        contact_slide(vertices[:2], labels, [0, 1, 2])


def test_fitted_contact_threshold_is_inclusive():
    floor = GroundPlane((0.0, 1.0, 0.0), 0.0)
    vertices = np.zeros((4, 3))
    vertices[:, 1] = [0.0, 0.01, -0.01, 0.0101]

    assert model_contact_from_fit(vertices, floor, np.arange(4)).tolist() == [1, 1, 1, 0]
    assert model_contact_from_fit(vertices, floor, np.arange(4), threshold=0.0).tolist() == \
        [1, 0, 0, 0]


def test_depth_and_pressure_errors():
    vertices = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]])
    cloud = np.array([[0.0, 0.0, 1.01], [1.0, 0.02, 1.0]])

    assert depth_error(vertices, cloud) == pytest.approx(15.0)
    assert np.isnan(depth_error(vertices, np.zeros((0, 3))))

    assert pressure_error([0.5, 0.7], [0.5, 0.5]) == pytest.approx(0.02)
    with pytest.raises(MetricsError):
        pressure_error([0.5], [0.5, 0.5])


def test_plot_series():
    dt = 0.5
    gt = np.zeros((4, 3))
    pred = np.zeros((4, 3))
    pred[:, 0] = [1.0, 1.0, 1.1, 1.2]

    df = trajectory_series(pred, gt, dt)
    assert list(df.columns) == [
        'time', 'pred_x', 'pred_y', 'pred_z', 'gt_x', 'gt_y', 'gt_z', 'error_mm']
    assert df['time'].tolist() == [0.0, 0.5, 1.0, 1.5]
    assert df['error_mm'].tolist() == pytest.approx([0.0, 0.0, 100.0, 200.0])

    joints = np.random.RandomState(0).randn(5, 24, 3)
    accelerations = foot_acceleration_series(joints, dt)
    assert list(accelerations.columns) == ['time', 'l_ankle', 'l_foot', 'r_ankle', 'r_foot']
    assert accelerations['time'].tolist() == [0.5, 1.0, 1.5]


def test_perfect_fit_report(walk_sequence, model, floor):
    gt = walk_sequence.gt.params[:10]
    report, pred_joints, gt_joints = evaluate_sequence(
        'walk', gt, gt, model, floor, walk_sequence.gt.contacts[:10])

    assert report.sequence == 'walk'
    assert report.mpjpe == report.pve == report.pve_feet == report.traj == 0.0
    assert report.pmpjpe == pytest.approx(0.0, abs=1e-6)
    assert np.array_equal(pred_joints, gt_joints)
    assert pred_joints.shape == (10, 24, 3)

    # the fitted soles touch the floor wherever the ground truth does
    assert report.recall == 1.0
    assert not np.isnan(report.mfce)


def test_report_without_contact(walk_sequence, model, floor):
    gt = walk_sequence.gt.params[:4]
    report, _, _ = evaluate_sequence('walk', gt, gt, model, floor)

    assert np.isnan(report.mfce) and np.isnan(report.f1)

    df = reports_to_dataframe([report, report])
    assert list(df.columns) == REPORT_FIELDS
    assert len(df) == 2

    with pytest.raises(MetricsError):
        evaluate_sequence('walk', gt[:3], gt, model, floor)
