"""
Description:
    Evaluation quantities: joint, vertex and trajectory errors, foot contact
    agreement, foot jitter, plus the per-frame plot series and the per
    sequence report.

To-do:
"""
# standard imports
from collections import namedtuple
import logging as log
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../'))

# third party imports
import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix
from sklearn.neighbors import KDTree

# local imports
from managers.body_model import FOOT_JOINTS, JOINT_NAMES
from managers.fpp_net import FppPrediction
from managers.pressure_contact import CONTACT_THRESHOLD

FIT_CONTACT_THRESHOLD = 0.01
PELVIS = 0

REPORT_FIELDS = [
    'sequence', 'mpjpe', 'pmpjpe', 'pve', 'pve_feet', 'traj', 'mfce',
    'precision', 'recall', 'f1', 'iou', 'foot_jitter']


class MetricsError(ValueError):
    pass


class MetricsReport(namedtuple('MetricsReport', REPORT_FIELDS)):
    """
    Errors in millimeters, MFCE in label units, foot jitter in m/s^2.
    Entries without the data to compute them are NaN.
    """
    __slots__ = ()

    def to_record(self):
        record = self._asdict()
        return {k: (v if isinstance(v, str) else float(v)) for k, v in record.items()}

    def to_dataframe(self):
        return pd.DataFrame([self.to_record()], columns=REPORT_FIELDS)


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)

    if pred.shape != gt.shape:
        raise MetricsError('shape mismatch: {} vs {}'.format(pred.shape, gt.shape))
    if pred.shape[-1] != 3:
        raise MetricsError('points must be 3D, got shape {}'.format(pred.shape))

    return pred, gt


def mpjpe(pred, gt):
    """
    Mean per-joint position error.

    Inputs:
        pred, gt: (np.array) (T x) J x 3 joints in meters.

    Returns:
        (float) Error in millimeters.
    """
    pred, gt = _pair(pred, gt)

    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)) * 1000.0)


def similarity_align(pred, gt):
    """
    Align pred onto gt with the least-squares rotation, uniform scale and
    translation, frame by frame. Reflections are excluded.

    Inputs:
        pred, gt: (np.array) T x J x 3.

    Returns:
        (np.array) T x J x 3 aligned prediction.
    """
    mu_gt = gt.mean(axis=1, keepdims=True)
    mu_pred = pred.mean(axis=1, keepdims=True)
    gt0 = gt - mu_gt
    pred0 = pred - mu_pred

    norm_gt = np.sqrt(np.sum(gt0 ** 2, axis=(1, 2), keepdims=True))
    norm_pred = np.sqrt(np.sum(pred0 ** 2, axis=(1, 2), keepdims=True))
    norm_gt = np.where(norm_gt > 0, norm_gt, 1.0)
    norm_pred = np.where(norm_pred > 0, norm_pred, 1.0)

    H = np.matmul((gt0 / norm_gt).transpose(0, 2, 1), pred0 / norm_pred)
    U, s, Vt = np.linalg.svd(H)
    V = Vt.transpose(0, 2, 1)
    R = np.matmul(V, U.transpose(0, 2, 1))

    # no reflections
    sign = np.sign(np.linalg.det(R))
    sign = np.where(sign == 0, 1.0, sign)
    V[:, :, -1] *= sign[:, None]
    s[:, -1] *= sign
    R = np.matmul(V, U.transpose(0, 2, 1))

    scale = np.sum(s, axis=1)[:, None, None] * norm_gt / norm_pred
    translation = mu_gt - scale * np.matmul(mu_pred, R)

    return scale * np.matmul(pred, R) + translation


def pmpjpe(pred, gt):
    """
    MPJPE after similarity alignment of every frame.

    Returns:
        (float) Error in millimeters.
    """
    pred, gt = _pair(pred, gt)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]

    return mpjpe(similarity_align(pred, gt), gt)


def pve(pred_vertices, gt_vertices):
    """
    Mean per-vertex error in millimeters.
    """
    return mpjpe(pred_vertices, gt_vertices)


def pve_feet(pred_vertices, gt_vertices, foot_ids):
    """
    Mean per-vertex error over the foot vertices, in millimeters.
    """
    pred, gt = _pair(pred_vertices, gt_vertices)
    foot_ids = np.asarray(foot_ids, dtype=int)

    return mpjpe(pred[..., foot_ids, :], gt[..., foot_ids, :])


def traj(pred_pelvis, gt_pelvis, relative=True):
    """
    Pelvis trajectory error. With relative=True both trajectories are taken
    as displacements from their own first frame.

    Inputs:
        pred_pelvis, gt_pelvis: (np.array) T x 3 in meters.
        relative: (bool, optional) Start-relative (default) or absolute.

    Returns:
        (float) Mean displacement error in millimeters.
    """
    pred, gt = _pair(pred_pelvis, gt_pelvis)
    if pred.ndim != 2 or len(pred) == 0:
        raise MetricsError('expected non-empty T x 3 pelvis trajectories')

    if relative:
        pred = pred - pred[0]
        gt = gt - gt[0]

    return float(np.mean(np.linalg.norm(pred - gt, axis=1)) * 1000.0)


def _labels(contact):
    if isinstance(contact, FppPrediction):
        return (np.asarray(contact.contact_prob) >= CONTACT_THRESHOLD).astype(int)
    if hasattr(contact, 'labels'):
        return np.asarray(contact.labels, dtype=int)

    return np.asarray(contact, dtype=int)


def _label_matrix(contacts):
    if isinstance(contacts, np.ndarray):
        return np.atleast_2d(contacts).astype(int)

    return np.atleast_2d(np.array([_labels(c) for c in contacts], dtype=int))


def mfce(pred_contact, gt_contact):
    """
    Mean foot-contact error: L2 norm of the per-frame label difference,
    averaged over frames.

    Inputs:
        pred_contact, gt_contact: (list or np.array) Per-frame labels,
            DenseContact or FppPrediction.

    Returns:
        (float) Error.
    """
    pred = _label_matrix(pred_contact)
    gt = _label_matrix(gt_contact)
    if pred.shape != gt.shape:
        raise MetricsError('contact shape mismatch: {} vs {}'.format(pred.shape, gt.shape))

    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def contact_prf_iou(pred_contact, gt_contact):
    """
    Precision, recall, F1 and IoU over all vertices and frames. When neither
    side has a positive label the agreement is perfect and all four are 1.

    Returns:
        precision, recall, f1, iou: (float)
    """
    pred = _label_matrix(pred_contact).ravel()
    gt = _label_matrix(gt_contact).ravel()
    if pred.shape != gt.shape:
        raise MetricsError('contact shape mismatch: {} vs {}'.format(pred.shape, gt.shape))

    _, fp, fn, tp = confusion_matrix(gt, pred, labels=[0, 1]).ravel()

    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0, 1.0

    precision = tp / float(tp + fp) if tp + fp else 0.0
    recall = tp / float(tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    iou = tp / float(tp + fp + fn)

    return float(precision), float(recall), float(f1), float(iou)


def _accelerations(joints, dt, joint_ids):
    joints = np.asarray(joints, dtype=float)[:, joint_ids]
    if len(joints) < 3:
        return np.zeros((0, len(joint_ids)))

    second = joints[2:] - 2.0 * joints[1:-1] + joints[:-2]

    return np.linalg.norm(second, axis=-1) / (dt * dt)


def foot_jitter(joints, dt, joint_ids=FOOT_JOINTS):
    """
    Mean norm of the second central difference of the foot joints.

    Inputs:
        joints: (np.array) T x 24 x 3 joint positions.
        dt: (float) Frame interval in seconds.
        joint_ids: (list, optional) Joints to measure.

    Returns:
        (float) Mean absolute acceleration in m/s^2. Zero below three frames.
    """
    accelerations = _accelerations(joints, dt, joint_ids)

    return float(accelerations.mean()) if accelerations.size else 0.0


def contact_slide(vertices, contacts, foot_ids):
    """
    Mean displacement between consecutive frames of the foot vertices that
    are labeled in contact in both.

    Inputs:
        vertices: (np.array) T x N x 3 posed vertices.
        contacts: (list) DenseContact, FppPrediction or label array per frame.
        foot_ids: (np.array) 192 foot vertex indices.

    Returns:
        (float) Millimeters. Zero when no vertex stays in contact.
    """
    feet = np.asarray(vertices, dtype=float)[:, foot_ids]
    labels = _label_matrix(contacts)
    if len(feet) != len(labels):
        raise MetricsError('{} vertex frames for {} contact frames'.format(len(feet), len(labels)))

    kept = (labels[1:] == 1) & (labels[:-1] == 1)
    if not np.any(kept):
        return 0.0

    step = np.linalg.norm(feet[1:] - feet[:-1], axis=-1)

    return float(step[kept].mean() * 1000.0)


def model_contact_from_fit(vertices, floor, foot_ids, threshold=FIT_CONTACT_THRESHOLD):
    """
    Contact of a fitted body: a foot vertex touches when its distance to the
    floor is at most 'threshold'.

    Inputs:
        vertices: (np.array) N x 3 posed vertices.
        floor: (GroundPlane) Floor.
        foot_ids: (np.array) 192 foot vertex indices.
        threshold: (float, optional) Distance in meters.

    Returns:
        (np.array) 192 labels.
    """
    heights = floor.height(np.asarray(vertices, dtype=float)[foot_ids])

    return (np.abs(heights) <= threshold).astype(int)


def depth_error(vertices, cloud):
    """
    Mean distance from cloud points to the nearest body vertex, in millimeters.
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) == 0:
        return float('nan')

    distance, _ = KDTree(np.asarray(vertices, dtype=float)).query(cloud, k=1)

    return float(distance.mean() * 1000.0)


def pressure_error(pred_pressure, gt_pressure):
    """
    Mean squared error of per-vertex pressure.
    """
    pred = np.asarray(pred_pressure, dtype=float)
    gt = np.asarray(gt_pressure, dtype=float)
    if pred.shape != gt.shape:
        raise MetricsError('pressure shape mismatch: {} vs {}'.format(pred.shape, gt.shape))

    return float(np.mean((pred - gt) ** 2))


def trajectory_series(pred_pelvis, gt_pelvis, dt):
    """
    Start-relative pelvis displacement of prediction and ground truth over time.

    Returns:
        (pd.DataFrame) time, pred_x..z, gt_x..z, error_mm per frame.
    """
    pred, gt = _pair(pred_pelvis, gt_pelvis)
    pred = pred - pred[0]
    gt = gt - gt[0]

    df = pd.DataFrame({'time': np.arange(len(pred)) * dt})
    for i, axis in enumerate('xyz'):
        df['pred_' + axis] = pred[:, i]
    for i, axis in enumerate('xyz'):
        df['gt_' + axis] = gt[:, i]
    df['error_mm'] = np.linalg.norm(pred - gt, axis=1) * 1000.0

    return df


def foot_acceleration_series(joints, dt, joint_ids=FOOT_JOINTS):
    """
    Acceleration norm of every foot joint over time, at the interior frames.

    Returns:
        (pd.DataFrame) time plus one column per joint.
    """
    accelerations = _accelerations(joints, dt, joint_ids)

    df = pd.DataFrame({'time': (np.arange(len(accelerations)) + 1) * dt})
    for k, joint in enumerate(joint_ids):
        df[JOINT_NAMES[joint]] = accelerations[:, k]

    return df


def evaluate_sequence(
        name,
        pred_params,
        gt_params,
        model,
        floor,
        gt_contacts=None,
        pred_contacts=None,
        dt=1.0 / 30.0,
        threshold=FIT_CONTACT_THRESHOLD,
        relative=True):
    """
    Build the report of one sequence.

    Inputs:
        name: (str) Sequence name.
        pred_params, gt_params: (list) BodyParams per frame.
        model: (BodyModel) Body model.
        floor: (GroundPlane) Floor.
        gt_contacts: (list, optional) Ground-truth DenseContact per frame.
        pred_contacts: (list, optional) Predicted contact per frame. Without
            it the contact scores use the fitted body's floor contact.
        dt: (float, optional) Frame interval.
        threshold: (float, optional) Floor distance of the fitted contact.
        relative: (bool, optional) Start-relative trajectory error.

    Returns:
        report: (MetricsReport) Report.
        pred_joints, gt_joints: (np.array) T x 24 x 3 joints, for the plot series.
    """
    if len(pred_params) != len(gt_params):
        raise MetricsError('{} predicted frames for {} ground-truth frames'.format(
            len(pred_params), len(gt_params)))

    pred_vertices, pred_joints = zip(*[model.forward(p) for p in pred_params])
    gt_vertices, gt_joints = zip(*[model.forward(p) for p in gt_params])
    pred_vertices, pred_joints = np.stack(pred_vertices), np.stack(pred_joints)
    gt_vertices, gt_joints = np.stack(gt_vertices), np.stack(gt_joints)

    fit_contact = np.stack([
        model_contact_from_fit(v, floor, model.foot_vertex_ids, threshold) for v in pred_vertices])

    nan = float('nan')
    error_mfce = nan
    precision = recall = f1 = iou = nan
    if gt_contacts is not None:
        error_mfce = mfce(fit_contact, gt_contacts)
        scored = pred_contacts if pred_contacts is not None else fit_contact
        precision, recall, f1, iou = contact_prf_iou(scored, gt_contacts)

    report = MetricsReport(
        sequence=name,
        mpjpe=mpjpe(pred_joints, gt_joints),
        pmpjpe=pmpjpe(pred_joints, gt_joints),
        pve=pve(pred_vertices, gt_vertices),
        pve_feet=pve_feet(pred_vertices, gt_vertices, model.foot_vertex_ids),
        traj=traj(pred_joints[:, PELVIS], gt_joints[:, PELVIS], relative),
        mfce=error_mfce,
        precision=precision,
        recall=recall,
        f1=f1,
        iou=iou,
        foot_jitter=foot_jitter(pred_joints, dt))

    log.info('Metrics of %s: MPJPE %.1f mm, PMPJPE %.1f mm, Traj %.1f mm',
             name, report.mpjpe, report.pmpjpe, report.traj)

    return report, pred_joints, gt_joints


def reports_to_dataframe(reports):
    return pd.DataFrame([r.to_record() for r in reports], columns=REPORT_FIELDS)
