"""
Description:
    Energy terms of the RGBD-P fitting and the VP-MoCap optimization.
    Every term returns (value, gradient) where the gradient covers the
    requested parameter blocks. Gradients come from reverse-mode
    differentiation of the float64 body model.

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
import torch
from sklearn.mixture import GaussianMixture
from sklearn.neighbors import KDTree

# local imports
from managers.body_model import (
    ALL_BLOCKS, BodyModel, BodyParams, BodyTemplate, KEYPOINT_JOINTS, N_POSE,
    active_index, block_slices)
from utils.utilities import file_exists, save_arrays, load_arrays

DEPTH_CAP = 0.05
PRIOR_VERSION = 1
LOG_2PI = np.log(2.0 * np.pi)

WEIGHT_KEYS = [
    'lambda_depth', 'lambda_C_dense', 'lambda_2d', 'lambda_C_temp',
    'lambda_GMM', 'lambda_p', 'lambda_3d', 'lambda_t']
DEFAULT_WEIGHTS = {
    'lambda_depth': 1.0,
    'lambda_C_dense': 10.0,
    'lambda_2d': 1e-4,
    'lambda_C_temp': 10.0,
    'lambda_GMM': 1e-2,
    'lambda_p': 1.0,
    'lambda_3d': 10.0,
    'lambda_t': 5.0}

RGBDP_TERMS = [
    ('depth', 'lambda_depth'),
    ('C_dense', 'lambda_C_dense'),
    ('2d', 'lambda_2d'),
    ('C_temp', 'lambda_C_temp'),
    ('GMM', 'lambda_GMM')]
VP_TERMS = [
    ('2d', None),
    ('p', 'lambda_p'),
    ('3d', 'lambda_3d'),
    ('t', 'lambda_t')]


class EnergyError(ValueError):
    pass


class PriorError(EnergyError):
    pass


class EnergyWeights:
    """
    Non-negative term weights of both objectives.
    """
    def __init__(self, **weights):
        unknown = set(weights) - set(WEIGHT_KEYS)
        if unknown:
            raise EnergyError('Unknown energy weights: {}'.format(sorted(unknown)))

        values = dict(DEFAULT_WEIGHTS)
        values.update(weights)

        for key in WEIGHT_KEYS:
            value = float(values[key])
            if not np.isfinite(value) or value < 0:
                raise EnergyError('{} must be finite and non-negative, got {}'.format(key, value))
            setattr(self, key, value)

    def as_dict(self):
        return {key: getattr(self, key) for key in WEIGHT_KEYS}

    def replace(self, **weights):
        values = self.as_dict()
        values.update(weights)

        return EnergyWeights(**values)

    @classmethod
    def from_config(cls, configparser, section='DEFAULT'):
        weights = {}
        for key in WEIGHT_KEYS:
            if configparser.has_key(key, section=section):
                weights[key] = configparser.getfloat(key, section=section)
                log.debug('%s: %f', key, weights[key])

        return cls(**weights)

    def __repr__(self):
        return 'EnergyWeights({})'.format(
            ', '.join('{}={:g}'.format(k, v) for k, v in self.as_dict().items()))


class GroundPlane(namedtuple('GroundPlane', ['normal', 'offset'])):
    """
    Plane {p : normal . p = offset}. height(p) = normal . p - offset.
    """
    __slots__ = ()

    def __new__(cls, normal=(0.0, 1.0, 0.0), offset=-1.0):
        normal = np.asarray(normal, dtype=float)

        if normal.shape != (3,) or abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            raise EnergyError('ground normal must be a unit 3-vector')

        return super(GroundPlane, cls).__new__(cls, normal, float(offset))

    def height(self, points):
        return np.asarray(points, dtype=float).dot(self.normal) - self.offset


class GmmPosePrior:
    """
    Gaussian mixture over the 72 pose values.
    """
    def __init__(self, weights, means, covariances):
        """
        Class initializer.

        Inputs:
            weights: (np.array) K mixture weights summing to 1.
            means: (np.array) K x 72 component means.
            covariances: (np.array) K x 72 x 72 symmetric positive definite.
        """
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.covariances = np.asarray(covariances, dtype=float)
        self.n_components = self.weights.size

        if self.means.shape != (self.n_components, N_POSE):
            raise PriorError('means must be {} x {}'.format(self.n_components, N_POSE))
        if self.covariances.shape != (self.n_components, N_POSE, N_POSE):
            raise PriorError('covariances must be {} x {} x {}'.format(
                self.n_components, N_POSE, N_POSE))
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise PriorError('mixture weights must be non-negative and sum to 1')

        self.cholesky_factors = np.zeros_like(self.covariances)
        for k, cov in enumerate(self.covariances):
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-10):
                raise PriorError('covariance {} is not symmetric'.format(k))
            try:
                self.cholesky_factors[k] = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise PriorError('covariance {} is not positive definite'.format(k))

        self.precisions = np.stack([np.linalg.inv(cov) for cov in self.covariances])
        self.log_dets = 2.0 * np.log(np.diagonal(self.cholesky_factors, axis1=1, axis2=2)).sum(axis=1)

        self._weights_t = torch.as_tensor(self.weights, dtype=torch.float64)
        self._means_t = torch.as_tensor(self.means, dtype=torch.float64)
        self._precisions_t = torch.as_tensor(self.precisions, dtype=torch.float64)
        self._log_dets_t = torch.as_tensor(self.log_dets, dtype=torch.float64)

    def nll_torch(self, theta):
        """
        Negative log mixture density (torch, differentiable in theta).
        """
        diff = theta.unsqueeze(0) - self._means_t
        quadratic = torch.einsum('ki,kij,kj->k', diff, self._precisions_t, diff)
        log_components = torch.log(self._weights_t) - 0.5 * quadratic - \
            0.5 * (N_POSE * LOG_2PI + self._log_dets_t)

        return -torch.logsumexp(log_components, dim=0)


def fit_gmm_prior(poses, n_components=8, seed=0, reg_covar=1e-3):
    """
    Fit the pose prior by expectation-maximization.

    Inputs:
        poses: (np.array) S x 72 pose samples.
        n_components: (int, optional) Mixture size.
        seed: (int, optional) Seed of the initialization.
        reg_covar: (float, optional) Added to the covariance diagonals.

    Returns:
        (GmmPosePrior) Fitted prior.
    """
    poses = np.asarray(poses, dtype=float)
    log.info('Fitting %d-component pose prior on %d samples', n_components, poses.shape[0])

    gmm = GaussianMixture(
        n_components=n_components,
        covariance_type='full',
        reg_covar=reg_covar,
        max_iter=200,
        random_state=seed)
    gmm.fit(poses)

    weights = gmm.weights_ / gmm.weights_.sum()
    covariances = 0.5 * (gmm.covariances_ + np.transpose(gmm.covariances_, (0, 2, 1)))

    return GmmPosePrior(weights, gmm.means_, covariances)


def save_gmm_prior(prior, filepath):
    """
    Save the prior as component weights, means and covariance Cholesky factors.
    """
    arrays = [
        ('weights', prior.weights),
        ('means', prior.means),
        ('cholesky_factors', prior.cholesky_factors)]

    log.info('Saving pose prior to %s', filepath)
    save_arrays(filepath, 'gmm_pose_prior', arrays, meta={
        'prior_version': PRIOR_VERSION,
        'n_components': int(prior.n_components)})


def load_gmm_prior(filepath):
    arrays, meta = load_arrays(filepath, kind='gmm_pose_prior')

    if meta.get('prior_version') != PRIOR_VERSION:
        raise PriorError('Unsupported prior version: {}'.format(meta.get('prior_version')))

    factors = arrays['cholesky_factors']
    covariances = np.matmul(factors, np.transpose(factors, (0, 2, 1)))

    return GmmPosePrior(arrays['weights'], arrays['means'], covariances)


def load_or_fit_gmm_prior(filepath, poses_fn, n_components=8, seed=0, reg_covar=1e-3):
    """
    Load the cached prior, or fit it on poses_fn() and cache it.
    """
    if file_exists(filepath):
        log.info('Loading cached pose prior from %s', filepath)
        return load_gmm_prior(filepath)

    prior = fit_gmm_prior(poses_fn(), n_components=n_components, seed=seed, reg_covar=reg_covar)
    save_gmm_prior(prior, filepath)

    return prior


def nearest_correspondences(vertices, cloud):
    """
    Nearest body vertex for every cloud point.

    Returns:
        (np.array) Vertex index per cloud point.
    """
    tree = KDTree(np.asarray(vertices, dtype=float))

    return tree.query(np.asarray(cloud, dtype=float), k=1, return_distance=False)[:, 0]


def _as_model(template):
    if isinstance(template, BodyTemplate):
        return BodyModel(template)

    return template


def _as_vector(params):
    if isinstance(params, BodyParams):
        return params.to_vector()

    return np.asarray(params, dtype=float)


def _value_and_grad(fn, vector, active):
    """
    Evaluate fn on a leaf tensor and return (value, gradient over 'active').
    """
    x = torch.tensor(vector, dtype=torch.float64, requires_grad=True)
    value = fn(x)

    if value.requires_grad:
        value.backward()
        grad = x.grad.numpy().copy()
    else:
        grad = np.zeros(vector.size)

    return float(value.detach()), grad[active_index(active)]


def _zero(active):
    return 0.0, np.zeros(active_index(active).size)


def _posed_numpy(model, params):
    with torch.no_grad():
        return model.pose(torch.as_tensor(_as_vector(params), dtype=torch.float64))


def _safe_norm(vectors):
    squared = (vectors * vectors).sum(dim=-1)
    positive = squared > 0
    safe = torch.where(positive, squared, torch.ones_like(squared))

    return torch.where(positive, torch.sqrt(safe), torch.zeros_like(squared))


def _depth_term(posed, cloud, correspondences, cap):
    index = torch.as_tensor(np.asarray(correspondences), dtype=torch.long)
    residual = cloud - posed.vertices[index]
    squared = (residual * residual).sum(dim=1)

    if cap is not None:
        squared = torch.clamp(squared, max=cap * cap)

    return squared.sum()


def _visible_keypoints(posed, confidences):
    z = posed.joints.detach().numpy()[KEYPOINT_JOINTS, 2]
    behind = z <= 0
    if np.any(behind):
        log.warning('Skipping %d keypoints behind the camera', int(behind.sum()))

    return ~behind & (np.asarray(confidences) != 0)


def _reprojection_term(posed, cam, keypoints, confidences):
    visible = _visible_keypoints(posed, confidences)
    if not np.any(visible):
        return torch.zeros((), dtype=torch.float64)

    joints = posed.joints[torch.as_tensor(KEYPOINT_JOINTS[visible], dtype=torch.long)]
    u = cam.fx * joints[:, 0] / joints[:, 2] + cam.cx
    v = cam.fy * joints[:, 1] / joints[:, 2] + cam.cy

    target = torch.as_tensor(np.asarray(keypoints, dtype=float)[visible])
    conf = torch.as_tensor(np.asarray(confidences, dtype=float)[visible])

    return (conf * ((target[:, 0] - u) ** 2 + (target[:, 1] - v) ** 2)).sum()


def _dense_contact_term(posed, foot_vertex_ids, labels, floor):
    contacted = np.asarray(foot_vertex_ids)[np.asarray(labels) == 1]
    if contacted.size == 0:
        return torch.zeros((), dtype=torch.float64)

    normal = torch.as_tensor(floor.normal)
    heights = torch.matmul(posed.vertices[torch.as_tensor(contacted, dtype=torch.long)], normal) - floor.offset

    return torch.abs(heights).sum()


def _shared_plane_index(planes, contact_t, contact_tm1):
    shared = (np.asarray(contact_t.labels) == 1) & (np.asarray(contact_tm1.labels) == 1)

    return planes.association_map[np.where(shared)[0]]


def _temporal_contact_term(model, posed, planes, plane_index, previous_points):
    if plane_index.size == 0:
        return torch.zeros((), dtype=torch.float64)

    points = model.skin_points(
        posed, planes.plane_points[plane_index], planes.skinning_weights[plane_index])

    return _safe_norm(points - previous_points).sum()


def _contact_joint_term(posed, ground_points):
    if not ground_points:
        return torch.zeros((), dtype=torch.float64)

    joint_ids = sorted(ground_points)
    anchors = torch.as_tensor(np.array([ground_points[j] for j in joint_ids], dtype=float))
    residual = posed.joints[joint_ids] - anchors

    return (residual * residual).sum()


def _foot_consistency_term(posed, joint_ids, previous_joints):
    joint_ids = sorted(joint_ids)
    if not joint_ids:
        return torch.zeros((), dtype=torch.float64)

    residual = posed.joints[joint_ids] - torch.as_tensor(previous_joints[joint_ids])

    return (residual * residual).sum()


def _theta(x):
    return x[block_slices()['theta']]


def e_depth(params, template, point_cloud, correspondences=None, cap=DEPTH_CAP,
            active=ALL_BLOCKS):
    """
    Sum over cloud points of the squared distance to the corresponding body
    vertex, clamped at cap^2. Correspondences default to the nearest vertex
    of the current body. An empty cloud gives zero with a warning.

    Inputs:
        params: (BodyParams or np.array) Parameters.
        template: (BodyTemplate or BodyModel) Body.
        point_cloud: (np.array) M x 3 points.
        correspondences: (np.array, optional) Vertex index per point.
        cap: (float, optional) Residual cap in meters. None disables it.
        active: (tuple, optional) Parameter blocks of the gradient.

    Returns:
        value: (float) Energy.
        gradient: (np.array) Gradient over the active blocks.
    """
    cloud = np.asarray(point_cloud, dtype=float).reshape(-1, 3)
    if cloud.shape[0] == 0:
        log.warning('Empty depth cloud, depth term is zero')
        return _zero(active)

    model = _as_model(template)
    if correspondences is None:
        correspondences = nearest_correspondences(_posed_numpy(model, params).vertices.numpy(), cloud)

    cloud_t = torch.as_tensor(cloud)

    return _value_and_grad(
        lambda x: _depth_term(model.pose(x), cloud_t, correspondences, cap),
        _as_vector(params), active)


def e_2d(params, template, cam, keypoints2d, confidences, active=ALL_BLOCKS):
    """
    Confidence-weighted squared reprojection error of the 17 keypoint joints,
    in squared pixels. Joints behind the camera are skipped.
    """
    model = _as_model(template)

    return _value_and_grad(
        lambda x: _reprojection_term(model.pose(x), cam, keypoints2d, confidences),
        _as_vector(params), active)


def e_gmm(theta, prior):
    """
    Negative log-likelihood of the pose under the mixture prior.

    Inputs:
        theta: (np.array) 72 pose values.
        prior: (GmmPosePrior) Prior.

    Returns:
        value: (float) Energy.
        gradient: (np.array) 72 values.
    """
    theta_t = torch.tensor(np.asarray(theta, dtype=float), requires_grad=True)
    value = prior.nll_torch(theta_t)
    value.backward()

    return float(value.detach()), theta_t.grad.numpy().copy()


def e_c_dense(params, template, contact, floor, active=ALL_BLOCKS):
    """
    Unsigned distance to the floor, summed over the contacted foot vertices.
    """
    model = _as_model(template)

    return _value_and_grad(
        lambda x: _dense_contact_term(model.pose(x), model.foot_vertex_ids, contact.labels, floor),
        _as_vector(params), active)


def e_c_temp(params_t, params_tm1, template, contact_t, contact_tm1, planes, active=ALL_BLOCKS):
    """
    Sum of L2 displacements of the foot-plane points whose foot vertex is
    in contact in both frames. The previous frame is held constant.
    """
    model = _as_model(template)
    plane_index = _shared_plane_index(planes, contact_t, contact_tm1)
    if plane_index.size == 0:
        return _zero(active)

    previous = model.skin_points(
        _posed_numpy(model, params_tm1),
        planes.plane_points[plane_index],
        planes.skinning_weights[plane_index]).detach()

    return _value_and_grad(
        lambda x: _temporal_contact_term(model, model.pose(x), planes, plane_index, previous),
        _as_vector(params_t), active)


def e_mimic(theta, theta_init):
    """
    Squared L2 distance to the initial pose.

    Returns:
        value: (float) Energy.
        gradient: (np.array) 2 (theta - theta_init).
    """
    diff = np.asarray(theta, dtype=float) - np.asarray(theta_init, dtype=float)

    return float(diff.dot(diff)), 2.0 * diff


def e_contact_joint(params, template, ground_points, active=ALL_BLOCKS):
    """
    Squared distances between contacted model foot joints and their ground anchors.

    Inputs:
        ground_points: (dict) Model joint index to 3D anchor, only for joints
            in contact this frame.
    """
    model = _as_model(template)

    return _value_and_grad(
        lambda x: _contact_joint_term(model.pose(x), ground_points),
        _as_vector(params), active)


def e_foot_consistency(params_t, params_tm1, template, contacted_joint_ids, active=ALL_BLOCKS):
    """
    Squared displacement of the contacted foot joints since the previous
    frame, which is held constant.
    """
    model = _as_model(template)
    previous = _posed_numpy(model, params_tm1).joints

    return _value_and_grad(
        lambda x: _foot_consistency_term(model.pose(x), contacted_joint_ids, previous),
        _as_vector(params_t), active)


RgbdpInputs = namedtuple('RgbdpInputs', [
    'model', 'cloud', 'correspondences', 'cam', 'keypoints', 'confidences', 'contact',
    'floor', 'prior', 'prev_params', 'prev_contact', 'planes', 'depth_cap'])
RgbdpInputs.__new__.__defaults__ = (None,) * 12 + (DEPTH_CAP,)

VpInputs = namedtuple('VpInputs', [
    'model', 'cam', 'keypoints', 'confidences', 'theta_init', 'ground_points',
    'prev_params', 'consistency_joint_ids'])
VpInputs.__new__.__defaults__ = (None,) * 7


def _rgbdp_terms(x, inputs, previous):
    """
    Unweighted RGBD-P terms as torch scalars. Terms without inputs are zero.
    """
    model = inputs.model
    posed = model.pose(x)
    zero = torch.zeros((), dtype=torch.float64)
    terms = {name: zero for name, _ in RGBDP_TERMS}

    if inputs.cloud is not None and len(inputs.cloud):
        terms['depth'] = _depth_term(
            posed, torch.as_tensor(inputs.cloud), inputs.correspondences, inputs.depth_cap)
    if inputs.contact is not None and inputs.floor is not None:
        terms['C_dense'] = _dense_contact_term(
            posed, model.foot_vertex_ids, inputs.contact.labels, inputs.floor)
    if inputs.keypoints is not None:
        terms['2d'] = _reprojection_term(posed, inputs.cam, inputs.keypoints, inputs.confidences)
    if previous is not None:
        plane_index, previous_points = previous
        terms['C_temp'] = _temporal_contact_term(
            model, posed, inputs.planes, plane_index, previous_points)
    if inputs.prior is not None:
        terms['GMM'] = inputs.prior.nll_torch(_theta(x))

    return terms


def _rgbdp_previous(inputs):
    if inputs.prev_params is None or inputs.prev_contact is None or \
            inputs.contact is None or inputs.planes is None:
        return None

    plane_index = _shared_plane_index(inputs.planes, inputs.contact, inputs.prev_contact)
    if plane_index.size == 0:
        return None

    previous_points = inputs.model.skin_points(
        _posed_numpy(inputs.model, inputs.prev_params),
        inputs.planes.plane_points[plane_index],
        inputs.planes.skinning_weights[plane_index]).detach()

    return plane_index, previous_points


def _check_rgbdp_inputs(inputs):
    if inputs.cloud is not None and len(inputs.cloud) and inputs.correspondences is None:
        raise EnergyError('depth term needs correspondences, see nearest_correspondences()')


def total_rgbdp(params, inputs, weights, active=ALL_BLOCKS):
    """
    lambda_depth E_depth + lambda_C_dense E_C_dense + lambda_2d E_2d
    + lambda_C_temp E_C_temp + lambda_GMM E_GMM.

    Inputs:
        params: (BodyParams or np.array) Parameters.
        inputs: (RgbdpInputs) Observations and fixed quantities.
        weights: (EnergyWeights) Term weights.
        active: (tuple, optional) Parameter blocks of the gradient.

    Returns:
        value: (float) Energy.
        gradient: (np.array) Gradient over the active blocks.
    """
    _check_rgbdp_inputs(inputs)
    previous = _rgbdp_previous(inputs)

    def fn(x):
        terms = _rgbdp_terms(x, inputs, previous)
        return sum(getattr(weights, key) * terms[name] for name, key in RGBDP_TERMS)

    return _value_and_grad(fn, _as_vector(params), active)


def rgbdp_breakdown(params, inputs):
    """
    Returns:
        (dict) Unweighted RGBD-P term values by name.
    """
    _check_rgbdp_inputs(inputs)
    previous = _rgbdp_previous(inputs)

    with torch.no_grad():
        terms = _rgbdp_terms(
            torch.as_tensor(_as_vector(params), dtype=torch.float64), inputs, previous)

    return {name: float(value) for name, value in terms.items()}


def _vp_terms(x, inputs, previous_joints):
    posed = inputs.model.pose(x)
    zero = torch.zeros((), dtype=torch.float64)
    terms = {name: zero for name, _ in VP_TERMS}

    if inputs.keypoints is not None:
        terms['2d'] = _reprojection_term(posed, inputs.cam, inputs.keypoints, inputs.confidences)
    if inputs.theta_init is not None:
        diff = _theta(x) - torch.as_tensor(np.asarray(inputs.theta_init, dtype=float))
        terms['p'] = (diff * diff).sum()
    if inputs.ground_points:
        terms['3d'] = _contact_joint_term(posed, inputs.ground_points)
    if previous_joints is not None:
        terms['t'] = _foot_consistency_term(posed, inputs.consistency_joint_ids, previous_joints)

    return terms


def _vp_previous(inputs):
    if inputs.prev_params is None or not inputs.consistency_joint_ids:
        return None

    return _posed_numpy(inputs.model, inputs.prev_params).joints


def total_vp(params, inputs, weights, active=ALL_BLOCKS):
    """
    E_2d + lambda_p E_p + lambda_3d E_3d + lambda_t E_t.

    E_2d enters with lambda_2d so that pixel units are balanced the same way
    in both objectives.
    """
    previous = _vp_previous(inputs)

    def fn(x):
        terms = _vp_terms(x, inputs, previous)
        total = weights.lambda_2d * terms['2d']
        for name, key in VP_TERMS[1:]:
            total = total + getattr(weights, key) * terms[name]
        return total

    return _value_and_grad(fn, _as_vector(params), active)


def vp_breakdown(params, inputs):
    previous = _vp_previous(inputs)

    with torch.no_grad():
        terms = _vp_terms(
            torch.as_tensor(_as_vector(params), dtype=torch.float64), inputs, previous)

    return {name: float(value) for name, value in terms.items()}
