"""
Description:
    Generic differentiable parametric body. Two template meshes (adult and
    child) are blended by alpha, offset by a linear shape basis, posed by
    forward kinematics over a 24-joint skeleton and linear blend skinning,
    then moved by a global rotation and translation. Also holds the pinhole
    camera, the 192-vertex foot registry and the foot planes.

    Coordinates are meters with y up. The template faces -z and the left
    side of the body is at -x. Template soles lie on y = 0.

To-do:
"""
# standard imports
from collections import namedtuple, OrderedDict
import logging as log
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../'))

# third party imports
import numpy as np
import torch

# local imports
from utils.utilities import file_exists, save_arrays, load_arrays

TEMPLATE_VERSION = 1
N_JOINTS = 24
N_POSE = 72
N_SHAPE = 10
N_FOOT_VERTICES = 192
N_FOOT_VERTICES_PER_FOOT = 96

JOINT_NAMES = [
    'pelvis', 'l_hip', 'r_hip', 'spine1', 'l_knee', 'r_knee', 'spine2',
    'l_ankle', 'r_ankle', 'spine3', 'l_foot', 'r_foot', 'neck', 'l_collar',
    'r_collar', 'head', 'l_shoulder', 'r_shoulder', 'l_elbow', 'r_elbow',
    'l_wrist', 'r_wrist', 'l_hand', 'r_hand']

PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])

REST_JOINTS = np.array([
    [0.0, 0.95, 0.0],
    [-0.09, 0.87, 0.0], [0.09, 0.87, 0.0],
    [0.0, 1.05, 0.0],
    [-0.09, 0.50, 0.0], [0.09, 0.50, 0.0],
    [0.0, 1.18, 0.0],
    [-0.09, 0.09, 0.0], [0.09, 0.09, 0.0],
    [0.0, 1.30, 0.0],
    [-0.09, 0.03, -0.13], [0.09, 0.03, -0.13],
    [0.0, 1.50, 0.0],
    [-0.07, 1.43, 0.0], [0.07, 1.43, 0.0],
    [0.0, 1.62, 0.0],
    [-0.18, 1.43, 0.0], [0.18, 1.43, 0.0],
    [-0.45, 1.43, 0.0], [0.45, 1.43, 0.0],
    [-0.70, 1.43, 0.0], [0.70, 1.43, 0.0],
    [-0.78, 1.43, 0.0], [0.78, 1.43, 0.0]])

# capsule radius of the bone ending at each joint
BONE_RADII = np.array([
    0.0, 0.08, 0.08, 0.13, 0.07, 0.07, 0.14, 0.05, 0.05, 0.14, 0.025, 0.025,
    0.07, 0.06, 0.06, 0.06, 0.06, 0.06, 0.045, 0.045, 0.035, 0.035, 0.03, 0.03])

# (leaf joint, tip position, radius)
TIP_SEGMENTS = [
    (15, (0.0, 1.75, 0.0), 0.09),
    (22, (-0.86, 1.43, 0.0), 0.025),
    (23, (0.86, 1.43, 0.0), 0.025)]

N_RINGS = 6
N_SIDES = 8

# sole grid per foot, heel to toe along -z
SOLE_LENGTH_SAMPLES = 12
SOLE_WIDTH_SAMPLES = 8
SOLE_HEEL_Z = 0.05
SOLE_TOE_Z = -0.20
SOLE_HALF_WIDTH = 0.045
SOLE_SPLIT_Z = -0.08

# 17 detector keypoints, as model joint indices
KEYPOINT_NAMES = [
    'head', 'neck', 'l_shoulder', 'r_shoulder', 'l_elbow', 'r_elbow', 'l_wrist',
    'r_wrist', 'l_hip', 'r_hip', 'l_knee', 'r_knee', 'l_ankle', 'r_ankle',
    'l_toe', 'r_toe', 'pelvis']
KEYPOINT_JOINTS = np.array([15, 12, 16, 17, 18, 19, 20, 21, 1, 2, 4, 5, 7, 8, 10, 11, 0])

# ankle and toe per side
FOOT_JOINTS = np.array([7, 10, 8, 11])
FOOT_KEYPOINTS = np.array([12, 14, 13, 15])

# flat parameter vector layout
PARAM_BLOCKS = OrderedDict([
    ('theta', N_POSE),
    ('beta', N_SHAPE),
    ('R', 3),
    ('T', 3),
    ('alpha', 1)])
N_PARAMS = sum(PARAM_BLOCKS.values())
ALL_BLOCKS = tuple(PARAM_BLOCKS.keys())

A_POSE_SHOULDER_ANGLE = 0.8
SHAPE_RMS = 0.015


class BodyModelError(ValueError):
    pass


class TopologyError(BodyModelError):
    pass


def block_slices():
    """
    Returns:
        (OrderedDict) Block name to slice of the flat parameter vector.
    """
    slices = OrderedDict()
    start = 0

    for name, size in PARAM_BLOCKS.items():
        slices[name] = slice(start, start + size)
        start += size

    return slices


def active_index(blocks):
    """
    Indices of the flat parameter vector covered by 'blocks',
    in canonical block order.

    Inputs:
        blocks: (iterable) Block names.

    Returns:
        (np.array) Integer indices.
    """
    unknown = set(blocks) - set(PARAM_BLOCKS)
    if unknown:
        raise BodyModelError('Unknown parameter blocks: {}'.format(sorted(unknown)))

    slices = block_slices()
    index = [np.arange(slices[name].start, slices[name].stop)
             for name in ALL_BLOCKS if name in blocks]

    return np.concatenate(index) if index else np.zeros(0, dtype=int)


def a_pose_theta():
    """
    Returns:
        (np.array) 72 pose values with the arms lowered into an A-pose.
    """
    theta = np.zeros(N_POSE)
    theta[16 * 3 + 2] = A_POSE_SHOULDER_ANGLE
    theta[17 * 3 + 2] = -A_POSE_SHOULDER_ANGLE

    return theta


class Camera(namedtuple('Camera', ['fx', 'fy', 'cx', 'cy'])):
    """
    Pinhole intrinsics in pixels.
    """
    __slots__ = ()

    def __new__(cls, fx=500.0, fy=500.0, cx=250.0, cy=250.0):
        values = [float(v) for v in (fx, fy, cx, cy)]

        if not np.all(np.isfinite(values)):
            raise BodyModelError('Camera intrinsics must be finite')
        if values[0] <= 0 or values[1] <= 0:
            raise BodyModelError('Focal lengths must be positive, got fx={}, fy={}'.format(
                values[0], values[1]))

        return super(Camera, cls).__new__(cls, *values)


class BodyParams:
    """
    Per-frame body state: pose, shape, global rotation and translation,
    and the adult/child blend.
    """
    def __init__(self, theta=None, beta=None, R=None, T=None, alpha=1.0):
        self.theta = np.zeros(N_POSE) if theta is None else np.array(theta, dtype=float)
        self.beta = np.zeros(N_SHAPE) if beta is None else np.array(beta, dtype=float)
        self.R = np.zeros(3) if R is None else np.array(R, dtype=float)
        self.T = np.zeros(3) if T is None else np.array(T, dtype=float)
        self.alpha = float(alpha)

    def validate(self):
        """
        Raises:
            BodyModelError: Wrong lengths, non-finite values or alpha out of [0, 1].
        """
        if self.theta.shape != (N_POSE,):
            raise BodyModelError('theta must hold {} values, got {}'.format(
                N_POSE, self.theta.size))
        if self.beta.shape != (N_SHAPE,):
            raise BodyModelError('beta must hold {} values, got {}'.format(
                N_SHAPE, self.beta.size))
        if self.R.shape != (3,) or self.T.shape != (3,):
            raise BodyModelError('R and T must hold 3 values each')
        if not np.all(np.isfinite(self.to_vector())):
            raise BodyModelError('Body parameters must be finite')
        if not 0.0 <= self.alpha <= 1.0:
            raise BodyModelError('alpha must lie in [0, 1], got {}'.format(self.alpha))

        return self

    def to_vector(self):
        return np.concatenate([self.theta, self.beta, self.R, self.T, [self.alpha]])

    @classmethod
    def from_vector(cls, vector):
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (N_PARAMS,):
            raise BodyModelError('Parameter vector must hold {} values, got {}'.format(
                N_PARAMS, vector.size))

        s = block_slices()
        return cls(
            theta=vector[s['theta']], beta=vector[s['beta']],
            R=vector[s['R']], T=vector[s['T']], alpha=vector[s['alpha']][0])

    def copy(self):
        return BodyParams.from_vector(self.to_vector())

    def __repr__(self):
        return 'BodyParams(alpha={:.3f}, T={}, |theta|={:.3f}, |beta|={:.3f})'.format(
            self.alpha, np.round(self.T, 4).tolist(),
            np.linalg.norm(self.theta), np.linalg.norm(self.beta))


class BodyTemplate:
    """
    Mesh template: rest vertices, faces, joint regressor, skinning weights,
    foot vertex registry, skeleton parents and shape basis.
    """
    def __init__(
            self,
            vertices,
            faces,
            joint_regressor,
            skinning_weights,
            foot_vertex_ids,
            parents=PARENTS,
            shape_dirs=None):
        """
        Class initializer.

        Inputs:
            vertices: (np.array) N x 3 rest positions in meters.
            faces: (np.array) F x 3 triangle vertex indices.
            joint_regressor: (np.array) K x N linear map from vertices to joints.
            skinning_weights: (np.array) N x K, rows sum to 1.
            foot_vertex_ids: (np.array) 192 foot vertex indices, left foot first.
            parents: (np.array, optional) K parent indices, -1 for the root.
            shape_dirs: (np.array, optional) N x 3 x 10 shape basis.
        """
        self.vertices = np.array(vertices, dtype=float)
        self.faces = np.array(faces, dtype=int)
        self.joint_regressor = np.array(joint_regressor, dtype=float)
        self.skinning_weights = np.array(skinning_weights, dtype=float)
        self.foot_vertex_ids = np.array(foot_vertex_ids, dtype=int)
        self.parents = np.array(parents, dtype=int)

        if shape_dirs is None:
            shape_dirs = np.zeros((self.vertices.shape[0], 3, N_SHAPE))
        self.shape_dirs = np.array(shape_dirs, dtype=float)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    def validate(self):
        n = self.n_vertices
        k = self.parents.size

        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise TopologyError('vertices must be N x 3')
        if self.joint_regressor.shape != (k, n):
            raise TopologyError('joint regressor must be {} x {}'.format(k, n))
        if self.skinning_weights.shape != (n, k):
            raise TopologyError('skinning weights must be {} x {}'.format(n, k))
        if not np.allclose(self.skinning_weights.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise TopologyError('skinning weight rows must sum to 1')
        if self.shape_dirs.shape != (n, 3, N_SHAPE):
            raise TopologyError('shape basis must be {} x 3 x {}'.format(n, N_SHAPE))
        if self.foot_vertex_ids.shape != (N_FOOT_VERTICES,):
            raise TopologyError('expected exactly {} foot vertex ids, got {}'.format(
                N_FOOT_VERTICES, self.foot_vertex_ids.size))
        if np.unique(self.foot_vertex_ids).size != N_FOOT_VERTICES:
            raise TopologyError('foot vertex ids must be unique')
        if self.foot_vertex_ids.min() < 0 or self.foot_vertex_ids.max() >= n:
            raise TopologyError('foot vertex ids out of range')
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise TopologyError('face indices out of range')

        return self

    def copy(self, vertices=None):
        return BodyTemplate(
            self.vertices if vertices is None else vertices,
            self.faces, self.joint_regressor, self.skinning_weights,
            self.foot_vertex_ids, self.parents, self.shape_dirs)


def check_topology(adult, child):
    """
    Raises:
        TopologyError: If the two templates do not share topology.
    """
    if adult.n_vertices != child.n_vertices:
        raise TopologyError('vertex counts differ: {} vs {}'.format(
            adult.n_vertices, child.n_vertices))
    if adult.faces.shape != child.faces.shape or not np.array_equal(adult.faces, child.faces):
        raise TopologyError('faces differ')
    if adult.joint_regressor.shape != child.joint_regressor.shape:
        raise TopologyError('joint regressor shapes differ')
    if not np.array_equal(adult.foot_vertex_ids, child.foot_vertex_ids):
        raise TopologyError('foot vertex registries differ')
    if not np.array_equal(adult.parents, child.parents):
        raise TopologyError('skeletons differ')


def blend_template(adult, child, alpha):
    """
    Blend two topology-compatible templates: alpha * adult + (1 - alpha) * child.
    Everything but the vertices is taken from the adult template.

    Inputs:
        adult: (BodyTemplate) Adult template.
        child: (BodyTemplate) Child template.
        alpha: (float) Blend in [0, 1].

    Returns:
        (BodyTemplate) Blended template.
    """
    check_topology(adult, child)

    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise BodyModelError('alpha must lie in [0, 1], got {}'.format(alpha))

    if alpha == 1.0:
        vertices = adult.vertices.copy()
    elif alpha == 0.0:
        vertices = child.vertices.copy()
    else:
        vertices = alpha * adult.vertices + (1.0 - alpha) * child.vertices

    return adult.copy(vertices=vertices)


def _skew(vectors):
    zeros = torch.zeros_like(vectors[..., 0])
    x, y, z = vectors[..., 0], vectors[..., 1], vectors[..., 2]

    return torch.stack([
        torch.stack([zeros, -z, y], dim=-1),
        torch.stack([z, zeros, -x], dim=-1),
        torch.stack([-y, x, zeros], dim=-1)], dim=-2)


def rodrigues(rotvecs):
    """
    Axis-angle to rotation matrices, differentiable at zero.

    Inputs:
        rotvecs: (torch.Tensor) ... x 3 axis-angle vectors.

    Returns:
        (torch.Tensor) ... x 3 x 3 rotation matrices.
    """
    theta2 = (rotvecs * rotvecs).sum(dim=-1)[..., None, None]
    small = theta2 < 1e-8
    safe2 = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(safe2)

    # Taylor expansions below the threshold
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / safe2)

    k = _skew(rotvecs)
    eye = torch.eye(3, dtype=rotvecs.dtype).expand(k.shape)

    return eye + a * k + b * torch.matmul(k, k)


Posed = namedtuple('Posed', ['vertices', 'joints', 'rotations', 'offsets', 'rest_vertices'])


class BodyModel:
    """
    Differentiable forward pass over a template pair. All tensors are float64.
    Without a child template alpha has no effect.
    """
    def __init__(self, adult, child=None):
        """
        Class initializer.

        Inputs:
            adult: (BodyTemplate) Adult template. Supplies topology,
                regressor, skinning and the shape basis.
            child: (BodyTemplate, optional) Child template.
        """
        adult.validate()
        if child is not None:
            check_topology(adult, child)

        self.adult = adult
        self.child = child
        self.parents = adult.parents
        self.foot_vertex_ids = adult.foot_vertex_ids
        self.n_vertices = adult.n_vertices

        dtype = torch.float64
        self._v_adult = torch.as_tensor(adult.vertices, dtype=dtype)
        self._v_child = torch.as_tensor(
            (child if child is not None else adult).vertices, dtype=dtype)
        self._shape_dirs = torch.as_tensor(adult.shape_dirs, dtype=dtype)
        self._regressor = torch.as_tensor(adult.joint_regressor, dtype=dtype)
        self._weights = torch.as_tensor(adult.skinning_weights, dtype=dtype)

    def rest_vertices(self, beta, alpha):
        """
        Blended and shaped vertices before posing (torch).
        """
        blended = alpha * self._v_adult + (1.0 - alpha) * self._v_child

        return blended + torch.einsum('nck,k->nc', self._shape_dirs, beta)

    def pose(self, x):
        """
        Run the forward pass on a flat parameter vector.

        Inputs:
            x: (torch.Tensor) Flat parameter vector (see PARAM_BLOCKS).

        Returns:
            (Posed) Posed vertices and joints, plus per-joint world
                rotations and offsets (rest point p goes to R_k p + b_k).
        """
        s = block_slices()
        theta = x[s['theta']].reshape(N_JOINTS, 3)
        beta = x[s['beta']]
        global_rot = rodrigues(x[s['R']])
        translation = x[s['T']]
        alpha = x[s['alpha']][0]

        v_rest = self.rest_vertices(beta, alpha)
        j_rest = torch.matmul(self._regressor, v_rest)
        local = rodrigues(theta)

        world_rot = [local[0]]
        world_t = [j_rest[0]]
        for j in range(1, N_JOINTS):
            p = self.parents[j]
            world_rot.append(torch.matmul(world_rot[p], local[j]))
            world_t.append(torch.matmul(world_rot[p], j_rest[j] - j_rest[p]) + world_t[p])

        rotations = torch.stack(world_rot)
        joints = torch.stack(world_t)

        # global rigid motion about the rest root joint
        root = j_rest[0]
        rotations = torch.matmul(global_rot, rotations)
        joints = torch.matmul(joints - root, global_rot.T) + root + translation
        offsets = joints - torch.einsum('kij,kj->ki', rotations, j_rest)

        vertices = self._skin(rotations, offsets, v_rest, self._weights)

        return Posed(vertices, joints, rotations, offsets, v_rest)

    @staticmethod
    def _skin(rotations, offsets, points, weights):
        blended = torch.matmul(weights, rotations.reshape(N_JOINTS, 9)).reshape(-1, 3, 3)

        return torch.matmul(blended, points.unsqueeze(-1)).squeeze(-1) + \
            torch.matmul(weights, offsets)

    def skin_points(self, posed, points, weights):
        """
        Pose extra rest-space points with the given skinning weights.

        Inputs:
            posed: (Posed) Output of pose().
            points: (np.array or torch.Tensor) M x 3 rest points.
            weights: (np.array or torch.Tensor) M x 24 skinning weights.

        Returns:
            (torch.Tensor) M x 3 posed points.
        """
        points = torch.as_tensor(points, dtype=torch.float64)
        weights = torch.as_tensor(weights, dtype=torch.float64)

        return self._skin(posed.rotations, posed.offsets, points, weights)

    def forward(self, params):
        """
        Evaluate the model without gradients.

        Inputs:
            params: (BodyParams or np.array) Parameters or flat vector.

        Returns:
            vertices: (np.array) N x 3 posed vertices.
            joints: (np.array) 24 x 3 posed joints.
        """
        if isinstance(params, BodyParams):
            params.validate()
            vector = params.to_vector()
        else:
            vector = np.asarray(params, dtype=float)
            if not np.all(np.isfinite(vector)):
                raise BodyModelError('Body parameters must be finite')

        with torch.no_grad():
            posed = self.pose(torch.as_tensor(vector, dtype=torch.float64))

        return posed.vertices.numpy().copy(), posed.joints.numpy().copy()

    def shaped_template(self, alpha, beta):
        """
        Returns:
            (BodyTemplate) Rest template of a subject with the given blend and shape.
        """
        with torch.no_grad():
            vertices = self.rest_vertices(
                torch.as_tensor(np.asarray(beta, dtype=float)), float(alpha))

        return self.adult.copy(vertices=vertices.numpy().copy())


def forward(template, params):
    """
    Pose a single template.

    Inputs:
        template: (BodyTemplate) Template to pose.
        params: (BodyParams) Parameters. alpha has no effect here.

    Returns:
        vertices: (np.array) N x 3 posed vertices.
        joints: (np.array) 24 x 3 posed joints.
    """
    return BodyModel(template).forward(params)


def project(points, cam):
    """
    Pinhole projection u = fx * x / z + cx, v = fy * y / z + cy.

    Inputs:
        points: (np.array) M x 3 camera-frame points.
        cam: (Camera) Intrinsics.

    Returns:
        uv: (np.array) M x 2 pixels, NaN where projection is undefined.
        valid: (np.array) M booleans, False where z <= 0.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    z = points[:, 2]
    valid = z > 0

    uv = np.full((points.shape[0], 2), np.nan)
    uv[valid, 0] = cam.fx * points[valid, 0] / z[valid] + cam.cx
    uv[valid, 1] = cam.fy * points[valid, 1] / z[valid] + cam.cy

    return uv, valid


def unproject(uv, depth, cam):
    """
    Inverse of project() at known depth.

    Inputs:
        uv: (np.array) M x 2 pixels.
        depth: (np.array) M positive depths.
        cam: (Camera) Intrinsics.

    Returns:
        (np.array) M x 3 camera-frame points.
    """
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    depth = np.asarray(depth, dtype=float).reshape(-1)

    x = (uv[:, 0] - cam.cx) * depth / cam.fx
    y = (uv[:, 1] - cam.cy) * depth / cam.fy

    return np.stack([x, y, depth], axis=1)


class FootPlanes:
    """
    Ground-projected foot points. Plane point k belongs to foot vertex
    foot_vertex_ids[k]; association_map[k] gives its plane index.
    """
    SEGMENTS = ('left_anterior', 'left_posterior', 'right_anterior', 'right_posterior')

    def __init__(self, plane_points, association_map, segments, skinning_weights):
        self.plane_points = plane_points
        self.association_map = association_map
        self.segments = segments
        self.skinning_weights = skinning_weights

    def points(self, segment):
        return self.plane_points[self.segments[segment]]


def build_foot_planes(template):
    """
    Project the 192 foot vertices of a rest template vertically onto the
    ground (y = 0) and split each foot into anterior and posterior planes
    at the midpoint of its bounding box along the foot's long axis.

    Inputs:
        template: (BodyTemplate) Rest-pose template.

    Returns:
        (FootPlanes) Plane points in foot registry order.
    """
    template.validate()

    foot = template.vertices[template.foot_vertex_ids]
    plane_points = foot.copy()
    plane_points[:, 1] = 0.0

    segments = {}
    halves = {
        'left': np.arange(N_FOOT_VERTICES_PER_FOOT),
        'right': np.arange(N_FOOT_VERTICES_PER_FOOT, N_FOOT_VERTICES)}

    for side, index in halves.items():
        # long axis is the xz direction of largest spread
        xz = plane_points[index][:, [0, 2]]
        centered = xz - xz.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        axis = vt[0]

        # orient the axis from heel to toe (toes point to -z)
        if axis[1] > 0:
            axis = -axis

        coordinate = xz.dot(axis)
        midpoint = 0.5 * (coordinate.min() + coordinate.max())

        segments[side + '_anterior'] = index[coordinate >= midpoint]
        segments[side + '_posterior'] = index[coordinate < midpoint]

    association_map = np.arange(N_FOOT_VERTICES)
    skinning_weights = template.skinning_weights[template.foot_vertex_ids]

    log.debug('Built foot planes: %s', {k: v.size for k, v in segments.items()})

    return FootPlanes(plane_points, association_map, segments, skinning_weights)


def _segment_frame(direction):
    direction = direction / np.linalg.norm(direction)
    helper = np.array([0.0, 1.0, 0.0])
    if abs(direction.dot(helper)) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])

    e1 = np.cross(direction, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(direction, e1)

    return e1, e2


def _build_adult_geometry():
    """
    Capsule rings along every bone plus a sole grid under each foot.

    Returns:
        vertices, faces, skinning_weights, joint_regressor, foot_vertex_ids,
        segment_ids (per-vertex segment index), radial (per-vertex offset
        from the segment axis, used by the shape basis).
    """
    vertices = []
    weights = []
    radial = []
    segment_ids = []
    faces = []
    ring_start = {}

    segments = [(PARENTS[j], REST_JOINTS[PARENTS[j]], REST_JOINTS[j], BONE_RADII[j], j)
                for j in range(1, N_JOINTS)]
    segments += [(leaf, REST_JOINTS[leaf], np.array(tip), radius, None)
                 for leaf, tip, radius in TIP_SEGMENTS]

    angles = 2.0 * np.pi * np.arange(N_SIDES) / N_SIDES
    for seg_index, (owner, start, end, radius, child) in enumerate(segments):
        e1, e2 = _segment_frame(end - start)
        first_vertex = len(vertices)

        for ring, t in enumerate(np.linspace(0.0, 1.0, N_RINGS)):
            center = start + t * (end - start)
            if child is not None and ring == N_RINGS - 1:
                ring_start[child] = len(vertices)
            if child == 3 and ring == 0:
                ring_start[0] = len(vertices)

            for angle in angles:
                offset = radius * (np.cos(angle) * e1 + np.sin(angle) * e2)
                vertices.append(center + offset)
                radial.append(offset)
                segment_ids.append(seg_index)

                w = np.zeros(N_JOINTS)
                grand = PARENTS[owner]
                if ring == 0 and grand >= 0:
                    w[owner] = 0.5
                    w[grand] = 0.5
                else:
                    w[owner] = 1.0
                weights.append(w)

        for ring in range(N_RINGS - 1):
            for side in range(N_SIDES):
                a = first_vertex + ring * N_SIDES + side
                b = first_vertex + ring * N_SIDES + (side + 1) % N_SIDES
                faces.append([a, b, a + N_SIDES])
                faces.append([b, b + N_SIDES, a + N_SIDES])

    foot_ids = []
    n_segments = len(segments)
    for side_index, (ankle, toe, x0) in enumerate([(7, 10, -0.09), (8, 11, 0.09)]):
        first_vertex = len(vertices)
        zs = np.linspace(SOLE_HEEL_Z, SOLE_TOE_Z, SOLE_LENGTH_SAMPLES)
        xs = np.linspace(x0 - SOLE_HALF_WIDTH, x0 + SOLE_HALF_WIDTH, SOLE_WIDTH_SAMPLES)
        center = np.array([x0, 0.0, 0.5 * (SOLE_HEEL_Z + SOLE_TOE_Z)])

        for z in zs:
            for x in xs:
                point = np.array([x, 0.0, z])
                foot_ids.append(len(vertices))
                vertices.append(point)
                radial.append(point - center)
                segment_ids.append(n_segments + side_index)

                w = np.zeros(N_JOINTS)
                w[ankle if z > SOLE_SPLIT_Z else toe] = 1.0
                weights.append(w)

        for i in range(SOLE_LENGTH_SAMPLES - 1):
            for k in range(SOLE_WIDTH_SAMPLES - 1):
                a = first_vertex + i * SOLE_WIDTH_SAMPLES + k
                b = a + SOLE_WIDTH_SAMPLES
                faces.append([a, a + 1, b])
                faces.append([a + 1, b + 1, b])

    vertices = np.array(vertices)
    regressor = np.zeros((N_JOINTS, vertices.shape[0]))
    for joint, start in ring_start.items():
        regressor[joint, start:start + N_SIDES] = 1.0 / N_SIDES

    return (vertices, np.array(faces), np.array(weights), regressor,
            np.array(foot_ids), np.array(segment_ids), np.array(radial))


def _child_vertices(adult_vertices):
    scale = np.array([0.7, 0.62, 0.7])
    child = adult_vertices * scale

    # larger head relative to the body
    neck = REST_JOINTS[12] * scale
    head = adult_vertices[:, 1] > REST_JOINTS[12][1] + 1e-9
    child[head] = neck + 1.3 * (child[head] - neck)

    return child


def _shape_basis(vertices, blend_direction, segment_ids, radial, foot_ids, seed):
    """
    Seeded shape basis: smooth affine fields plus per-segment girth changes,
    orthogonalized against the adult/child blend direction and each other.
    Sole vertices never move vertically.
    """
    rng = np.random.RandomState(seed)
    n_segments = segment_ids.max() + 1
    basis = [blend_direction.ravel() / np.linalg.norm(blend_direction)]
    directions = []

    while len(directions) < N_SHAPE:
        a = rng.normal(scale=0.05, size=(3, 3))
        b = rng.normal(scale=0.02, size=3)
        girth = rng.normal(scale=0.1, size=n_segments)

        field = 0.5 * vertices[:, 1:2] * (vertices.dot(a.T) + b)
        field += girth[segment_ids][:, None] * radial
        field[foot_ids, 1] = 0.0

        vector = field.ravel()
        for other in basis:
            vector = vector - vector.dot(other) * other

        norm = np.linalg.norm(vector)
        if norm < 1e-8:
            continue

        vector /= norm
        basis.append(vector)
        directions.append(vector)

    scale = SHAPE_RMS * np.sqrt(vertices.shape[0])
    shape_dirs = np.stack(directions, axis=1) * scale

    return shape_dirs.reshape(vertices.shape[0], 3, N_SHAPE)


def build_generic_templates(seed=0):
    """
    Build the adult and child templates procedurally.

    Inputs:
        seed: (int, optional) Seed of the shape basis.

    Returns:
        adult: (BodyTemplate) Adult template.
        child: (BodyTemplate) Child template with the same topology.
    """
    vertices, faces, weights, regressor, foot_ids, segment_ids, radial = \
        _build_adult_geometry()
    child_vertices = _child_vertices(vertices)

    shape_dirs = _shape_basis(
        vertices, vertices - child_vertices, segment_ids, radial, foot_ids, seed)

    adult = BodyTemplate(vertices, faces, regressor, weights, foot_ids, PARENTS, shape_dirs)
    child = BodyTemplate(child_vertices, faces, regressor, weights, foot_ids, PARENTS, shape_dirs)

    log.info('Built generic templates: %d vertices, %d faces, %d joints',
             adult.n_vertices, len(faces), N_JOINTS)

    return adult.validate(), child.validate()


def save_template(template, filepath):
    """
    Save a template to the versioned binary container.

    Inputs:
        template: (BodyTemplate) Template to save.
        filepath: (str) File to write.
    """
    template.validate()

    arrays = [
        ('vertices', template.vertices),
        ('faces', template.faces),
        ('joint_regressor', template.joint_regressor),
        ('skinning_weights', template.skinning_weights),
        ('foot_vertex_ids', template.foot_vertex_ids),
        ('parents', template.parents),
        ('shape_dirs', template.shape_dirs)]

    log.info('Saving template to %s', filepath)
    save_arrays(filepath, 'body_template', arrays, meta={'template_version': TEMPLATE_VERSION})


def load_template(filepath):
    """
    Inputs:
        filepath: (str) File written by save_template().

    Returns:
        (BodyTemplate) Validated template.
    """
    arrays, meta = load_arrays(filepath, kind='body_template')

    if meta.get('template_version') != TEMPLATE_VERSION:
        raise TopologyError('Unsupported template version: {}'.format(
            meta.get('template_version')))

    return BodyTemplate(**arrays).validate()


def load_or_build_templates(adult_filepath, child_filepath, seed=0):
    """
    Load the template pair if cached, otherwise build and cache it.

    Returns:
        adult, child: (BodyTemplate) Template pair.
    """
    if file_exists(adult_filepath) and file_exists(child_filepath):
        log.info('Loading cached templates from %s and %s', adult_filepath, child_filepath)
        adult = load_template(adult_filepath)
        child = load_template(child_filepath)
        check_topology(adult, child)
        return adult, child

    adult, child = build_generic_templates(seed)
    save_template(adult, adult_filepath)
    save_template(child, child_filepath)

    return adult, child
