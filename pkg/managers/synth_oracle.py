"""
Description:
    Synthetic ground truth and observations. Scripted motions (stand, walk,
    side-step, jump, run) are turned into per-frame body parameters with
    foot contact, then into keypoints, depth clouds and insole pressure.
    Also holds the brute-force oracles the tests compare against.

To-do:
"""
# standard imports
import logging as log
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../'))

# third party imports
import numpy as np
from scipy.spatial.transform import Rotation

# local imports
from managers.body_model import (
    BodyParams, KEYPOINT_JOINTS, N_FOOT_VERTICES_PER_FOOT, N_POSE, N_SHAPE,
    a_pose_theta, project)
from managers.energy import GroundPlane
from managers.fpp_net import KeypointFrame2D
from managers.optimizer import finite_difference_gradient
from managers.pipelines import GroundTruth, ObservationFrame, SequenceInput
from managers.pressure_contact import (
    CONTACT_THRESHOLD, DenseContact, PressureFrame, build_sensor_vertex_map,
    normalize_pressure, sensor_values_from_vertices)

FAMILIES = ('stand', 'walk', 'side_step', 'jump', 'run')
CONTACT_HEIGHT = 0.002
# horizontal motion between frames above which a foot counts as sliding
SLIP_TOLERANCE = 0.002
GRAVITY = 9.81
DEFAULT_BODY_WEIGHT = 700.0

# joint indices used by the gait tracks
L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE, R_ANKLE = 1, 2, 4, 5, 7, 8
L_SHOULDER, R_SHOULDER = 16, 17

# gait constants at amplitude 1
WALK_CADENCE = 0.9
WALK_HIP = 0.35
WALK_KNEE = 0.6
RUN_CADENCE = 1.4
RUN_HIP = 0.5
RUN_KNEE = 1.0
RUN_LIFT = 0.05
SIDE_STEP_CADENCE = 0.8
SIDE_STEP_HIP = 0.25
JUMP_CROUCH = 0.5
JUMP_CROUCH_TIME = 0.3
JUMP_SPEED = 2.0
JUMP_FORWARD_SPEED = 1.0
ARM_SWING = 0.5
RAMP_TIME = 0.5


class SynthError(ValueError):
    pass


class MotionScript:
    """
    One scripted motion of one subject.
    """
    KEYS = ['family', 'duration', 'frame_rate', 'amplitude', 'standing_duration', 'seed',
            'alpha', 'start_depth']

    def __init__(
            self,
            family='walk',
            duration=2.0,
            frame_rate=30.0,
            amplitude=1.0,
            standing_duration=0.5,
            seed=0,
            alpha=1.0,
            beta=None,
            start_depth=5.0):
        """
        Class initializer.

        Inputs:
            family: (str) One of FAMILIES.
            duration: (float) Seconds, standing segment included.
            frame_rate: (float) Frames per second.
            amplitude: (float) Scale of the joint angles and of the jump.
            standing_duration: (float) Leading A-pose stance in seconds.
            seed: (int) Picks the leading leg.
            alpha: (float) Subject blend between child (0) and adult (1).
            beta: (np.array, optional) Subject shape.
            start_depth: (float) Initial distance from the camera in meters.
        """
        self.family = family
        self.duration = float(duration)
        self.frame_rate = float(frame_rate)
        self.amplitude = float(amplitude)
        self.standing_duration = float(standing_duration)
        self.seed = int(seed)
        self.alpha = float(alpha)
        self.beta = np.zeros(N_SHAPE) if beta is None else np.array(beta, dtype=float)
        self.start_depth = float(start_depth)

        self.validate()

    def validate(self):
        if self.family not in FAMILIES:
            raise SynthError('unknown motion family \'{}\', expected one of {}'.format(
                self.family, FAMILIES))
        if not self.duration > 0 or not self.frame_rate > 0:
            raise SynthError('duration and frame_rate must be positive')
        if self.standing_duration < 0 or self.amplitude < 0:
            raise SynthError('standing_duration and amplitude must be non-negative')
        if not 0 <= self.alpha <= 1:
            raise SynthError('alpha must lie in [0, 1]')
        if self.beta.shape != (N_SHAPE,):
            raise SynthError('beta must hold {} values'.format(N_SHAPE))

        return self

    @property
    def n_frames(self):
        return int(round(self.duration * self.frame_rate))

    @property
    def n_standing(self):
        return min(int(round(self.standing_duration * self.frame_rate)), self.n_frames)

    @classmethod
    def from_config(cls, configparser, section='DEFAULT'):
        kwargs = {}
        for key in cls.KEYS:
            if not configparser.has_key(key, section=section):
                continue
            if key == 'family':
                kwargs[key] = configparser.getstr(key, section=section)
            elif key == 'seed':
                kwargs[key] = configparser.getint(key, section=section)
            else:
                kwargs[key] = configparser.getfloat(key, section=section)
            log.debug('%s: %s', key, kwargs[key])

        if configparser.has_key('beta', section=section):
            kwargs['beta'] = configparser.get_float_list('beta', section=section)

        return cls(**kwargs)


class NoiseSpec:
    """
    Observation noise of a synthetic sequence.
    """
    KEYS = ['keypoint_sigma', 'confidence_model', 'depth_sigma', 'cloud_dropout',
            'cloud_every', 'pressure_sigma', 'pose_sigma', 'drift', 'seed']

    def __init__(
            self,
            keypoint_sigma=0.0,
            confidence_model='constant',
            depth_sigma=0.0,
            cloud_dropout=0.0,
            cloud_every=1,
            pressure_sigma=0.0,
            pose_sigma=0.0,
            drift=0.0,
            seed=0):
        """
        Class initializer.

        Inputs:
            keypoint_sigma: (float) Pixel noise of the keypoints.
            confidence_model: (str) 'constant' (all 1) or 'uniform' (U(0.5, 1)).
            depth_sigma: (float) Depth noise in meters.
            cloud_dropout: (float) Fraction of cloud points removed.
            cloud_every: (int) A cloud is kept every n-th frame only.
            pressure_sigma: (float) Noise on loaded sensors, raw units.
            pose_sigma: (float) Pose noise of the initial-pose stub in radians.
            drift: (float) Depth drift of the initial-pose stub by the last frame, meters.
            seed: (int) Noise seed.
        """
        self.keypoint_sigma = float(keypoint_sigma)
        self.confidence_model = confidence_model
        self.depth_sigma = float(depth_sigma)
        self.cloud_dropout = float(cloud_dropout)
        self.cloud_every = int(cloud_every)
        self.pressure_sigma = float(pressure_sigma)
        self.pose_sigma = float(pose_sigma)
        self.drift = float(drift)
        self.seed = int(seed)

        self.validate()

    def validate(self):
        sigmas = [self.keypoint_sigma, self.depth_sigma, self.pressure_sigma, self.pose_sigma]
        if min(sigmas) < 0:
            raise SynthError('noise sigmas must be non-negative')
        if not 0 <= self.cloud_dropout <= 1:
            raise SynthError('cloud_dropout must lie in [0, 1]')
        if self.cloud_every < 1:
            raise SynthError('cloud_every must be at least 1')
        if self.confidence_model not in ('constant', 'uniform'):
            raise SynthError('unknown confidence model \'{}\''.format(self.confidence_model))

        return self

    @classmethod
    def from_config(cls, configparser, section='DEFAULT'):
        kwargs = {}
        for key in cls.KEYS:
            if not configparser.has_key(key, section=section):
                continue
            if key == 'confidence_model':
                kwargs[key] = configparser.getstr(key, section=section)
            elif key in ('cloud_every', 'seed'):
                kwargs[key] = configparser.getint(key, section=section)
            else:
                kwargs[key] = configparser.getfloat(key, section=section)
            log.debug('%s: %s', key, kwargs[key])

        return cls(**kwargs)


def _set(theta, joint, rotvec):
    theta[:, 3 * joint:3 * joint + 3] = rotvec


def _arm_swing(theta, swing):
    """
    Compose a forward/backward swing about x with the A-pose of each arm.
    """
    a_pose = a_pose_theta()

    for joint, sign in ((L_SHOULDER, -1.0), (R_SHOULDER, 1.0)):
        base = Rotation.from_rotvec(np.tile(a_pose[3 * joint:3 * joint + 3], (len(swing), 1)))
        rotvec = np.zeros((len(swing), 3))
        rotvec[:, 0] = sign * swing
        _set(theta, joint, (Rotation.from_rotvec(rotvec) * base).as_rotvec())


def _sagittal_legs(theta, hip_left, hip_right, knee_left, knee_right):
    """
    Flexion about x. The ankles cancel hip and knee so the soles stay flat.
    """
    for hip, knee, ankle, h, k in ((L_HIP, L_KNEE, L_ANKLE, hip_left, knee_left),
                                   (R_HIP, R_KNEE, R_ANKLE, hip_right, knee_right)):
        theta[:, 3 * hip] = h
        theta[:, 3 * knee] = k
        theta[:, 3 * ankle] = -(h + k)


def _gait(tau, cadence, hip, knee, lead):
    phase = 2.0 * np.pi * cadence * tau
    ramp = np.clip(tau / RAMP_TIME, 0.0, 1.0)
    s = lead * np.sin(phase)
    c = np.cos(phase)

    return phase, ramp, ramp * hip * s, ramp * knee * np.maximum(0.0, c), \
        ramp * knee * np.maximum(0.0, -c)


def jump_flight_interval(script):
    """
    Returns:
        (tuple) (start, stop) of the flight phase in seconds from the sequence start.
    """
    takeoff = script.standing_duration + JUMP_CROUCH_TIME
    flight = 2.0 * JUMP_SPEED * script.amplitude / GRAVITY

    return takeoff, takeoff + flight


def pose_track(script):
    """
    Joint angles, vertical lift and extra airborne velocity of every frame.

    Returns:
        theta: (np.array) n_frames x 72 pose values.
        lift: (np.array) n_frames heights above the supporting pose in meters.
        velocity: (np.array) n_frames x 3 horizontal velocity while airborne, m/s.
    """
    n = script.n_frames
    theta = np.tile(a_pose_theta(), (n, 1))
    lift = np.zeros(n)
    velocity = np.zeros((n, 3))

    tau = np.arange(n) / script.frame_rate - script.standing_duration
    moving = tau >= 0
    tau = np.maximum(tau, 0.0)
    amp = script.amplitude * moving
    lead = 1.0 if np.random.RandomState(script.seed).rand() < 0.5 else -1.0

    if script.family == 'walk' or script.family == 'run':
        cadence, hip, knee = (WALK_CADENCE, WALK_HIP, WALK_KNEE) if script.family == 'walk' \
            else (RUN_CADENCE, RUN_HIP, RUN_KNEE)
        phase, ramp, h, k_left, k_right = _gait(tau, cadence, hip, knee, lead)
        h, k_left, k_right = amp * h, amp * k_left, amp * k_right

        _sagittal_legs(theta, h, -h, -k_left, -k_right)
        _arm_swing(theta, ARM_SWING * h)

        if script.family == 'run':
            lift = amp * ramp * RUN_LIFT * np.maximum(0.0, -np.cos(2.0 * phase)) ** 2

    elif script.family == 'side_step':
        phase = 2.0 * np.pi * SIDE_STEP_CADENCE * tau
        ramp = np.clip(tau / RAMP_TIME, 0.0, 1.0)
        s = lead * np.sin(phase)
        left = -amp * ramp * SIDE_STEP_HIP * np.maximum(0.0, s)
        right = amp * ramp * SIDE_STEP_HIP * np.maximum(0.0, -s)

        theta[:, 3 * L_HIP + 2] = left
        theta[:, 3 * L_ANKLE + 2] = -left
        theta[:, 3 * R_HIP + 2] = right
        theta[:, 3 * R_ANKLE + 2] = -right

    elif script.family == 'jump':
        takeoff, landing = jump_flight_interval(script)
        takeoff -= script.standing_duration
        landing -= script.standing_duration

        crouch = np.zeros(n)
        before = moving & (tau < takeoff)
        after = moving & (tau >= landing) & (tau < landing + JUMP_CROUCH_TIME)
        crouch[before] = np.sin(np.pi * tau[before] / JUMP_CROUCH_TIME)
        crouch[after] = np.sin(np.pi * (tau[after] - landing) / JUMP_CROUCH_TIME)
        crouch *= JUMP_CROUCH * script.amplitude

        _sagittal_legs(theta, crouch, crouch, -2.0 * crouch, -2.0 * crouch)

        airborne = moving & (tau >= takeoff) & (tau < landing)
        t_air = tau[airborne] - takeoff
        v = JUMP_SPEED * script.amplitude
        lift[airborne] = np.maximum(v * t_air - 0.5 * GRAVITY * t_air ** 2, 0.0)
        velocity[airborne, 2] = -JUMP_FORWARD_SPEED * script.amplitude

    return theta, lift, velocity


def _horizontal(vector, normal):
    return vector - vector.dot(normal) * normal


def _vertex_pressure(heights, counts, body_weight, contacted=None):
    """
    Load grows linearly as a foot vertex sinks below the contact height and is
    scaled so all sensors together carry the body weight. Only vertices in
    'contacted' carry load when it is given.
    """
    if contacted is None:
        contacted = heights <= CONTACT_HEIGHT
    contacted = np.asarray(contacted, dtype=bool)
    load = np.where(
        contacted, np.maximum(CONTACT_HEIGHT - heights, 1e-6 * CONTACT_HEIGHT), 0.0)

    total = np.sum(counts * load)
    if total <= 0:
        return np.zeros_like(load)

    return body_weight * load / total


def _sensor_counts(sensor_map):
    return np.array([index.size for index in sensor_map.indices], dtype=float)


def _planted_feet(sole, previous_sole, normal):
    """
    Per-vertex flag of the feet that did not slide since the previous frame.
    A foot slides when any of its sole vertices moved along the floor by
    more than SLIP_TOLERANCE.
    """
    if previous_sole is None:
        return np.ones(len(sole), dtype=bool)

    step = sole - previous_sole
    step = step - np.outer(step.dot(normal), normal)
    moved = np.linalg.norm(step, axis=1) > SLIP_TOLERANCE

    n = N_FOOT_VERTICES_PER_FOOT
    left = not moved[:n].any()
    right = not moved[n:].any()

    return np.repeat([left, right], n)


def generate_motion(script, model, floor=None, sensor_map=None, body_weight=DEFAULT_BODY_WEIGHT):
    """
    Turn a script into per-frame body parameters standing on the floor.
    The supporting sole rests on the floor, the stance foot does not slip
    and airborne frames keep the last ground velocity. A foot vertex is in
    contact when it is at the floor and its foot did not slide since the
    previous frame, so a swing foot brushing the floor is not labeled.

    Inputs:
        script: (MotionScript) Motion.
        model: (BodyModel) Body model.
        floor: (GroundPlane, optional) Floor in camera coordinates.
        sensor_map: (SensorVertexMap, optional) Map used for the load model.
        body_weight: (float, optional) Body weight in raw sensor units.

    Returns:
        params: (list) BodyParams per frame.
        contacts: (list) Ground-truth DenseContact per frame.
    """
    floor = floor or GroundPlane()
    sensor_map = sensor_map or build_sensor_vertex_map(model.adult)
    counts = _sensor_counts(sensor_map)
    normal = floor.normal
    foot_ids = model.foot_vertex_ids

    theta, lift, air_velocity = pose_track(script)
    dt = 1.0 / script.frame_rate

    position = _horizontal(np.array([0.0, 0.0, script.start_depth]), normal)
    velocity = np.zeros(3)
    previous_ankles = None
    previous_airborne = False
    previous_sole = None

    params = []
    contacts = []

    for i in range(script.n_frames):
        body = BodyParams(theta=theta[i], beta=script.beta, alpha=script.alpha)
        vertices, joints = model.forward(body)

        sole = vertices[foot_ids].dot(normal)
        left_low = sole[:N_FOOT_VERTICES_PER_FOOT].min()
        right_low = sole[N_FOOT_VERTICES_PER_FOOT:].min()
        stance = L_ANKLE if left_low <= right_low else R_ANKLE
        airborne = lift[i] > CONTACT_HEIGHT

        ankles = {L_ANKLE: joints[L_ANKLE], R_ANKLE: joints[R_ANKLE]}
        if previous_ankles is not None:
            if airborne or previous_airborne:
                step = (velocity + air_velocity[i]) * dt
            else:
                step = -_horizontal(ankles[stance] - previous_ankles[stance], normal)
                velocity = step / dt
            position = position + _horizontal(step, normal)

        height = floor.offset - min(left_low, right_low) + lift[i]
        body.T = position + height * normal

        vertices_world = model.forward(body)[0]
        sole = vertices_world[foot_ids]
        heights = floor.height(sole)
        contacted = (heights <= CONTACT_HEIGHT) & _planted_feet(sole, previous_sole, normal)
        pressure = _vertex_pressure(heights, counts, body_weight, contacted)
        labels = contacted.astype(int)

        params.append(body)
        contacts.append(DenseContact(normalize_pressure(pressure, body_weight), labels))

        previous_ankles = ankles
        previous_airborne = airborne
        previous_sole = sole

    log.info('Generated %s motion: %d frames, %d standing', script.family,
             script.n_frames, script.n_standing)

    return params, contacts


def synthesize_observations(
        params_seq,
        model,
        cam,
        noise,
        floor=None,
        sensor_map=None,
        body_weight=DEFAULT_BODY_WEIGHT,
        frame_rate=30.0,
        standing_segment=(0, 0),
        subject='synthetic',
        contacts=None,
        image_size=(500, 500)):
    """
    Render keypoints, depth clouds and insole pressure for a parameter sequence.

    Inputs:
        params_seq: (list) BodyParams per frame.
        model: (BodyModel) Body model.
        cam: (Camera) Intrinsics.
        noise: (NoiseSpec) Noise levels and seed.
        floor: (GroundPlane, optional) Floor for the load model.
        sensor_map: (SensorVertexMap, optional) Sensor map of the insoles.
        body_weight: (float, optional) Total load in raw sensor units.
        frame_rate: (float, optional) Frames per second.
        standing_segment: (tuple, optional) [start, stop) of the A-pose stance.
        subject: (str, optional) Subject id.
        contacts: (list, optional) Ground-truth contact stored with the sequence.
            When given, only its contacted vertices carry load.
        image_size: (tuple, optional) (width, height).

    Returns:
        (SequenceInput) Observations with raw pressure and ground truth.
    """
    floor = floor or GroundPlane()
    sensor_map = sensor_map or build_sensor_vertex_map(model.adult)
    counts = _sensor_counts(sensor_map)
    rng = np.random.RandomState(noise.seed)

    frames = []
    raw_pressure = []

    for i, params in enumerate(params_seq):
        timestamp = i / float(frame_rate)
        vertices, joints = model.forward(params)

        uv, valid = project(joints[KEYPOINT_JOINTS], cam)
        uv = uv + noise.keypoint_sigma * rng.randn(*uv.shape)
        if noise.confidence_model == 'uniform':
            confidences = rng.uniform(0.5, 1.0, size=len(KEYPOINT_JOINTS))
        else:
            confidences = np.ones(len(KEYPOINT_JOINTS))
        uv[~valid] = 0.0
        confidences[~valid] = 0.0

        cloud = vertices + noise.depth_sigma * rng.randn(*vertices.shape)
        keep = rng.rand(len(cloud)) >= noise.cloud_dropout
        if i % noise.cloud_every:
            keep[:] = False
        cloud = cloud[keep & (cloud[:, 2] > 0)]

        heights = floor.height(vertices[model.foot_vertex_ids])
        contacted = None if contacts is None else contacts[i].labels == 1
        left, right = sensor_values_from_vertices(
            _vertex_pressure(heights, counts, body_weight, contacted), sensor_map)
        sensors = np.concatenate([left, right])
        loaded = sensors > 0
        perturbed = sensors + noise.pressure_sigma * rng.randn(sensors.size)
        sensors = np.where(loaded, np.maximum(perturbed, 0.5 * sensors), 0.0)

        frames.append(ObservationFrame(
            KeypointFrame2D(uv, confidences), cloud, cam, timestamp))
        raw_pressure.append(PressureFrame(timestamp, sensors[:left.size], sensors[left.size:]))

    gt = GroundTruth(list(params_seq), contacts)

    log.info('Synthesized %d frames for %s', len(frames), subject)

    return SequenceInput(
        frames, None, standing_segment, subject, raw_pressure, frame_rate, floor,
        image_size, gt)


def synthesize_sequence(script, model, cam, noise, floor=None, sensor_map=None,
                        body_weight=DEFAULT_BODY_WEIGHT, subject='synthetic'):
    """
    generate_motion() followed by synthesize_observations().
    """
    sensor_map = sensor_map or build_sensor_vertex_map(model.adult)
    params, contacts = generate_motion(script, model, floor, sensor_map, body_weight)

    return synthesize_observations(
        params, model, cam, noise, floor, sensor_map, body_weight, script.frame_rate,
        (0, script.n_standing), subject, contacts)


def initial_pose_stub(params_seq, noise, alpha=1.0, beta=None):
    """
    Stand-in for an external per-frame pose regressor: ground-truth pose with
    Gaussian noise, a generic shape and a translation drifting away from the
    camera linearly up to noise.drift at the last frame.

    Returns:
        (list) BodyParams per frame.
    """
    rng = np.random.RandomState(noise.seed + 1)
    beta = np.zeros(N_SHAPE) if beta is None else np.asarray(beta, dtype=float)
    n = len(params_seq)
    estimates = []

    for i, params in enumerate(params_seq):
        ramp = i / float(n - 1) if n > 1 else 0.0
        T = params.T + np.array([0.0, 0.0, noise.drift * ramp])
        theta = params.theta + noise.pose_sigma * rng.randn(N_POSE)
        estimates.append(BodyParams(theta, beta, params.R, T, alpha))

    return estimates


def motion_library(seed=0, n_per_family=4, duration=2.0, frame_rate=30.0):
    """
    Poses of every motion family at several amplitudes, the training set of
    the pose prior.

    Returns:
        (np.array) S x 72 poses.
    """
    rng = np.random.RandomState(seed)
    poses = []

    for family in FAMILIES:
        for k in range(n_per_family):
            script = MotionScript(
                family, duration, frame_rate, amplitude=rng.uniform(0.6, 1.2),
                standing_duration=0.0, seed=int(rng.randint(1 << 30)))
            poses.append(pose_track(script)[0])

    return np.concatenate(poses)


def brute_force_gradient(objective, point):
    """
    Central differences with step 1e-5.
    """
    return finite_difference_gradient(objective, point, step=1e-5)


def brute_force_annotate(frames, sensor_map, weight):
    """
    Contact annotation written out loop by loop: vertex pressure is the
    weighted sensor average, normalized through the logistic of p / w, and
    labeled 1 when the result reaches 0.5 with strictly positive pressure.

    Returns:
        (list) DenseContact per frame.
    """
    contacts = []

    for frame in frames:
        sensors = list(frame.left) + list(frame.right)
        p_norm = np.zeros(len(sensor_map.indices))
        labels = np.zeros(len(sensor_map.indices), dtype=int)

        for vertex, (index, w) in enumerate(zip(sensor_map.indices, sensor_map.weights)):
            p = 0.0
            for sensor, weight_k in zip(index, w):
                p += weight_k * sensors[sensor]
            p_norm[vertex] = 1.0 / (1.0 + np.exp(-p / weight))
            labels[vertex] = 1 if p_norm[vertex] >= CONTACT_THRESHOLD and p > 0 else 0

        contacts.append(DenseContact(p_norm, labels))

    return contacts


def grid_search_alignment_error(pred, gt, angle_step=10.0, scales=None):
    """
    Coarse brute-force similarity alignment: every rotation on an Euler-angle
    grid and every scale, translation by centroids, keeping the lowest mean
    per-joint error.

    Inputs:
        pred, gt: (np.array) J x 3 joints in meters.
        angle_step: (float, optional) Grid step in degrees.
        scales: (np.array, optional) Candidate scales.

    Returns:
        (float) Best mean joint error in millimeters.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    scales = np.linspace(0.5, 1.5, 21) if scales is None else np.asarray(scales, dtype=float)

    pred_c = pred - pred.mean(axis=0)
    gt_c = gt - gt.mean(axis=0)

    yaw = np.arange(-180.0, 180.0, angle_step)
    pitch = np.arange(-90.0, 90.0 + 1e-9, angle_step)
    roll = np.arange(-180.0, 180.0, angle_step)
    grid = np.array(np.meshgrid(yaw, pitch, roll, indexing='ij')).reshape(3, -1).T
    rotations = Rotation.from_euler('zyx', grid, degrees=True).as_matrix()

    best = np.inf
    for start in range(0, len(rotations), 2048):
        rotated = np.einsum('rij,kj->rki', rotations[start:start + 2048], pred_c)
        for s in scales:
            error = np.linalg.norm(s * rotated - gt_c, axis=2).mean(axis=1).min()
            best = min(best, error)

    return float(best * 1000.0)
