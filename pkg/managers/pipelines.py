"""
Description:
    The two end-to-end procedures. RGBD-P fitting runs three stages (shape
    from the A-pose segment, pose at the first frame, warm-started tracking)
    against depth, keypoints and pressure-derived contact. VP-MoCap refines
    per-frame initial poses from monocular keypoints with predicted contact
    and depth ground anchors.

To-do:
"""
# standard imports
from collections import OrderedDict, namedtuple
import logging as log
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../'))

# third party imports
import numpy as np
import pandas as pd

# local imports
from managers.body_model import (
    BodyParams, FOOT_JOINTS, FOOT_KEYPOINTS, KEYPOINT_JOINTS, SOLE_LENGTH_SAMPLES,
    SOLE_WIDTH_SAMPLES, a_pose_theta, block_slices, build_foot_planes, project)
from managers.energy import (
    DEPTH_CAP, GroundPlane, RGBDP_TERMS, RgbdpInputs, VP_TERMS, VpInputs,
    nearest_correspondences, rgbdp_breakdown, total_rgbdp, total_vp, vp_breakdown)
from managers.fpp_net import FppPrediction
from managers.optimizer import OPTIMIZER_KEYS, OptimizerConfig, minimize
from managers.pressure_contact import CONTACT_THRESHOLD

ANCHOR_RADIUS = 8.0
JOINT_CONTACT_FRACTION = 0.25
STAGES = ('shape', 'init', 'track', 'vp')
STAGE_KEYS = OPTIMIZER_KEYS + [
    'outer_iterations', 'depth_cap_scales', 'contact_free_rounds', 'extrapolate']

ENERGY_TERMS = [name for name, _ in RGBDP_TERMS] + \
    [name for name, _ in VP_TERMS if name not in dict(RGBDP_TERMS)]
ENERGY_COLUMNS = ['frame', 'status', 'iterations', 'initial_energy', 'total'] + ENERGY_TERMS

ObservationFrame = namedtuple(
    'ObservationFrame', ['keypoints2d', 'depth_cloud', 'cam', 'timestamp'])
GroundTruth = namedtuple('GroundTruth', ['params', 'contacts'])
StageConfig = namedtuple(
    'StageConfig',
    ['optimizer', 'outer_iterations', 'depth_cap_scales', 'contact_free_rounds', 'extrapolate'])
StageConfig.__new__.__defaults__ = (0, False)


class PipelineError(ValueError):
    pass


def make_observation_frame(keypoints2d, depth_cloud, cam, timestamp):
    """
    Build and validate an ObservationFrame. The cloud may be empty.
    """
    cloud = np.asarray(depth_cloud, dtype=float).reshape(-1, 3)

    if not np.isfinite(timestamp):
        raise PipelineError('timestamp must be finite')
    if not np.all(np.isfinite(cloud)) or np.any(cloud[:, 2] <= 0):
        raise PipelineError('cloud points must be finite with positive depth')

    return ObservationFrame(keypoints2d, cloud, cam, float(timestamp))


class SequenceInput:
    """
    Synchronized observations of one subject.
    """
    def __init__(
            self,
            frames,
            pressure=None,
            standing_segment=(0, 0),
            subject='subject',
            raw_pressure=None,
            frame_rate=30.0,
            floor=None,
            image_size=(500, 500),
            gt=None):
        """
        Class initializer.

        Inputs:
            frames: (list) ObservationFrame per frame.
            pressure: (list, optional) DenseContact per frame.
            standing_segment: (tuple) [start, stop) frame range of the A-pose stance.
            subject: (str) Subject id.
            raw_pressure: (list, optional) PressureFrame per frame.
            frame_rate: (float) Frames per second.
            floor: (GroundPlane, optional) Floor plane in camera coordinates.
            image_size: (tuple) (width, height) in pixels.
            gt: (GroundTruth, optional) Ground truth of synthetic sequences.
        """
        self.frames = list(frames)
        self.pressure = None if pressure is None else list(pressure)
        self.standing_segment = (int(standing_segment[0]), int(standing_segment[1]))
        self.subject = subject
        self.raw_pressure = None if raw_pressure is None else list(raw_pressure)
        self.frame_rate = float(frame_rate)
        self.floor = floor if floor is not None else GroundPlane()
        self.image_size = tuple(int(v) for v in image_size)
        self.gt = gt

        self.validate()

    def __len__(self):
        return len(self.frames)

    def validate(self):
        timestamps = np.array([frame.timestamp for frame in self.frames])
        if timestamps.size > 1 and np.any(np.diff(timestamps) <= 0):
            raise PipelineError('frame timestamps must be strictly increasing')

        for name in ('pressure', 'raw_pressure'):
            values = getattr(self, name)
            if values is not None and len(values) != len(self.frames):
                raise PipelineError('{} has {} entries for {} frames'.format(
                    name, len(values), len(self.frames)))

        start, stop = self.standing_segment
        if not 0 <= start <= stop <= len(self.frames):
            raise PipelineError('standing segment {} outside the sequence'.format(
                self.standing_segment))

        return self

    def truncate(self, n_frames):
        """
        Returns:
            (SequenceInput) The first n_frames frames.
        """
        def head(values):
            return None if values is None else values[:n_frames]

        gt = None
        if self.gt is not None:
            gt = GroundTruth(self.gt.params[:n_frames], head(self.gt.contacts))

        start, stop = self.standing_segment

        return SequenceInput(
            self.frames[:n_frames], head(self.pressure),
            (min(start, n_frames), min(stop, n_frames)), self.subject,
            head(self.raw_pressure), self.frame_rate, self.floor, self.image_size, gt)

    def with_pressure(self, contacts):
        return SequenceInput(
            self.frames, contacts, self.standing_segment, self.subject, self.raw_pressure,
            self.frame_rate, self.floor, self.image_size, self.gt)


class PipelineConfig:
    """
    Optimizer settings, outer (correspondence) iterations and depth-cap
    schedule of every stage.
    """
    DEFAULT_STAGES = {
        'shape': StageConfig(
            OptimizerConfig(step_size=1e-2, max_iterations=300, patience=20,
                            parameter_mask=('alpha', 'beta', 'T')),
            4, (4.0, 2.0, 1.0, 1.0)),
        'init': StageConfig(
            OptimizerConfig(step_size=1e-2, max_iterations=200, patience=20,
                            parameter_mask=('theta', 'R', 'T')),
            5, (8.0, 4.0, 2.0, 1.0, 1.0)),
        # two contact-free rounds settle the pose before the feet are pinned
        'track': StageConfig(
            OptimizerConfig(step_size=5e-3, max_iterations=100, patience=20,
                            parameter_mask=('theta', 'T')),
            6, (4.0, 2.0, 1.0, 1.0, 1.0, 1.0), 2, True),
        'vp': StageConfig(
            OptimizerConfig(step_size=5e-3, max_iterations=300, patience=20,
                            parameter_mask=('theta', 'T')),
            1, (1.0,))}

    def __init__(self, stages=None, depth_cap=DEPTH_CAP):
        self.stages = dict(self.DEFAULT_STAGES)
        self.stages.update(stages or {})
        self.depth_cap = None if depth_cap is None else float(depth_cap)

    def cap_schedule(self, stage):
        """
        Returns:
            (list) Depth cap per outer iteration, None when uncapped.
        """
        config = self.stages[stage]
        scales = list(config.depth_cap_scales) or [1.0]
        scales = (scales + [scales[-1]] * config.outer_iterations)[:config.outer_iterations]

        if self.depth_cap is None:
            return [None] * config.outer_iterations

        return [self.depth_cap * s for s in scales]

    @classmethod
    def from_config(cls, configparser, depth_cap=DEPTH_CAP):
        """
        Read one section per stage. Keys absent from a section fall back to
        the stage defaults. The parameter masks of the stages are fixed.
        """
        stages = {}
        for stage in STAGES:
            if stage not in configparser.sections():
                continue

            default = cls.DEFAULT_STAGES[stage]
            configparser.validate_keys(STAGE_KEYS, section=stage)

            optimizer = OptimizerConfig.from_config(configparser, section=stage).replace(
                parameter_mask=default.optimizer.parameter_mask)
            for key in OPTIMIZER_KEYS:
                if not configparser.has_key(key, section=stage):
                    optimizer = optimizer.replace(**{key: getattr(default.optimizer, key)})

            outer = default.outer_iterations
            if configparser.has_key('outer_iterations', section=stage):
                outer = configparser.getint('outer_iterations', section=stage)
            scales = default.depth_cap_scales
            if configparser.has_key('depth_cap_scales', section=stage):
                scales = tuple(configparser.get_float_list('depth_cap_scales', section=stage))

            free = default.contact_free_rounds
            if configparser.has_key('contact_free_rounds', section=stage):
                free = configparser.getint('contact_free_rounds', section=stage)
            extrapolate = default.extrapolate
            if configparser.has_key('extrapolate', section=stage):
                extrapolate = configparser.getbool('extrapolate', section=stage)

            if not 0 <= free < max(outer, 1):
                raise PipelineError(
                    'stage {}: contact_free_rounds must be below outer_iterations ({}), got {}'.format(
                        stage, outer, free))

            log.debug('Stage %s: outer_iterations=%d, depth_cap_scales=%s, '
                      'contact_free_rounds=%d, extrapolate=%s',
                      stage, outer, scales, free, extrapolate)
            stages[stage] = StageConfig(optimizer, outer, scales, free, extrapolate)

        return cls(stages, depth_cap)


class FitResult:
    """
    Per-frame parameters, energy breakdown and convergence diagnostics.
    """
    def __init__(self, params, energies, diagnostics):
        if not len(params) == len(energies) == len(diagnostics):
            raise PipelineError('FitResult needs one entry per frame')

        self.params = list(params)
        self.energies = list(energies)
        self.diagnostics = list(diagnostics)

    def __len__(self):
        return len(self.params)

    def joints(self, model):
        return np.stack([model.forward(p)[1] for p in self.params])

    def vertices(self, model):
        return np.stack([model.forward(p)[0] for p in self.params])

    def to_dataframes(self):
        """
        Returns:
            params: (pd.DataFrame) One row per frame in parameter vector order.
            energy: (pd.DataFrame) One row per frame with diagnostics and terms.
        """
        s = block_slices()
        columns = ['frame']
        for block, index in s.items():
            columns += ['{}_{}'.format(block, i) for i in range(index.stop - index.start)]

        rows = [[t] + p.to_vector().tolist() for t, p in enumerate(self.params)]
        params_df = pd.DataFrame(rows, columns=columns)

        records = []
        for t, (energy, diagnostic) in enumerate(zip(self.energies, self.diagnostics)):
            record = {'frame': t}
            record.update({term: float(energy.get(term, 0.0)) for term in ENERGY_TERMS})
            record['total'] = float(energy.get('total', 0.0))
            record['status'] = diagnostic['status']
            record['iterations'] = int(diagnostic['iterations'])
            record['initial_energy'] = float(diagnostic['initial_energy'])
            records.append(record)
        energy_df = pd.DataFrame(records, columns=ENERGY_COLUMNS)

        return params_df, energy_df

    def save(self, prefix):
        params_df, energy_df = self.to_dataframes()

        log.info('Saving fit result to %s_params.csv and %s_energy.csv', prefix, prefix)
        params_df.to_csv(prefix + '_params.csv', index=False)
        energy_df.to_csv(prefix + '_energy.csv', index=False)

    @classmethod
    def load(cls, prefix):
        params_df = pd.read_csv(prefix + '_params.csv', float_precision='round_trip')
        energy_df = pd.read_csv(prefix + '_energy.csv', float_precision='round_trip')

        if len(params_df) != len(energy_df):
            raise PipelineError('parameter and energy tables of {} disagree'.format(prefix))

        params = [
            BodyParams.from_vector(row)
            for row in params_df.drop(columns='frame').to_numpy(dtype=float)]

        energies = []
        diagnostics = []
        for _, row in energy_df.iterrows():
            energy = {term: float(row[term]) for term in ENERGY_TERMS}
            energy['total'] = float(row['total'])
            energies.append(energy)
            diagnostics.append({
                'status': str(row['status']),
                'iterations': int(row['iterations']),
                'initial_energy': float(row['initial_energy'])})

        return cls(params, energies, diagnostics)


def _clip_alpha(x):
    s = block_slices()['alpha']
    x = x.copy()
    x[s] = np.clip(x[s], 0.0, 1.0)

    return x


def _cloud(frame):
    return np.asarray(frame.depth_cloud, dtype=float).reshape(-1, 3)


def _rgbdp_inputs(model, frame, vector, cap, contact=None, floor=None, prior=None,
                  prev_params=None, prev_contact=None, planes=None):
    cloud = _cloud(frame)
    correspondences = None
    if len(cloud):
        correspondences = nearest_correspondences(model.forward(vector)[0], cloud)

    return RgbdpInputs(
        model=model, cloud=cloud, correspondences=correspondences, cam=frame.cam,
        keypoints=frame.keypoints2d.positions, confidences=frame.keypoints2d.confidences,
        contact=contact, floor=floor, prior=prior, prev_params=prev_params,
        prev_contact=prev_contact, planes=planes, depth_cap=cap)


def _place_at_centroid(model, vector, cloud):
    vector = vector.copy()
    s = block_slices()['T']
    vertices = model.forward(vector)[0]
    vector[s] += cloud.mean(axis=0) - vertices.mean(axis=0)

    return vector


def _alpha_from_height(model, cloud, floor):
    """
    Blend that matches the subject's standing height, from the cloud extent
    along the floor normal.
    """
    if model.child is None:
        return 1.0

    adult_height = np.ptp(model.adult.vertices.dot(floor.normal))
    child_height = np.ptp(model.child.vertices.dot(floor.normal))
    height = np.ptp(cloud.dot(floor.normal))

    return float(np.clip((height - child_height) / (adult_height - child_height), 0.0, 1.0))


def _contact_free(kwargs):
    kwargs = dict(kwargs)
    kwargs.update(contact=None, prev_params=None, prev_contact=None)

    return kwargs


def _run_outer(model, frame, vector, stage, config, weights, project=None, candidates=(),
               **inputs_kwargs):
    """
    Alternate nearest-vertex correspondences and minimization over the
    stage's depth-cap schedule. The stage's leading contact-free rounds drop
    the dense and temporal contact terms. The first round starts from the
    lowest-energy point among the iterate and the candidates, each scored
    with correspondences of its own.

    Returns:
        vector: (np.array) Final parameter vector.
        inputs: (RgbdpInputs) Inputs of the last round.
        iterations: (int) Total optimizer iterations.
        status: (str) 'ok' or 'non-finite'.
    """
    stage_config = config.stages[stage]
    iterations = 0
    status = 'ok'
    inputs = None

    for i, cap in enumerate(config.cap_schedule(stage)):
        kwargs = inputs_kwargs if i >= stage_config.contact_free_rounds \
            else _contact_free(inputs_kwargs)

        if i == 0:
            starts = [vector] + [c for c in candidates if c is not None]
            values = [
                total_rgbdp(x, _rgbdp_inputs(model, frame, x, cap, **kwargs), weights)[0]
                for x in starts]
            best = int(np.argmin(values))
            if best:
                log.debug('Starting from candidate %d (%g < %g)', best, values[best], values[0])
            vector = starts[best]

        inputs = _rgbdp_inputs(model, frame, vector, cap, **kwargs)

        def objective(x):
            return total_rgbdp(x, inputs, weights)

        result = minimize(objective, vector, stage_config.optimizer, project=project)
        iterations += result.iterations
        vector = result.x

        if result.status == 'non-finite':
            status = 'non-finite'
            break

    return vector, inputs, iterations, status


def fit_shape(sequence, model, weights, config=None, prior=None):
    """
    Recover the subject's blend and shape from the first standing frame with
    depth. Pose stays at the A-pose; blend, shape and translation are free.

    Inputs:
        sequence: (SequenceInput) Sequence whose standing segment is an A-pose.
        model: (BodyModel) Adult/child body model.
        weights: (EnergyWeights) Term weights.
        config: (PipelineConfig, optional) Stage settings.
        prior: (GmmPosePrior, optional) Pose prior.

    Returns:
        alpha: (float) Blend in [0, 1].
        beta: (np.array) 10 shape values.
    """
    config = config or PipelineConfig()
    start, stop = sequence.standing_segment
    usable = [t for t in range(start, stop) if len(_cloud(sequence.frames[t]))]

    if not usable:
        raise PipelineError('shape fit refused: no depth in the standing segment {}'.format(
            sequence.standing_segment))

    t = usable[0]
    frame = sequence.frames[t]
    cloud = _cloud(frame)
    contact = sequence.pressure[t] if sequence.pressure is not None else None

    alpha = _alpha_from_height(model, cloud, sequence.floor)
    vector = BodyParams(theta=a_pose_theta(), alpha=alpha).to_vector()
    vector = _place_at_centroid(model, vector, cloud)

    log.info('Fitting shape on frame %d (%d cloud points), initial alpha %.3f',
             t, len(cloud), alpha)

    vector, _, iterations, _ = _run_outer(
        model, frame, vector, 'shape', config, weights, project=_clip_alpha,
        contact=contact, floor=sequence.floor, prior=prior)

    params = BodyParams.from_vector(vector)
    log.info('Shape fit: alpha %.3f, |beta| %.4f after %d iterations',
             params.alpha, np.linalg.norm(params.beta), iterations)

    return params.alpha, params.beta


def init_pose(frame, shape, model, weights, config=None, prior=None, contact=None, floor=None):
    """
    Fit pose, global rotation and translation at one frame with the shape
    frozen, starting from the rest pose placed at the cloud centroid.

    Inputs:
        frame: (ObservationFrame) Frame with a depth cloud.
        shape: (tuple) (alpha, beta).

    Returns:
        (BodyParams) Fitted parameters.
    """
    config = config or PipelineConfig()
    cloud = _cloud(frame)
    if len(cloud) == 0:
        raise PipelineError('pose initialization needs a depth cloud')

    alpha, beta = shape
    vector = BodyParams(beta=beta, alpha=alpha).to_vector()
    vector = _place_at_centroid(model, vector, cloud)

    vector, _, iterations, status = _run_outer(
        model, frame, vector, 'init', config, weights,
        contact=contact, floor=floor, prior=prior)

    log.info('Pose initialized after %d iterations (%s)', iterations, status)

    return BodyParams.from_vector(vector)


def _with_shape(params, shape):
    params = params.copy()
    params.alpha = float(shape[0])
    params.beta = np.array(shape[1], dtype=float)

    return params


def track_sequence(sequence, shape, init, model, weights, config=None, prior=None):
    """
    Fit every frame in order, warm-started from the previous accepted frame,
    with the temporal foot-plane term against that frame. With the stage's
    extrapolate flag the constant-velocity prediction from the two previous
    frames competes as a starting point. A frame whose optimization turns
    non-finite, or ends above the energy of its warm start, is flagged
    'non-converged' and takes the warm start (the previous parameters).

    Inputs:
        sequence: (SequenceInput) Observations with aligned dense contact.
        shape: (tuple) (alpha, beta).
        init: (BodyParams) Parameters of the first frame's initialization.
        model: (BodyModel) Body model.
        weights: (EnergyWeights) Term weights.
        config: (PipelineConfig, optional) Stage settings.
        prior: (GmmPosePrior, optional) Pose prior.

    Returns:
        (FitResult) One entry per frame.
    """
    config = config or PipelineConfig()
    planes = build_foot_planes(model.shaped_template(shape[0], shape[1]))

    extrapolate = config.stages['track'].extrapolate

    params_out, energies, diagnostics = [], [], []
    prev_params = None
    prev_contact = None

    for t, frame in enumerate(sequence.frames):
        contact = sequence.pressure[t] if sequence.pressure is not None else None
        start = _with_shape(init if prev_params is None else prev_params, shape).to_vector()

        candidates = ()
        if extrapolate and t >= 2:
            candidates = (2.0 * start - params_out[-2].to_vector(),)

        vector, inputs, iterations, status = _run_outer(
            model, frame, start, 'track', config, weights, candidates=candidates,
            contact=contact, floor=sequence.floor, prior=prior,
            prev_params=prev_params, prev_contact=prev_contact, planes=planes)

        initial_energy = total_rgbdp(start, inputs, weights)[0]
        final_energy = total_rgbdp(vector, inputs, weights)[0]

        if status == 'non-finite' or not np.isfinite(final_energy) \
                or final_energy > initial_energy:
            log.warning('Frame %d did not converge (%s, energy %g -> %g), '
                        'carrying the previous parameters',
                        t, status, initial_energy, final_energy)
            status = 'non-converged'
            vector = start
        else:
            status = 'ok'

        params = BodyParams.from_vector(vector)
        energy = rgbdp_breakdown(params, inputs)
        energy['total'] = total_rgbdp(params, inputs, weights)[0]

        log.debug('Frame %d: energy %g -> %g in %d iterations',
                  t, initial_energy, energy['total'], iterations)

        params_out.append(params)
        energies.append(energy)
        diagnostics.append({
            'status': status, 'iterations': iterations, 'initial_energy': initial_energy})

        prev_params = params
        prev_contact = contact

    log.info('Tracked %d frames, %d flagged', len(params_out),
             sum(d['status'] != 'ok' for d in diagnostics))

    return FitResult(params_out, energies, diagnostics)


def run_rgbdp(sequence, model, weights, config=None, prior=None):
    """
    Shape fit, pose initialization at the first frame and tracking.

    Returns:
        result: (FitResult) Tracking result.
        shape: (tuple) (alpha, beta).
    """
    config = config or PipelineConfig()
    shape = fit_shape(sequence, model, weights, config, prior)

    t0 = 0
    contact = sequence.pressure[t0] if sequence.pressure is not None else None
    init = init_pose(
        sequence.frames[t0], shape, model, weights, config, prior,
        contact=contact, floor=sequence.floor)

    return track_sequence(sequence, shape, init, model, weights, config, prior), shape


def build_ground_anchors(frame, contacted_foot_keypoints, radius=ANCHOR_RADIUS):
    """
    3D anchor of each contacted foot keypoint: the coordinate-wise median of
    the cloud points projecting within 'radius' pixels of the keypoint.

    Inputs:
        frame: (ObservationFrame) Frame with keypoints and cloud.
        contacted_foot_keypoints: (list) Keypoint indices.
        radius: (float, optional) Pixel radius.

    Returns:
        (OrderedDict) Keypoint index to 3D point. Keypoints without cloud
            points in range are left out.
    """
    anchors = OrderedDict()
    keypoints = list(contacted_foot_keypoints)
    if not keypoints:
        return anchors

    cloud = _cloud(frame)
    if len(cloud) == 0:
        log.warning('No depth cloud at t=%.3f, skipping %d ground anchors',
                    frame.timestamp, len(keypoints))
        return anchors

    uv, valid = project(cloud, frame.cam)

    for k in keypoints:
        target = np.asarray(frame.keypoints2d.positions[k], dtype=float)
        distance = np.linalg.norm(uv - target, axis=1)
        near = valid & (distance <= radius)

        if not np.any(near):
            log.warning('No cloud points within %.1f px of keypoint %d, skipping', radius, k)
            continue

        anchors[int(k)] = np.median(cloud[near], axis=0)

    return anchors


def foot_joint_assignment(template=None):
    """
    Foot joint of every foot vertex, as an index into FOOT_JOINTS.
    With a template the joint is the foot joint with the largest skinning
    weight; without one the heel half of each sole goes to the ankle and the
    toe half to the toe joint.

    Returns:
        (np.array) 192 indices in [0, 4).
    """
    if template is not None:
        weights = template.skinning_weights[template.foot_vertex_ids][:, FOOT_JOINTS]
        return np.argmax(weights, axis=1)

    rows = np.repeat(np.arange(SOLE_LENGTH_SAMPLES), SOLE_WIDTH_SAMPLES)
    toe = (rows >= SOLE_LENGTH_SAMPLES // 2).astype(int)

    # FOOT_JOINTS is (left ankle, left toe, right ankle, right toe)
    return np.concatenate([toe, 2 + toe])


def derive_joint_contact(dense, template=None, fraction=JOINT_CONTACT_FRACTION):
    """
    A foot joint is in contact when at least 'fraction' of its foot vertices
    are labeled in contact.

    Inputs:
        dense: (DenseContact or FppPrediction) Dense contact.
        template: (BodyTemplate, optional) Template for the vertex assignment.

    Returns:
        (np.array) 4 booleans in FOOT_JOINTS order.
    """
    if isinstance(dense, FppPrediction):
        labels = np.asarray(dense.contact_prob) >= CONTACT_THRESHOLD
    else:
        labels = np.asarray(dense.labels) == 1

    assignment = foot_joint_assignment(template)
    flags = np.zeros(len(FOOT_JOINTS), dtype=bool)

    for j in range(len(FOOT_JOINTS)):
        members = assignment == j
        flags[j] = labels[members].sum() >= fraction * members.sum()

    return flags


def average_shape(init_poses):
    """
    Mean shape over the frames that have an initial estimate.
    """
    betas = [p.beta for p in init_poses if p is not None]
    if not betas:
        raise PipelineError('no initial pose estimates to average the shape from')

    return np.mean(betas, axis=0)


def vp_optimize(sequence, init_poses, contacts, model, weights, config=None, alpha=None,
                template=None):
    """
    Refine per-frame initial poses with reprojection, pose mimicry, depth
    ground anchors of the contacted foot joints and foot consistency with
    the previous accepted frame. Pose and translation are free; rotation,
    shape and blend are frozen.

    Inputs:
        sequence: (SequenceInput) Observations.
        init_poses: (list) BodyParams per frame, None where the estimate is missing.
        contacts: (list) FppPrediction or DenseContact per frame, or None.
        model: (BodyModel) Body model.
        weights: (EnergyWeights) Term weights.
        config: (PipelineConfig, optional) Stage settings.
        alpha: (float, optional) Blend. Defaults to the mean of the estimates.
        template: (BodyTemplate, optional) Template for the joint contact assignment.

    Returns:
        (FitResult) One entry per frame.
    """
    config = config or PipelineConfig()
    if len(init_poses) != len(sequence):
        raise PipelineError('{} initial poses for {} frames'.format(len(init_poses), len(sequence)))
    if contacts is not None and len(contacts) != len(sequence):
        raise PipelineError('{} contact frames for {} frames'.format(len(contacts), len(sequence)))

    beta = average_shape(init_poses)
    available = [p for p in init_poses if p is not None]
    if alpha is None:
        alpha = float(np.mean([p.alpha for p in available]))

    stage = config.stages['vp']
    params_out, energies, diagnostics = [], [], []
    prev_params = None
    prev_joints = set()

    for t, frame in enumerate(sequence.frames):
        init = init_poses[t]

        if init is None:
            log.warning('Frame %d has no initial pose, skipping', t)
            carried = prev_params if prev_params is not None else \
                BodyParams(available[0].theta, beta, available[0].R, available[0].T, alpha)
            params_out.append(carried)
            energies.append({term: 0.0 for term in ENERGY_TERMS + ['total']})
            diagnostics.append({'status': 'skipped', 'iterations': 0, 'initial_energy': 0.0})
            continue

        start = BodyParams(init.theta, beta, init.R, init.T, alpha).to_vector()

        flags = np.zeros(len(FOOT_JOINTS), dtype=bool)
        if contacts is not None and contacts[t] is not None:
            flags = derive_joint_contact(contacts[t], template)

        anchors = OrderedDict()
        if weights.lambda_3d > 0 and np.any(flags):
            keypoint_anchors = build_ground_anchors(frame, FOOT_KEYPOINTS[flags])
            for k, point in keypoint_anchors.items():
                anchors[int(KEYPOINT_JOINTS[k])] = point

        contacted = set(int(j) for j in FOOT_JOINTS[flags])
        consistency = sorted(contacted & prev_joints)

        inputs = VpInputs(
            model=model, cam=frame.cam, keypoints=frame.keypoints2d.positions,
            confidences=frame.keypoints2d.confidences, theta_init=init.theta,
            ground_points=anchors, prev_params=prev_params,
            consistency_joint_ids=consistency)

        def objective(x):
            return total_vp(x, inputs, weights)

        initial_energy = objective(start)[0]
        result = minimize(objective, start, stage.optimizer)

        status = 'ok'
        vector = result.x
        if result.status == 'non-finite':
            log.warning('Frame %d did not converge, carrying the previous parameters', t)
            status = 'non-converged'
            vector = prev_params.to_vector() if prev_params is not None else start

        params = BodyParams.from_vector(vector)
        energy = vp_breakdown(params, inputs)
        energy['total'] = objective(vector)[0]

        log.debug('Frame %d: %d anchors, %d consistency joints, energy %g -> %g',
                  t, len(anchors), len(consistency), initial_energy, energy['total'])

        params_out.append(params)
        energies.append(energy)
        diagnostics.append({
            'status': status, 'iterations': result.iterations, 'initial_energy': initial_energy})

        prev_params = params
        prev_joints = contacted

    log.info('VP-MoCap optimized %d frames, %d skipped', len(params_out),
             sum(d['status'] == 'skipped' for d in diagnostics))

    return FitResult(params_out, energies, diagnostics)


def initial_pose_dataframe(init_poses):
    """
    Table of per-frame initial estimates, empty rows for missing frames.
    """
    s = block_slices()
    columns = []
    for block, index in s.items():
        columns += ['{}_{}'.format(block, i) for i in range(index.stop - index.start)]

    rows = [p.to_vector() if p is not None else np.full(len(columns), np.nan) for p in init_poses]
    df = pd.DataFrame(np.array(rows), columns=columns)
    df.insert(0, 'frame', np.arange(len(init_poses)))

    return df


def initial_poses_from_dataframe(df):
    vectors = df.drop(columns='frame').to_numpy(dtype=float)

    return [None if np.any(np.isnan(v)) else BodyParams.from_vector(v) for v in vectors]
