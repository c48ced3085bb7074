"""
Description:
    Tests of the sequence containers, the stage settings, the fit results
    and both fitting procedures.

To-do:
"""
# standard imports
import time

# third party imports
import numpy as np
import pytest

# local imports
from managers.body_model import (
    BodyParams, Camera, FOOT_KEYPOINTS, N_FOOT_VERTICES, block_slices)
from managers.energy import EnergyWeights
from managers.fpp_net import KeypointFrame2D
from managers.metrics import contact_slide, mpjpe, traj
from managers.optimizer import MinimizeResult, OptimizerConfig
from managers.pipelines import (
    ENERGY_COLUMNS, FitResult, PipelineConfig, PipelineError, SequenceInput, StageConfig,
    average_shape, build_ground_anchors, derive_joint_contact, fit_shape,
    foot_joint_assignment, init_pose, initial_pose_dataframe, initial_poses_from_dataframe,
    make_observation_frame, run_rgbdp, track_sequence, vp_optimize)
from managers.pressure_contact import DenseContact
from managers.synth_oracle import (
    MotionScript, NoiseSpec, initial_pose_stub, synthesize_sequence)
from utils.config_parser import ConfigError, ConfigParser


def _keypoints(positions=None):
    positions = np.zeros((17, 2)) if positions is None else positions
    return KeypointFrame2D(positions, np.ones(17))


def _short_config(iterations=5, outer=1):
    stages = {}
    for stage, mask in [('shape', ('alpha', 'beta', 'T')), ('init', ('theta', 'R', 'T')),
                        ('track', ('theta', 'T')), ('vp', ('theta', 'T'))]:
        optimizer = OptimizerConfig(step_size=5e-3, max_iterations=iterations,
                                    parameter_mask=mask)
        stages[stage] = StageConfig(optimizer, outer, (1.0,))

    return PipelineConfig(stages)


def _without_clouds(sequence):
    frames = [f._replace(depth_cloud=np.zeros((0, 3))) for f in sequence.frames]
    return SequenceInput(frames, None, sequence.standing_segment, sequence.subject)


def test_observation_frame_validation():
    frame = make_observation_frame(_keypoints(), [], Camera(), 0.5)

    assert frame.depth_cloud.shape == (0, 3)
    assert frame.timestamp == 0.5

    with pytest.raises(PipelineError):
        make_observation_frame(_keypoints(), [[0.0, 0.0, -1.0]], Camera(), 0.0)
    with pytest.raises(PipelineError):
        make_observation_frame(_keypoints(), [[0.0, np.nan, 1.0]], Camera(), 0.0)
    with pytest.raises(PipelineError):
        make_observation_frame(_keypoints(), [], Camera(), np.inf)


def test_sequence_validation():
    frames = [make_observation_frame(_keypoints(), [], Camera(), t) for t in (0.0, 0.1, 0.1)]

    with pytest.raises(PipelineError):
        SequenceInput(frames)

    frames = frames[:2]
    contact = DenseContact(np.full(N_FOOT_VERTICES, 0.5), np.zeros(N_FOOT_VERTICES, dtype=int))
    with pytest.raises(PipelineError):
        SequenceInput(frames, pressure=[contact])
    with pytest.raises(PipelineError):
        SequenceInput(frames, standing_segment=(1, 3))

    assert len(SequenceInput(frames, pressure=[contact, contact])) == 2


def test_sequence_truncate(walk_sequence):
    head = walk_sequence.truncate(5)

    assert len(head) == 5
    assert head.standing_segment == (0, 5)
    assert len(head.raw_pressure) == len(head.gt.params) == len(head.gt.contacts) == 5
    assert head.frames[4] is walk_sequence.frames[4]

    with_contact = head.with_pressure(head.gt.contacts)
    assert with_contact.pressure is not None
    assert with_contact.subject == 'walk'


def test_cap_schedule():
    config = PipelineConfig()

    assert config.cap_schedule('init') == pytest.approx([0.4, 0.2, 0.1, 0.05, 0.05])
    assert config.cap_schedule('track') == pytest.approx([0.2, 0.1, 0.05, 0.05, 0.05, 0.05])
    assert config.cap_schedule('vp') == pytest.approx([0.05])
    assert PipelineConfig(depth_cap=None).cap_schedule('shape') == [None] * 4

    padded = PipelineConfig({'track': StageConfig(OptimizerConfig(), 3, (2.0,))})
    assert padded.cap_schedule('track') == pytest.approx([0.1, 0.1, 0.1])


def test_stage_settings_from_ini(tmp_path):
    filepath = str(tmp_path / 'pipeline.ini')
    with open(filepath, 'w') as fid:
        fid.write('[track]\nmax_iterations = 7\nouter_iterations = 3\n'
                  'depth_cap_scales = 2, 1\n')

    config = PipelineConfig.from_config(ConfigParser(filepath))
    track = config.stages['track']

    assert track.optimizer.max_iterations == 7
    assert track.optimizer.step_size == 5e-3
    assert track.optimizer.parameter_mask == ('theta', 'T')
    assert track.outer_iterations == 3
    assert track.depth_cap_scales == (2.0, 1.0)
    assert track.contact_free_rounds == 2
    assert track.extrapolate
    assert config.stages['init'] is PipelineConfig.DEFAULT_STAGES['init']

    with open(filepath, 'w') as fid:
        fid.write('[track]\nouter_iterations = 3\ncontact_free_rounds = 1\nextrapolate = false\n'
                  '[shape]\npatience = 0\n')
    config = PipelineConfig.from_config(ConfigParser(filepath))
    assert config.stages['track'].contact_free_rounds == 1
    assert not config.stages['track'].extrapolate
    assert config.stages['shape'].optimizer.patience == 0
    assert config.stages['shape'].contact_free_rounds == 0

    with open(filepath, 'w') as fid:
        fid.write('[track]\nouter_iterations = 2\ncontact_free_rounds = 2\n')
    with pytest.raises(PipelineError):
        PipelineConfig.from_config(ConfigParser(filepath))

    with open(filepath, 'w') as fid:
        fid.write('[vp]\nlearning_rate = 0.1\n')
    with pytest.raises(ConfigError):
        PipelineConfig.from_config(ConfigParser(filepath))


def test_fit_result_round_trip(tmp_path, walk_sequence):
    params = walk_sequence.gt.params[:3]
    energies = [{'depth': 0.1 * t, '2d': 2.0, 'total': 1.0 + t} for t in range(3)]
    diagnostics = [
        {'status': 'ok', 'iterations': 10, 'initial_energy': 5.0},
        {'status': 'non-converged', 'iterations': 3, 'initial_energy': 4.0},
        {'status': 'skipped', 'iterations': 0, 'initial_energy': 0.0}]
    result = FitResult(params, energies, diagnostics)

    prefix = str(tmp_path / 'walk')
    result.save(prefix)
    loaded = FitResult.load(prefix)

    _, energy_df = result.to_dataframes()
    assert list(energy_df.columns) == ENERGY_COLUMNS

    assert len(loaded) == 3
    for a, b in zip(loaded.params, params):
        assert np.array_equal(a.to_vector(), b.to_vector())
    assert loaded.diagnostics == diagnostics
    assert loaded.energies[2]['depth'] == pytest.approx(0.2)
    assert loaded.energies[0]['C_dense'] == 0.0

    with pytest.raises(PipelineError):
        FitResult(params, energies[:2], diagnostics)


def test_initial_pose_table_keeps_gaps(walk_sequence):
    poses = [walk_sequence.gt.params[0], None, walk_sequence.gt.params[2]]

    df = initial_pose_dataframe(poses)
    back = initial_poses_from_dataframe(df)

    assert df['frame'].tolist() == [0, 1, 2]
    assert back[1] is None
    assert np.array_equal(back[2].to_vector(), poses[2].to_vector())


def test_ground_anchors_take_the_median():
    cam = Camera()
    cloud = np.array([
        [0.0, 0.5, 2.0], [0.002, 0.5, 2.0], [0.0, 0.502, 2.1], [0.5, 0.5, 2.0]])
    positions = np.zeros((17, 2))
    positions[12] = [250.0, 375.0]
    positions[13] = [10.0, 10.0]
    frame = make_observation_frame(_keypoints(positions), cloud, cam, 0.0)

    anchors = build_ground_anchors(frame, [12, 13])

    assert list(anchors) == [12]
    assert np.allclose(anchors[12], [0.0, 0.5, 2.0])

    empty = make_observation_frame(_keypoints(positions), [], cam, 0.0)
    assert build_ground_anchors(empty, [12]) == {}
    assert build_ground_anchors(frame, []) == {}


def test_foot_joint_assignment(adult):
    from_grid = foot_joint_assignment()
    from_template = foot_joint_assignment(adult)

    assert np.array_equal(from_grid, from_template)
    assert np.bincount(from_grid).tolist() == [48, 48, 48, 48]


def test_joint_contact_from_dense_labels(adult):
    assignment = foot_joint_assignment(adult)
    labels = np.zeros(N_FOOT_VERTICES, dtype=int)
    labels[assignment == 0] = 1
    labels[np.flatnonzero(assignment == 3)[:12]] = 1
    labels[np.flatnonzero(assignment == 1)[:11]] = 1

    flags = derive_joint_contact(DenseContact(np.full(N_FOOT_VERTICES, 0.5), labels), adult)

    # a quarter of the vertices is enough
    assert flags.tolist() == [True, False, False, True]
    assert FOOT_KEYPOINTS[flags].tolist() == [12, 15]


def test_average_shape():
    poses = [BodyParams(beta=np.ones(10)), None, BodyParams(beta=3.0 * np.ones(10))]

    assert np.allclose(average_shape(poses), 2.0)
    with pytest.raises(PipelineError):
        average_shape([None, None])


def test_stages_refuse_missing_depth(walk_sequence, model):
    blind = _without_clouds(walk_sequence)

    with pytest.raises(PipelineError):
        fit_shape(blind, model, EnergyWeights())
    with pytest.raises(PipelineError):
        init_pose(blind.frames[0], (1.0, np.zeros(10)), model, EnergyWeights())


def test_vp_carries_frames_without_estimates(walk_sequence, model):
    sequence = walk_sequence.truncate(4)
    gt = sequence.gt.params
    init = [None, gt[1], None, gt[3]]

    result = vp_optimize(sequence, init, sequence.gt.contacts, model, EnergyWeights(),
                         _short_config(), template=model.adult)

    statuses = [d['status'] for d in result.diagnostics]
    assert statuses == ['skipped', 'ok', 'skipped', 'ok']
    assert np.array_equal(result.params[0].theta, gt[1].theta)
    assert np.array_equal(result.params[2].to_vector(), result.params[1].to_vector())

    with pytest.raises(PipelineError):
        vp_optimize(sequence, init[:3], None, model, EnergyWeights())


@pytest.mark.slow
def test_vp_never_raises_the_energy(walk_sequence, model):
    sequence = walk_sequence.truncate(12)
    init = initial_pose_stub(sequence.gt.params, NoiseSpec(pose_sigma=0.05, seed=3))

    result = vp_optimize(sequence, init, sequence.gt.contacts, model, EnergyWeights(),
                         _short_config(iterations=30), template=model.adult)

    for energy, diagnostic in zip(result.energies, result.diagnostics):
        assert diagnostic['status'] == 'ok'
        assert energy['total'] <= diagnostic['initial_energy'] + 1e-9


def _frame_errors(result, gt, model):
    pred_joints = result.joints(model)
    gt_joints = np.stack([model.forward(p)[1] for p in gt])

    return np.array([mpjpe(p, g) for p, g in zip(pred_joints, gt_joints)])


def test_tracking_carries_frames_that_do_not_improve(walk_sequence, model, monkeypatch):
    sequence = walk_sequence.truncate(4).with_pressure(walk_sequence.gt.contacts[:4])
    gt = sequence.gt.params
    shape = (gt[0].alpha, gt[0].beta)
    calls = []

    def diverging(objective, init, config, project=None):
        calls.append(1)
        x = np.array(init, dtype=float)
        x[block_slices()['theta']] += 0.3
        return MinimizeResult(x, objective(x)[0], [], [], 'max_iterations', config.max_iterations)

    monkeypatch.setattr('managers.pipelines.minimize', diverging)
    result = track_sequence(sequence, shape, gt[1], model, EnergyWeights(), _short_config())

    assert len(calls) == 4
    assert [d['status'] for d in result.diagnostics] == ['non-converged'] * 4
    for params, energy, diagnostic in zip(result.params, result.energies, result.diagnostics):
        assert np.array_equal(params.theta, gt[1].theta)
        assert np.array_equal(params.T, gt[1].T)
        assert energy['total'] == pytest.approx(diagnostic['initial_energy'])


def test_tracking_starts_from_the_extrapolated_pose(walk_sequence, model, monkeypatch):
    frames = slice(20, 23)
    gt = walk_sequence.gt.params[frames]
    sequence = SequenceInput(
        walk_sequence.frames[frames], walk_sequence.gt.contacts[frames], floor=walk_sequence.floor)
    shape = (gt[0].alpha, gt[0].beta)
    starts = []

    # an optimizer that lands on the true pose of each frame
    def exact(objective, init, config, project=None):
        starts.append(np.array(init, dtype=float))
        x = gt[len(starts) - 1].to_vector()
        return MinimizeResult(x, objective(x)[0], [], [], 'converged', 1)

    monkeypatch.setattr('managers.pipelines.minimize', exact)
    config = PipelineConfig({'track': StageConfig(
        OptimizerConfig(parameter_mask=('theta', 'T')), 1, (1.0,), 0, True)})
    keypoints_only = EnergyWeights(
        lambda_depth=0.0, lambda_C_dense=0.0, lambda_C_temp=0.0, lambda_2d=1.0)

    result = track_sequence(sequence, shape, gt[0], model, keypoints_only, config)

    assert [d['status'] for d in result.diagnostics] == ['ok'] * 3
    assert np.allclose(starts[1], gt[0].to_vector())
    assert np.allclose(starts[2], 2.0 * gt[1].to_vector() - gt[0].to_vector())


@pytest.mark.slow
def test_tracking_follows_a_noise_free_walk(walk_sequence, model, pose_prior):
    sequence = walk_sequence.with_pressure(walk_sequence.gt.contacts)
    gt = sequence.gt.params
    shape = (gt[0].alpha, gt[0].beta)

    result = track_sequence(sequence, shape, gt[0], model, EnergyWeights(), prior=pose_prior)
    errors = _frame_errors(result, gt, model)

    assert len(result) == len(sequence)
    assert errors.mean() <= 15.0
    assert errors.max() <= 15.0
    for energy, diagnostic in zip(result.energies, result.diagnostics):
        assert energy['total'] <= diagnostic['initial_energy']


@pytest.mark.slow
def test_temporal_contact_term_keeps_the_feet_planted(walk_sequence, model, pose_prior):
    sequence = walk_sequence.with_pressure(walk_sequence.gt.contacts)
    gt = sequence.gt.params
    shape = (gt[0].alpha, gt[0].beta)
    foot_ids = model.foot_vertex_ids

    slides = []
    for weights in (EnergyWeights(), EnergyWeights(lambda_C_temp=0.0)):
        result = track_sequence(sequence, shape, gt[0], model, weights, prior=pose_prior)
        slides.append(contact_slide(result.vertices(model), sequence.gt.contacts, foot_ids))

    assert slides[1] >= 1.2 * slides[0]


@pytest.mark.slow
def test_shape_fit_recovers_blend_and_shape(model, cam, floor, sensor_map, walk_sequence):
    beta = np.zeros(10)
    beta[:3] = [0.5, -0.3, 0.2]
    script = MotionScript('walk', duration=0.4, standing_duration=0.3, alpha=0.7, beta=beta)
    sequence = synthesize_sequence(script, model, cam, NoiseSpec(), floor, sensor_map)

    alpha, fitted = fit_shape(sequence.with_pressure(sequence.gt.contacts), model, EnergyWeights())

    assert abs(alpha - 0.7) <= 0.05
    assert np.max(np.abs(fitted - beta)) <= 0.1

    adult_alpha, _ = fit_shape(walk_sequence.with_pressure(walk_sequence.gt.contacts),
                               model, EnergyWeights())
    assert adult_alpha >= 0.95


@pytest.mark.slow
def test_pose_initialization_error(child_walk_sequence, model, pose_prior):
    sequence = child_walk_sequence
    gt = sequence.gt.params[0]

    params = init_pose(
        sequence.frames[0], (gt.alpha, gt.beta), model, EnergyWeights(), prior=pose_prior,
        contact=sequence.gt.contacts[0], floor=sequence.floor)

    assert mpjpe(model.forward(params)[1], model.forward(gt)[1]) <= 20.0


@pytest.mark.slow
def test_rgbdp_recovers_a_smaller_subject(child_walk_sequence, model, pose_prior):
    sequence = child_walk_sequence.with_pressure(child_walk_sequence.gt.contacts)
    gt = sequence.gt.params
    foot_ids = model.foot_vertex_ids

    started = time.perf_counter()
    result, (alpha, _) = run_rgbdp(sequence, model, EnergyWeights(), prior=pose_prior)
    elapsed = time.perf_counter() - started

    assert len(result) == 60
    assert abs(alpha - 0.7) <= 0.05
    assert _frame_errors(result, gt, model).max() <= 15.0
    assert elapsed < 600.0

    for vertices, contact in zip(result.vertices(model), sequence.gt.contacts):
        touching = contact.labels == 1
        if np.any(touching):
            heights = np.abs(sequence.floor.height(vertices[foot_ids][touching]))
            assert heights.max() <= 0.005


@pytest.mark.slow
def test_ground_anchors_correct_depth_drift(model, cam, floor, sensor_map):
    script = MotionScript('walk', duration=2.0, standing_duration=0.3, alpha=0.7)
    sequence = synthesize_sequence(
        script, model, cam, NoiseSpec(keypoint_sigma=5.0, seed=7), floor, sensor_map)
    gt = sequence.gt.params
    init = initial_pose_stub(gt, NoiseSpec(drift=0.2))
    gt_pelvis = np.stack([model.forward(p)[1][0] for p in gt])

    errors = {}
    variants = {
        'full': EnergyWeights(),
        'no_consistency': EnergyWeights(lambda_t=0.0),
        'no_contact': EnergyWeights(lambda_3d=0.0, lambda_t=0.0)}
    for name, weights in variants.items():
        result = vp_optimize(sequence, init, sequence.gt.contacts, model, weights,
                             template=model.adult)
        errors[name] = traj(result.joints(model)[:, 0], gt_pelvis)

    init_pelvis = np.stack([model.forward(p)[1][0] for p in init])
    assert traj(init_pelvis, gt_pelvis) == pytest.approx(100.0, rel=0.05)
    assert errors['full'] <= errors['no_consistency'] <= errors['no_contact']
    assert errors['full'] < traj(init_pelvis, gt_pelvis)


@pytest.mark.slow
def test_rgbdp_runs_end_to_end(walk_sequence, model, tmp_path):
    sequence = walk_sequence.truncate(10).with_pressure(walk_sequence.gt.contacts[:10])

    result, (alpha, beta) = run_rgbdp(sequence, model, EnergyWeights(), _short_config())

    assert 0.0 <= alpha <= 1.0
    assert beta.shape == (10,)
    assert len(result) == 10
    assert all(d['status'] in ('ok', 'non-converged') for d in result.diagnostics)
    assert np.all(np.isfinite(result.joints(model)))

    result.save(str(tmp_path / 'rgbdp'))
    assert (tmp_path / 'rgbdp_params.csv').is_file()
