"""
Description:
    Tests of the parametric body: parameter layout, templates, forward pass,
    camera and foot planes.

To-do:
"""
# third party imports
import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

# local imports
from managers.body_model import (
    ALL_BLOCKS, BodyModel, BodyModelError, BodyParams, Camera, N_FOOT_VERTICES,
    N_FOOT_VERTICES_PER_FOOT, N_PARAMS, REST_JOINTS, TopologyError, active_index,
    blend_template, block_slices, build_foot_planes, check_topology, forward,
    load_or_build_templates, load_template, project, rodrigues, save_template, unproject)


def _random_params(seed):
    rng = np.random.RandomState(seed)
    return BodyParams(
        theta=0.2 * rng.randn(72), beta=0.5 * rng.randn(10), R=0.1 * rng.randn(3),
        T=np.array([0.1, -0.2, 4.0]) + 0.1 * rng.randn(3), alpha=rng.uniform())


def test_parameter_vector_layout():
    slices = block_slices()

    assert N_PARAMS == 89
    assert list(slices) == list(ALL_BLOCKS)
    assert slices['theta'] == slice(0, 72)
    assert slices['beta'] == slice(72, 82)
    assert slices['R'] == slice(82, 85)
    assert slices['T'] == slice(85, 88)
    assert slices['alpha'] == slice(88, 89)


def test_active_index_follows_block_order():
    index = active_index(('T', 'theta'))

    assert np.array_equal(index, np.concatenate([np.arange(72), np.arange(85, 88)]))
    assert active_index(()).size == 0

    with pytest.raises(BodyModelError):
        active_index(('theta', 'gamma'))


def test_params_survive_the_flat_vector():
    params = _random_params(0)
    back = BodyParams.from_vector(params.to_vector())

    assert np.array_equal(back.to_vector(), params.to_vector())
    assert back.alpha == params.alpha


def test_params_validation():
    with pytest.raises(BodyModelError):
        BodyParams(alpha=1.5).validate()
    with pytest.raises(BodyModelError):
        BodyParams(theta=np.zeros(71)).validate()
    with pytest.raises(BodyModelError):
        BodyParams(T=[0.0, np.nan, 0.0]).validate()
    with pytest.raises(BodyModelError):
        BodyParams.from_vector(np.zeros(N_PARAMS - 1))


def test_camera_rejects_bad_focal_length():
    with pytest.raises(BodyModelError):
        Camera(fx=0.0)
    with pytest.raises(BodyModelError):
        Camera(fy=-500.0)

    assert Camera() == Camera(500.0, 500.0, 250.0, 250.0)


def test_generic_templates_share_topology(adult, child):
    check_topology(adult, child)

    assert adult.foot_vertex_ids.size == N_FOOT_VERTICES
    assert np.unique(adult.foot_vertex_ids).size == N_FOOT_VERTICES
    assert np.allclose(adult.skinning_weights.sum(axis=1), 1.0)

    # soles on the floor, child shorter than the adult
    assert np.allclose(adult.vertices[adult.foot_vertex_ids, 1], 0.0)
    assert np.allclose(child.vertices[child.foot_vertex_ids, 1], 0.0)
    assert np.ptp(child.vertices[:, 1]) < np.ptp(adult.vertices[:, 1])


def test_topology_mismatch_is_rejected(adult, child):
    smaller = child.copy(vertices=child.vertices[:-1])

    with pytest.raises(TopologyError):
        check_topology(adult, smaller)
    with pytest.raises(TopologyError):
        BodyModel(adult, smaller)


def test_rest_pose_reproduces_rest_joints(model):
    _, joints = model.forward(BodyParams(alpha=1.0))

    assert np.allclose(joints, REST_JOINTS, atol=1e-10)


def test_alpha_blends_adult_and_child(model, adult, child):
    v_child, _ = model.forward(BodyParams(alpha=0.0))
    v_adult, _ = model.forward(BodyParams(alpha=1.0))
    v_half, _ = model.forward(BodyParams(alpha=0.5))

    assert np.allclose(v_child, child.vertices)
    assert np.allclose(v_adult, adult.vertices)
    assert np.allclose(v_half, 0.5 * (adult.vertices + child.vertices))
    assert np.allclose(blend_template(adult, child, 0.5).vertices, v_half)


def test_single_template_ignores_alpha(adult):
    params = _random_params(1)
    v1, _ = forward(adult, params)
    params.alpha = 0.0
    v0, _ = forward(adult, params)

    assert np.allclose(v0, v1)


def test_translation_and_root_rotation(model):
    base = _random_params(2)
    v0, j0 = model.forward(base)

    moved = base.copy()
    moved.T = moved.T + np.array([0.3, -0.1, 0.5])
    v1, j1 = model.forward(moved)

    assert np.allclose(v1 - v0, [0.3, -0.1, 0.5])
    assert np.allclose(j1 - j0, [0.3, -0.1, 0.5])

    # the global rotation pivots on the rest root joint
    turned = BodyParams(R=[0.0, np.pi / 2, 0.0])
    _, joints = model.forward(turned)
    assert np.allclose(joints[0], REST_JOINTS[0])
    assert np.allclose(joints[1], [0.0, 0.87, 0.09], atol=1e-10)


def test_forward_rejects_non_finite(model):
    vector = np.zeros(N_PARAMS)
    vector[3] = np.inf

    with pytest.raises(BodyModelError):
        model.forward(vector)


def test_rodrigues_matches_scipy():
    rng = np.random.RandomState(3)
    rotvecs = np.vstack([rng.randn(5, 3), np.zeros((1, 3)), [[1e-6, 0.0, 0.0]]])

    ours = rodrigues(torch.as_tensor(rotvecs)).numpy()

    assert np.allclose(ours, Rotation.from_rotvec(rotvecs).as_matrix(), atol=1e-12)


def test_rodrigues_gradient_is_finite_at_zero():
    x = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    rodrigues(x).sum().backward()

    assert torch.all(torch.isfinite(x.grad))


def test_projection_and_back(cam):
    points = np.array([[0.1, -0.4, 3.0], [-0.5, 0.2, 6.0], [0.0, 0.0, -1.0]])
    uv, valid = project(points, cam)

    assert valid.tolist() == [True, True, False]
    assert np.all(np.isnan(uv[2]))
    assert np.allclose(uv[0], [500.0 * 0.1 / 3.0 + 250.0, 500.0 * -0.4 / 3.0 + 250.0])
    assert np.allclose(unproject(uv[:2], points[:2, 2], cam), points[:2])


def test_foot_planes_split_each_sole(adult):
    planes = build_foot_planes(adult)

    assert planes.plane_points.shape == (N_FOOT_VERTICES, 3)
    assert np.all(planes.plane_points[:, 1] == 0.0)
    assert np.array_equal(planes.association_map, np.arange(N_FOOT_VERTICES))

    for side, first in (('left', 0), ('right', N_FOOT_VERTICES_PER_FOOT)):
        anterior = planes.segments[side + '_anterior']
        posterior = planes.segments[side + '_posterior']

        assert anterior.size == posterior.size == N_FOOT_VERTICES_PER_FOOT // 2
        assert np.array_equal(
            np.sort(np.concatenate([anterior, posterior])),
            np.arange(first, first + N_FOOT_VERTICES_PER_FOOT))
        # toes point to -z
        assert planes.plane_points[anterior, 2].max() < planes.plane_points[posterior, 2].min()


def test_template_file_round_trip(adult, tmp_path):
    filepath = str(tmp_path / 'adult.bin')
    save_template(adult, filepath)
    loaded = load_template(filepath)

    for name in ('vertices', 'faces', 'joint_regressor', 'skinning_weights',
                 'foot_vertex_ids', 'parents', 'shape_dirs'):
        assert np.array_equal(getattr(loaded, name), getattr(adult, name))


def test_templates_are_cached(tmp_path):
    adult_fp = str(tmp_path / 'templates' / 'adult.bin')
    child_fp = str(tmp_path / 'templates' / 'child.bin')

    built = load_or_build_templates(adult_fp, child_fp)
    cached = load_or_build_templates(adult_fp, child_fp)

    assert (tmp_path / 'templates' / 'adult.bin').is_file()
    assert np.array_equal(built[1].vertices, cached[1].vertices)
