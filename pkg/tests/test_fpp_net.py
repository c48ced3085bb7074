"""
Description:
    Tests of FPP-Net on miniature widths: shapes, causality, loss and its
    gradient, windowing, training and checkpoints.

To-do:
"""
# standard imports
import time

# third party imports
import numpy as np
import pytest

# local imports
from managers.body_model import N_FOOT_VERTICES
from managers.fpp_net import (
    EpochLoss, FppConfig, FppError, FppPrediction, TrainingConfig, TrainingError,
    build_model, count_parameters, denormalize_keypoints, flat_parameters,
    forward_sequence, load_checkpoint, loss, loss_and_gradient, make_keypoint_frame,
    make_windows, normalize_keypoints, predict_sequence, save_checkpoint,
    set_flat_parameters, train)
from managers.metrics import contact_prf_iou
from managers.optimizer import check_gradient
from managers.pressure_contact import DenseContact

SMALL = FppConfig(conv_channels=4, feature_width=8, hidden_width=6)
WIDTH = 3 * 17


def _inputs(n_frames, seed):
    return np.random.RandomState(seed).uniform(-1.0, 1.0, (n_frames, WIDTH))


def _separable_sequence(n_frames, seed):
    """
    Every vertex is in contact exactly when the first input is positive.
    """
    x = _inputs(n_frames, seed)
    on = (x[:, 0] > 0).astype(float)
    labels = np.repeat(on[:, None], 192, axis=1)
    targets = 0.5 + 0.2 * labels

    return x, labels, targets


def _height_contact_sequence(n_frames, seed):
    """
    A foot touches exactly when its ankle keypoint sits low in the image.
    Ankle heights keep clear of the threshold.
    """
    rng = np.random.RandomState(seed)
    x = _inputs(n_frames, seed)
    labels = np.zeros((n_frames, N_FOOT_VERTICES))

    half = N_FOOT_VERTICES // 2
    for foot, keypoint in enumerate((12, 13)):
        low = rng.rand(n_frames) < 0.5
        height = rng.uniform(0.2, 1.0, n_frames)
        x[:, 17 + keypoint] = np.where(low, height, -height)
        labels[:, foot * half:(foot + 1) * half] = low[:, None]

    return x, labels, 0.5 + 0.2 * labels


def _dataset_loss(model, dataset):
    return np.mean([
        loss_and_gradient(model, x, labels, targets)[0] for x, labels, targets in dataset])


def test_config_validation():
    assert FppConfig().as_dict() == {
        'n_keypoints': 17, 'conv_channels': 32, 'kernel_size': 3, 'feature_width': 2048,
        'hidden_width': 484, 'n_vertices': 192}

    with pytest.raises(FppError):
        FppConfig(kernel_size=4)
    with pytest.raises(FppError):
        FppConfig(hidden_width=0)


def test_keypoint_normalization():
    frame = make_keypoint_frame(
        np.random.RandomState(0).uniform(0, 640, (17, 2)), np.linspace(0, 1, 17))
    vector = normalize_keypoints(frame, (640, 480))

    assert vector.shape == (WIDTH,)
    assert np.array_equal(vector[34:], frame.confidences)

    back = denormalize_keypoints(vector, (640, 480))
    assert np.allclose(back.positions, frame.positions)

    corner = make_keypoint_frame([[0.0, 0.0], [640.0, 480.0]], [1.0, 1.0])
    assert normalize_keypoints(corner, (640, 480)).tolist() == [-1.0, 1.0, -1.0, 1.0, 1.0, 1.0]


def test_keypoint_frame_validation():
    with pytest.raises(FppError):
        make_keypoint_frame(np.zeros((17, 2)), np.ones(16))
    with pytest.raises(FppError):
        make_keypoint_frame(np.zeros((2, 2)), [0.5, 1.5])
    with pytest.raises(FppError):
        make_keypoint_frame([[np.nan, 0.0]], [1.0])
    with pytest.raises(FppError):
        denormalize_keypoints(np.zeros(10))


def test_forward_shapes_and_ranges():
    model = build_model(SMALL, seed=0)
    predictions = forward_sequence(model, _inputs(5, 0))

    assert len(predictions) == 5
    for prediction in predictions:
        assert isinstance(prediction, FppPrediction)
        assert prediction.contact_prob.shape == prediction.pressure.shape == (192,)
        assert np.all((prediction.contact_prob > 0) & (prediction.contact_prob < 1))
        assert np.all(prediction.pressure >= 0)


def test_prediction_is_causal():
    model = build_model(SMALL, seed=1)
    x = _inputs(8, 1)
    changed = x.copy()
    changed[5:] = _inputs(3, 2)

    before = forward_sequence(model, x)
    after = forward_sequence(model, changed)

    for t in range(5):
        assert np.array_equal(before[t].contact_prob, after[t].contact_prob)
    assert not np.allclose(before[7].contact_prob, after[7].contact_prob)


def test_forward_rejects_bad_input():
    model = build_model(SMALL, seed=0)

    with pytest.raises(FppError):
        forward_sequence(model, np.zeros((0, WIDTH)))
    with pytest.raises(FppError):
        forward_sequence(model, np.zeros((4, WIDTH - 3)))


def test_predict_from_keypoint_frames():
    model = build_model(SMALL, seed=0)
    rng = np.random.RandomState(3)
    frames = [make_keypoint_frame(rng.uniform(0, 500, (17, 2)), np.ones(17)) for _ in range(4)]

    expected = forward_sequence(model, np.stack([normalize_keypoints(f) for f in frames]))
    predicted = predict_sequence(model, frames)

    assert np.array_equal(predicted[3].pressure, expected[3].pressure)


def test_seeded_initialization():
    a = flat_parameters(build_model(SMALL, seed=4))
    b = flat_parameters(build_model(SMALL, seed=4))
    c = flat_parameters(build_model(SMALL, seed=5))

    assert a.size == count_parameters(build_model(SMALL))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_frame_loss():
    contact_prob = np.array([0.9, 0.2, 0.5])
    pressure = np.array([0.6, 0.5, 0.7])
    gt = DenseContact(np.array([0.7, 0.5, 0.5]), np.array([1, 0, 1]))

    bce = -np.mean([np.log(0.9), np.log(0.8), np.log(0.5)])
    mse = np.mean([0.01, 0.0, 0.04])

    assert loss(FppPrediction(contact_prob, pressure), gt) == pytest.approx(bce + mse)
    assert loss(FppPrediction(contact_prob, pressure), gt, np.zeros(3)) == pytest.approx(
        bce + np.mean(pressure ** 2))

    # saturated probabilities stay finite
    certain = FppPrediction(np.array([0.0, 1.0, 1.0]), pressure)
    assert np.isfinite(loss(certain, gt))


def test_loss_gradient_over_parameters():
    model = build_model(SMALL, seed=6)
    x, labels, targets = _separable_sequence(6, 6)

    def objective(vector):
        set_flat_parameters(model, vector)
        return loss_and_gradient(model, x, labels, targets)

    point = flat_parameters(model)
    directions = np.random.RandomState(6).randn(3, point.size)
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    assert check_gradient(objective, point, step=1e-7, directions=directions) < 1e-4


def test_windows_cover_and_pad():
    long_seq = _separable_sequence(10, 0)
    short_seq = _separable_sequence(2, 1)

    inputs, labels, targets, mask = make_windows([long_seq, short_seq], window=4, stride=3)

    # starts 0, 3, 6 for the long sequence, one padded window for the short one
    assert inputs.shape == (4, 4, WIDTH)
    assert labels.shape == targets.shape == (4, 4, 192)
    assert mask.tolist()[:3] == [[1.0] * 4] * 3
    assert mask[3].tolist() == [1.0, 1.0, 0.0, 0.0]
    assert np.array_equal(inputs[1], long_seq[0][3:7])
    assert not np.any(inputs[3, 2:])

    with pytest.raises(TrainingError):
        make_windows([], window=4, stride=1)


def test_training_config_validation():
    with pytest.raises(TrainingError):
        TrainingConfig(window=0)
    with pytest.raises(TrainingError):
        TrainingConfig(validation_fraction=1.0)
    with pytest.raises(TrainingError):
        TrainingConfig(learning_rate=0.0)


def test_training_learns_a_separable_task():
    dataset = [_separable_sequence(48, seed) for seed in range(3)]
    model = build_model(SMALL, seed=0)
    config = TrainingConfig(
        seed=0, window=8, stride=4, batch_size=4, learning_rate=3e-3, epochs=60,
        validation_fraction=0.25)
    callback = EpochLoss()

    trained = train(model, dataset, config, callback)

    assert callback.epoch == 60
    assert _dataset_loss(trained, dataset) < 0.8 * _dataset_loss(model, dataset)
    # the starting model is left alone
    assert np.array_equal(flat_parameters(model), flat_parameters(build_model(SMALL, seed=0)))


def test_training_is_deterministic():
    dataset = [_separable_sequence(20, seed) for seed in range(2)]
    config = TrainingConfig(seed=3, window=8, stride=4, batch_size=2, learning_rate=1e-3,
                            epochs=3)

    a = train(build_model(SMALL, seed=0), dataset, config)
    b = train(build_model(SMALL, seed=0), dataset, config)

    assert np.array_equal(flat_parameters(a), flat_parameters(b))


def test_training_edge_cases():
    model = build_model(SMALL, seed=0)

    untouched = train(model, [_separable_sequence(10, 0)], TrainingConfig(epochs=0))
    assert np.array_equal(flat_parameters(untouched), flat_parameters(model))

    with pytest.raises(TrainingError):
        train(model, [], TrainingConfig(epochs=1))

    wrong_width = [(np.zeros((10, 9)), np.zeros((10, 192)), np.zeros((10, 192)))]
    with pytest.raises(TrainingError):
        train(model, wrong_width, TrainingConfig(epochs=1))


def test_loss_history_files(tmp_path):
    callback = EpochLoss()
    for epoch in range(3):
        callback.on_epoch_end(1.0 / (epoch + 1), 1.5 / (epoch + 1))

    df = callback.to_dataframe()
    assert df['epoch'].tolist() == [0, 1, 2]
    assert df['validation_loss'].tolist()[-1] == pytest.approx(0.5)

    callback.save_loss(str(tmp_path / 'loss.png'))
    assert (tmp_path / 'loss.png').is_file()
    assert (tmp_path / 'loss.csv').is_file()


def test_checkpoint_round_trip(tmp_path):
    model = build_model(SMALL, seed=7)
    filepath = str(tmp_path / 'fpp.bin')

    save_checkpoint(model, filepath)
    loaded = load_checkpoint(filepath)

    assert loaded.config.as_dict() == SMALL.as_dict()
    assert np.array_equal(flat_parameters(loaded), flat_parameters(model))

    x = _inputs(4, 7)
    assert np.array_equal(
        forward_sequence(loaded, x)[3].contact_prob, forward_sequence(model, x)[3].contact_prob)


@pytest.mark.slow
def test_contact_from_keypoint_height_is_learned():
    dataset = [_height_contact_sequence(64, seed) for seed in range(6)]
    held_out = [_height_contact_sequence(64, seed) for seed in range(100, 102)]
    config = TrainingConfig(
        seed=0, window=16, stride=8, batch_size=8, learning_rate=3e-3, epochs=150,
        validation_fraction=0.2)

    started = time.perf_counter()
    model = train(
        build_model(FppConfig(conv_channels=8, feature_width=32, hidden_width=32), seed=0),
        dataset, config)
    elapsed = time.perf_counter() - started

    predictions = []
    for x, _, _ in held_out:
        predictions += forward_sequence(model, x)
    labels = np.concatenate([labels for _, labels, _ in held_out])

    _, _, f1, iou = contact_prf_iou(predictions, labels)

    assert f1 >= 0.90
    assert iou >= 0.85
    assert elapsed < 900.0
