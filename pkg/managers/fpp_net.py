"""
Description:
    Foot pressure and contact predictor (FPP-Net). Per-frame 2D keypoints go
    through a small convolutional encoder, a gated recurrent cell carries the
    temporal state and a two-layer decoder emits 192 contact probabilities
    and 192 non-negative pressures. Includes windowed training with the
    project's Adam, checkpoints and the loss plot.

To-do:
"""
# standard imports
from collections import namedtuple
import copy
import logging as log
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../'))

# third party imports
import matplotlib
matplotlib.use('Agg')
import matplotlib.pylab as plt
import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F

# local imports
from managers.body_model import N_FOOT_VERTICES
from managers.optimizer import Adam
from utils.utilities import load_arrays, save_arrays

CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-7
DEFAULT_IMAGE_SIZE = (500, 500)

KeypointFrame2D = namedtuple('KeypointFrame2D', ['positions', 'confidences'])
FppPrediction = namedtuple('FppPrediction', ['contact_prob', 'pressure'])


class FppError(ValueError):
    pass


class TrainingError(FppError):
    pass


def make_keypoint_frame(positions, confidences):
    """
    Build and validate a KeypointFrame2D.

    Inputs:
        positions: (array-like) J x 2 pixel coordinates.
        confidences: (array-like) J values in [0, 1].

    Returns:
        (KeypointFrame2D) Validated frame.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    confidences = np.asarray(confidences, dtype=float).ravel()

    if positions.shape[0] != confidences.size:
        raise FppError('{} keypoints but {} confidences'.format(
            positions.shape[0], confidences.size))
    if not np.all(np.isfinite(positions)):
        raise FppError('keypoint positions must be finite')
    if np.any(confidences < 0) or np.any(confidences > 1):
        raise FppError('keypoint confidences must lie in [0, 1]')

    return KeypointFrame2D(positions, confidences)


def normalize_keypoints(frame, image_size=DEFAULT_IMAGE_SIZE):
    """
    Map pixel positions to [-1, 1] per axis and append the confidences.

    Inputs:
        frame: (KeypointFrame2D) Keypoints in pixels.
        image_size: (tuple) (width, height) in pixels.

    Returns:
        (np.array) 3J vector [x_1..x_J, y_1..y_J, c_1..c_J].
    """
    width, height = float(image_size[0]), float(image_size[1])
    x = 2.0 * frame.positions[:, 0] / width - 1.0
    y = 2.0 * frame.positions[:, 1] / height - 1.0

    return np.concatenate([x, y, frame.confidences])


def denormalize_keypoints(vector, image_size=DEFAULT_IMAGE_SIZE):
    """
    Inverse of normalize_keypoints().

    Returns:
        (KeypointFrame2D) Keypoints in pixels.
    """
    vector = np.asarray(vector, dtype=float)
    if vector.size % 3:
        raise FppError('normalized keypoint vector must have 3J entries, got {}'.format(
            vector.size))

    n = vector.size // 3
    width, height = float(image_size[0]), float(image_size[1])
    x = (vector[:n] + 1.0) * width / 2.0
    y = (vector[n:2 * n] + 1.0) * height / 2.0

    return KeypointFrame2D(np.stack([x, y], axis=1), vector[2 * n:].copy())


class FppConfig:
    """
    Layer widths of the network.
    """
    KEYS = ['n_keypoints', 'conv_channels', 'kernel_size', 'feature_width',
            'hidden_width', 'n_vertices']

    def __init__(
            self,
            n_keypoints=17,
            conv_channels=32,
            kernel_size=3,
            feature_width=2048,
            hidden_width=484,
            n_vertices=N_FOOT_VERTICES):
        self.n_keypoints = int(n_keypoints)
        self.conv_channels = int(conv_channels)
        self.kernel_size = int(kernel_size)
        self.feature_width = int(feature_width)
        self.hidden_width = int(hidden_width)
        self.n_vertices = int(n_vertices)

        if min(self.as_dict().values()) <= 0:
            raise FppError('all widths must be positive: {}'.format(self.as_dict()))
        if self.kernel_size % 2 == 0:
            raise FppError('kernel_size must be odd, got {}'.format(self.kernel_size))

    def as_dict(self):
        return {key: getattr(self, key) for key in self.KEYS}

    @classmethod
    def from_config(cls, configparser, section='DEFAULT'):
        kwargs = {}
        for key in cls.KEYS:
            if configparser.has_key(key, section=section):
                kwargs[key] = configparser.getint(key, section=section)
                log.debug('%s: %d', key, kwargs[key])

        return cls(**kwargs)


class FppModel(nn.Module):
    """
    Keypoint encoder -> GRU cell -> contact/pressure decoder.
    """
    def __init__(self, config=None):
        super(FppModel, self).__init__()

        self.config = config or FppConfig()
        c = self.config
        padding = c.kernel_size // 2

        self.encoder_conv = nn.Sequential(
            nn.Conv1d(3, c.conv_channels, c.kernel_size, padding=padding),
            nn.ReLU(),
            nn.Conv1d(c.conv_channels, c.conv_channels, c.kernel_size, padding=padding),
            nn.ReLU())
        self.encoder_fc = nn.Linear(c.conv_channels * c.n_keypoints, c.feature_width)
        self.gru = nn.GRUCell(c.feature_width, c.hidden_width)
        self.decoder = nn.Sequential(
            nn.Linear(c.hidden_width, c.hidden_width),
            nn.ReLU(),
            nn.Linear(c.hidden_width, 2 * c.n_vertices))

        self.double()

    @property
    def input_width(self):
        return 3 * self.config.n_keypoints

    def encode(self, frames):
        """
        frames: B x 3J normalized inputs -> B x feature_width motion features.
        """
        batch = frames.shape[0]
        x = frames.reshape(batch, 3, self.config.n_keypoints)
        x = self.encoder_conv(x).reshape(batch, -1)

        return F.relu(self.encoder_fc(x))

    def step(self, frames, hidden):
        """
        One recurrent step.

        Returns:
            hidden: (torch.Tensor) B x hidden_width new state.
            contact_prob: (torch.Tensor) B x V probabilities.
            pressure: (torch.Tensor) B x V non-negative pressures.
        """
        hidden = self.gru(self.encode(frames), hidden)
        out = self.decoder(hidden)
        n = self.config.n_vertices

        return hidden, torch.sigmoid(out[:, :n]), F.softplus(out[:, n:])

    def initial_state(self, batch):
        return torch.zeros(batch, self.config.hidden_width, dtype=torch.float64)

    def forward(self, frames):
        """
        Inputs:
            frames: (torch.Tensor) B x T x 3J normalized inputs.

        Returns:
            contact_prob, pressure: (torch.Tensor) B x T x V each.
        """
        hidden = self.initial_state(frames.shape[0])
        contacts = []
        pressures = []

        for t in range(frames.shape[1]):
            hidden, contact, pressure = self.step(frames[:, t], hidden)
            contacts.append(contact)
            pressures.append(pressure)

        return torch.stack(contacts, dim=1), torch.stack(pressures, dim=1)


def build_model(config=None, seed=0):
    """
    Returns:
        (FppModel) Freshly initialized model, identical for identical seeds.
    """
    torch.manual_seed(seed)
    model = FppModel(config)

    log.debug('FPP-Net with %d parameters', count_parameters(model))

    return model


def count_parameters(model):
    return int(sum(p.numel() for p in model.parameters()))


def flat_parameters(model):
    return torch.nn.utils.parameters_to_vector(model.parameters()).detach().numpy().copy()


def set_flat_parameters(model, vector):
    torch.nn.utils.vector_to_parameters(
        torch.as_tensor(np.asarray(vector, dtype=float)), model.parameters())


def _as_batch(model, frames):
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise FppError('expected a non-empty T x {} sequence'.format(model.input_width))
    if frames.shape[1] != model.input_width:
        raise FppError('input width {} does not match the model ({})'.format(
            frames.shape[1], model.input_width))

    return torch.as_tensor(frames).unsqueeze(0)


def forward_sequence(model, frames):
    """
    Run the model over one sequence, causally, from a zero state.

    Inputs:
        model: (FppModel) Network.
        frames: (np.array) T x 3J normalized inputs.

    Returns:
        (list) FppPrediction per frame.
    """
    batch = _as_batch(model, frames)

    with torch.no_grad():
        contact, pressure = model(batch)

    contact = contact[0].numpy()
    pressure = pressure[0].numpy()

    return [FppPrediction(contact[t].copy(), pressure[t].copy()) for t in range(contact.shape[0])]


def predict_sequence(model, keypoint_frames, image_size=DEFAULT_IMAGE_SIZE):
    """
    Normalize keypoint frames and predict contact for each of them.

    Returns:
        (list) FppPrediction per frame.
    """
    frames = np.stack([normalize_keypoints(frame, image_size) for frame in keypoint_frames])

    return forward_sequence(model, frames)


def loss_torch(contact_prob, pressure, labels, target, mask=None):
    """
    Mean binary cross entropy over contact plus mean squared pressure error.
    The mask (one value per frame) excludes padded frames.
    """
    p = contact_prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -(labels * torch.log(p) + (1.0 - labels) * torch.log(1.0 - p))
    mse = (pressure - target) ** 2

    if mask is None:
        return bce.mean() + mse.mean()

    weight = mask.unsqueeze(-1).expand_as(bce)
    total = weight.sum()

    return (bce * weight).sum() / total + (mse * weight).sum() / total


def loss(pred, gt, pressure_target=None):
    """
    Contact and pressure loss of one frame.

    Inputs:
        pred: (FppPrediction) Prediction.
        gt: (DenseContact) Ground truth labels and normalized pressure.
        pressure_target: (np.array, optional) Pressure target. Defaults to gt.p_norm.

    Returns:
        (float) Loss.
    """
    target = gt.p_norm if pressure_target is None else pressure_target

    value = loss_torch(
        torch.as_tensor(np.asarray(pred.contact_prob, dtype=float)),
        torch.as_tensor(np.asarray(pred.pressure, dtype=float)),
        torch.as_tensor(np.asarray(gt.labels, dtype=float)),
        torch.as_tensor(np.asarray(target, dtype=float)))

    return float(value)


def loss_and_gradient(model, frames, labels, targets):
    """
    Loss of one sequence and its gradient over the flat parameter vector.
    """
    model.zero_grad()
    contact, pressure = model(_as_batch(model, frames))
    value = loss_torch(
        contact[0], pressure[0],
        torch.as_tensor(np.asarray(labels, dtype=float)),
        torch.as_tensor(np.asarray(targets, dtype=float)))
    value.backward()

    grad = torch.cat([p.grad.reshape(-1) for p in model.parameters()])

    return float(value.detach()), grad.numpy().copy()


class TrainingConfig:
    """
    Training schedule and data windowing.
    """
    KEYS = ['seed', 'window', 'stride', 'batch_size', 'learning_rate', 'epochs',
            'validation_fraction']

    def __init__(
            self,
            seed=0,
            window=32,
            stride=8,
            batch_size=16,
            learning_rate=1e-4,
            epochs=100,
            validation_fraction=0.2):
        self.seed = int(seed)
        self.window = int(window)
        self.stride = int(stride)
        self.batch_size = int(batch_size)
        self.learning_rate = float(learning_rate)
        self.epochs = int(epochs)
        self.validation_fraction = float(validation_fraction)

        if self.window <= 0 or self.stride <= 0 or self.batch_size <= 0:
            raise TrainingError('window, stride and batch_size must be positive')
        if self.learning_rate <= 0 or self.epochs < 0:
            raise TrainingError('learning_rate must be positive and epochs non-negative')
        if not 0 <= self.validation_fraction < 1:
            raise TrainingError('validation_fraction must lie in [0, 1)')

    def as_dict(self):
        return {key: getattr(self, key) for key in self.KEYS}

    @classmethod
    def from_config(cls, configparser, section='DEFAULT'):
        kwargs = {}
        for key in cls.KEYS:
            if configparser.has_key(key, section=section):
                if key in ('learning_rate', 'validation_fraction'):
                    kwargs[key] = configparser.getfloat(key, section=section)
                else:
                    kwargs[key] = configparser.getint(key, section=section)
                log.debug('%s: %s', key, kwargs[key])

        return cls(**kwargs)


def make_windows(dataset, window, stride):
    """
    Cut every sequence into fixed-length windows. Sequences shorter than a
    window are zero-padded and masked.

    Inputs:
        dataset: (list) (inputs T x 3J, labels T x V, targets T x V) per sequence.
        window: (int) Window length in frames.
        stride: (int) Step between window starts.

    Returns:
        inputs: (np.array) N x window x 3J.
        labels, targets: (np.array) N x window x V.
        mask: (np.array) N x window, 1 on real frames.
    """
    inputs, labels, targets, masks = [], [], [], []

    for x, y, p in dataset:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        p = np.asarray(p, dtype=float)
        n = x.shape[0]

        if n == 0:
            continue

        for start in range(0, max(n - window, 0) + 1, stride):
            stop = min(start + window, n)
            length = stop - start

            pad = ((0, window - length), (0, 0))
            inputs.append(np.pad(x[start:stop], pad, mode='constant'))
            labels.append(np.pad(y[start:stop], pad, mode='constant'))
            targets.append(np.pad(p[start:stop], pad, mode='constant'))

            mask = np.zeros(window)
            mask[:length] = 1.0
            masks.append(mask)

    if not inputs:
        raise TrainingError('dataset holds no frames')

    return np.stack(inputs), np.stack(labels), np.stack(targets), np.stack(masks)


class EpochLoss:
    """
    Records the training and validation loss after every epoch.
    """
    def __init__(self):
        self.epoch = 0
        self.loss = {}
        self.validation_loss = {}

    def on_epoch_end(self, train_loss, validation_loss):
        log.debug('Loss after epoch %d: %f (validation %f)',
                  self.epoch, train_loss, validation_loss)

        self.loss[self.epoch] = train_loss
        self.validation_loss[self.epoch] = validation_loss
        self.epoch += 1

    def to_dataframe(self):
        epochs = sorted(self.loss)
        return pd.DataFrame({
            'epoch': epochs,
            'loss': [self.loss[e] for e in epochs],
            'validation_loss': [self.validation_loss[e] for e in epochs]})

    def save_loss(self, filepath):
        """
        Plot the loss history. A CSV with the same numbers is written next to it.
        """
        log.info('Saving loss plot to %s', filepath)

        df = self.to_dataframe()
        df.to_csv(os.path.splitext(filepath)[0] + '.csv', index=False)

        plt.figure()
        plt.plot(df['epoch'], df['loss'], label='train')
        plt.plot(df['epoch'], df['validation_loss'], label='validation')
        plt.xlabel('Epoch')
        plt.ylabel('Loss')
        plt.legend()
        plt.savefig(filepath)
        plt.close()


def _window_loss(model, inputs, labels, targets, mask):
    contact, pressure = model(torch.as_tensor(inputs))

    return loss_torch(
        contact, pressure, torch.as_tensor(labels), torch.as_tensor(targets),
        torch.as_tensor(mask))


def _evaluate(model, windows, index):
    inputs, labels, targets, mask = windows

    with torch.no_grad():
        value = _window_loss(model, inputs[index], labels[index], targets[index], mask[index])

    return float(value)


def _split(n_windows, fraction, rng):
    order = rng.permutation(n_windows)
    n_validation = int(round(n_windows * fraction))

    if n_validation == 0 or n_validation == n_windows:
        return order, order

    return order[n_validation:], order[:n_validation]


def train(model_init, dataset, config, callback=None):
    """
    Train a copy of the model on windowed sequences. The parameters with
    the lowest validation loss seen (the initial ones included) are returned.

    Inputs:
        model_init: (FppModel) Starting model, left untouched.
        dataset: (list) (inputs T x 3J, labels T x V, targets T x V) per sequence.
        config: (TrainingConfig) Schedule.
        callback: (EpochLoss, optional) Receives the per-epoch losses.

    Returns:
        (FppModel) Trained model.
    """
    if not dataset:
        raise TrainingError('dataset is empty')

    model = copy.deepcopy(model_init)
    if config.epochs == 0:
        log.info('Zero epochs requested, returning the initial model')
        return model

    windows = make_windows(dataset, config.window, config.stride)
    if windows[0].shape[-1] != model.input_width:
        raise TrainingError('input width {} does not match the model ({})'.format(
            windows[0].shape[-1], model.input_width))

    rng = np.random.RandomState(config.seed)
    train_index, validation_index = _split(len(windows[0]), config.validation_fraction, rng)

    log.info('Training on %d windows, validating on %d, for %d epochs',
             len(train_index), len(validation_index), config.epochs)

    # numpy views share memory with the parameters, so Adam updates them in place
    params = {name: p.detach().numpy() for name, p in model.named_parameters()}
    adam = Adam(lr=config.learning_rate)

    best_loss = _evaluate(model, windows, validation_index)
    best_state = copy.deepcopy(model.state_dict())
    log.info('Initial validation loss: %f', best_loss)

    inputs, labels, targets, mask = windows
    diverged = False

    for epoch in range(config.epochs):
        order = rng.permutation(train_index)
        total = 0.0

        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]

            model.zero_grad()
            value = _window_loss(model, inputs[batch], labels[batch], targets[batch], mask[batch])

            if not torch.isfinite(value):
                log.error('Training diverged at epoch %d: loss is %s', epoch, float(value))
                diverged = True
                break

            value.backward()
            grads = {name: p.grad.numpy() for name, p in model.named_parameters()}
            adam.step(params, grads)
            total += float(value.detach()) * batch.size

        if diverged:
            break

        validation_loss = _evaluate(model, windows, validation_index)
        if callback is not None:
            callback.on_epoch_end(total / order.size, validation_loss)

        if validation_loss < best_loss:
            best_loss = validation_loss
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    log.info('Best validation loss: %f', best_loss)

    if diverged:
        raise TrainingError('loss became non-finite; best parameters so far had '
                            'validation loss {}'.format(best_loss))

    return model


def save_checkpoint(model, filepath):
    """
    Save the flat parameter vector with the config echo and the named
    offset of every parameter tensor.
    """
    offsets = {}
    offset = 0
    for name, p in model.named_parameters():
        offsets[name] = {'offset': offset, 'shape': list(p.shape)}
        offset += p.numel()

    meta = {
        'checkpoint_version': CHECKPOINT_VERSION,
        'config': model.config.as_dict(),
        'parameters': offsets}

    log.info('Saving FPP-Net checkpoint to %s', filepath)
    save_arrays(filepath, 'fpp_checkpoint', [('parameters', flat_parameters(model))], meta=meta)


def load_checkpoint(filepath):
    """
    Returns:
        (FppModel) Model restored from save_checkpoint().
    """
    arrays, meta = load_arrays(filepath, kind='fpp_checkpoint')

    if meta.get('checkpoint_version') != CHECKPOINT_VERSION:
        raise FppError('Unsupported checkpoint version: {}'.format(meta.get('checkpoint_version')))

    model = FppModel(FppConfig(**meta['config']))
    vector = arrays['parameters']

    if vector.size != count_parameters(model):
        raise FppError('checkpoint holds {} values, model needs {}'.format(
            vector.size, count_parameters(model)))

    for name, p in model.named_parameters():
        entry = meta['parameters'][name]
        block = vector[entry['offset']:entry['offset'] + p.numel()]
        with torch.no_grad():
            p.copy_(torch.as_tensor(block).reshape(entry['shape']))

    return model
