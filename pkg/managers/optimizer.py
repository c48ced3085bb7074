"""
Description:
    First-order minimization with Adam, plus the central finite-difference
    gradient and the gradient checker used to validate every energy term.

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

# local imports
from managers.body_model import N_PARAMS, active_index

CONVERGENCE_WINDOW = 10
# plateau decays stop once the step falls below this fraction of its start
MIN_STEP_FRACTION = 1e-3
OPTIMIZER_KEYS = [
    'step_size', 'beta1', 'beta2', 'epsilon', 'max_iterations',
    'convergence_tolerance', 'parameter_mask', 'patience', 'lr_decay']

MinimizeResult = namedtuple(
    'MinimizeResult', ['x', 'value', 'trace', 'best_trace', 'status', 'iterations'])


class OptimizerError(ValueError):
    pass


class OptimizerConfig:
    """
    Adam settings plus the stopping rule and the active parameter blocks.
    """
    def __init__(
            self,
            step_size=1e-2,
            beta1=0.9,
            beta2=0.999,
            epsilon=1e-8,
            max_iterations=200,
            convergence_tolerance=1e-6,
            parameter_mask=None,
            patience=5,
            lr_decay=0.5):
        """
        Class initializer.

        Inputs:
            step_size: (float) Adam learning rate.
            beta1, beta2: (float) Moment decay rates in [0, 1).
            epsilon: (float) Denominator guard.
            max_iterations: (int) Iteration cap.
            convergence_tolerance: (float) Stop when, over the last 10 iterations,
                both the best-energy decrease and the spread of the raw energies
                fall below this fraction of the energy.
            parameter_mask: (tuple or np.array, optional) Active body parameter
                blocks, or a boolean mask. None activates everything.
            patience: (int) Iterations without a new best before the step is
                multiplied by lr_decay. 0 disables the decay.
            lr_decay: (float) Step multiplier on a plateau.
        """
        self.step_size = float(step_size)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.max_iterations = int(max_iterations)
        self.convergence_tolerance = float(convergence_tolerance)
        self.parameter_mask = tuple(parameter_mask) \
            if isinstance(parameter_mask, (list, tuple)) else parameter_mask
        self.patience = int(patience)
        self.lr_decay = float(lr_decay)

        self.validate()

    def validate(self):
        if not self.step_size > 0:
            raise OptimizerError('step_size must be positive, got {}'.format(self.step_size))
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise OptimizerError('beta1 and beta2 must lie in [0, 1)')
        if not self.convergence_tolerance > 0:
            raise OptimizerError('convergence_tolerance must be positive')
        if self.max_iterations < 0:
            raise OptimizerError('max_iterations must be non-negative')
        if not 0 < self.lr_decay <= 1:
            raise OptimizerError('lr_decay must lie in (0, 1]')

        return self

    def replace(self, **kwargs):
        values = {key: getattr(self, key) for key in OPTIMIZER_KEYS}
        values.update(kwargs)

        return OptimizerConfig(**values)

    def mask(self, size):
        """
        Returns:
            (np.array) Boolean mask over a parameter vector of length 'size'.
        """
        if self.parameter_mask is None:
            return np.ones(size, dtype=bool)

        if isinstance(self.parameter_mask, np.ndarray):
            mask = self.parameter_mask.astype(bool)
            if mask.shape != (size,):
                raise OptimizerError('parameter mask must have {} entries'.format(size))
            return mask

        if size != N_PARAMS:
            raise OptimizerError('block masks need a body parameter vector')

        mask = np.zeros(size, dtype=bool)
        mask[active_index(self.parameter_mask)] = True

        return mask

    @classmethod
    def from_config(cls, configparser, section='DEFAULT'):
        """
        Read the optimizer settings of one section. Missing keys keep
        their defaults.

        Inputs:
            configparser: (ConfigParser) Loaded configuration.
            section: (str, optional) Section to read.

        Returns:
            (OptimizerConfig) Settings.
        """
        kwargs = {}
        readers = {
            'step_size': configparser.getfloat,
            'beta1': configparser.getfloat,
            'beta2': configparser.getfloat,
            'epsilon': configparser.getfloat,
            'max_iterations': configparser.getint,
            'convergence_tolerance': configparser.getfloat,
            'patience': configparser.getint,
            'lr_decay': configparser.getfloat}

        for key, reader in readers.items():
            if configparser.has_key(key, section=section):
                kwargs[key] = reader(key, section=section)
                log.debug('%s [%s]: %s', key, section, kwargs[key])

        if configparser.has_key('parameter_mask', section=section):
            kwargs['parameter_mask'] = configparser.get_str_list('parameter_mask', section=section)
            log.debug('parameter_mask [%s]: %s', section, kwargs['parameter_mask'])

        return cls(**kwargs)


class Adam:
    """
    Adam over a dictionary of numpy arrays, updated in place.
    """
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

        # first and second moment estimates
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        """
        One update. Arrays in 'params' are modified in place, so views on
        other storage (e.g. tensor memory) see the update.

        Inputs:
            params: (dict) Name to parameter array.
            grads: (dict) Name to gradient array of the same shape.
        """
        self.t += 1

        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        step_size = self.lr / bc1

        for k in sorted(params):
            g = grads[k]

            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])

            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g

            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)

            denom = np.sqrt(self.v[k] * (1.0 / bc2)) + self.epsilon
            params[k] -= step_size * self.m[k] / denom


def _is_finite(value, grad):
    return np.isfinite(value) and np.all(np.isfinite(grad))


def minimize(objective, init, config, project=None):
    """
    Minimize with Adam, decaying the step whenever the best energy stalls.
    Converged means the last 10 iterates settled: the best energy decreased
    by less than the relative tolerance and the raw energies spread by less
    than it too. A run whose step decayed below 1e-3 of its start without
    settling is reported as stalled.

    Inputs:
        objective: (callable) x -> (value, gradient).
        init: (np.array) Starting point.
        config: (OptimizerConfig) Settings and active mask.
        project: (callable, optional) Maps an iterate back onto the feasible set.

    Returns:
        (MinimizeResult) Best iterate seen (the start included), its value,
            raw and running-best energy traces, status and iteration count.
            status is one of 'stationary', 'converged', 'stalled',
            'max_iterations', 'non-finite'.
    """
    x = np.array(init, dtype=float)
    mask = config.mask(x.size)

    value, grad = objective(x)
    if not _is_finite(value, grad):
        raise OptimizerError('objective is not finite at the starting point')

    grad = np.where(mask, grad, 0.0)
    trace = [float(value)]
    best_trace = [float(value)]
    best_x = x.copy()
    best_value = float(value)

    if not np.any(grad):
        log.debug('Zero gradient at the starting point')
        return MinimizeResult(best_x, best_value, trace, best_trace, 'stationary', 0)

    adam = Adam(config.step_size, config.beta1, config.beta2, config.epsilon)
    params = {'x': x}
    stall = 0
    status = 'max_iterations'
    iteration = 0

    for iteration in range(1, config.max_iterations + 1):
        adam.step(params, {'x': grad})
        if project is not None:
            params['x'][:] = project(params['x'])

        value, grad = objective(params['x'])
        if not _is_finite(value, grad):
            log.warning('Non-finite energy at iteration %d, keeping best value %g',
                        iteration, best_value)
            status = 'non-finite'
            break

        grad = np.where(mask, grad, 0.0)
        trace.append(float(value))

        if value < best_value:
            best_value = float(value)
            best_x = params['x'].copy()
            stall = 0
        else:
            stall += 1

        if config.patience and stall >= config.patience:
            adam.lr *= config.lr_decay
            stall = 0
            log.debug('Plateau at iteration %d, step size now %g', iteration, adam.lr)
            if adam.lr < MIN_STEP_FRACTION * config.step_size:
                best_trace.append(best_value)
                status = 'stalled'
                break

        best_trace.append(best_value)

        if iteration >= CONVERGENCE_WINDOW:
            previous = best_trace[-CONVERGENCE_WINDOW - 1]
            scale = max(abs(previous), 1e-12)
            decrease = (previous - best_value) / scale
            window = trace[-CONVERGENCE_WINDOW - 1:]
            spread = (max(window) - min(window)) / scale
            if decrease < config.convergence_tolerance and spread < config.convergence_tolerance:
                status = 'converged'
                break

    log.debug('minimize: %s after %d iterations, energy %g -> %g',
              status, iteration, trace[0], best_value)

    return MinimizeResult(best_x, best_value, trace, best_trace, status, iteration)


def trace_to_dataframe(result):
    """
    Returns:
        (pd.DataFrame) One row per evaluated iterate: iteration, energy, best_energy.
    """
    return pd.DataFrame({
        'iteration': np.arange(len(result.trace)),
        'energy': result.trace,
        'best_energy': result.best_trace})


def save_trace(result, filepath):
    log.info('Saving energy trace to %s', filepath)
    trace_to_dataframe(result).to_csv(filepath, index=False)


def _value(fun, x):
    out = fun(x)

    return out[0] if isinstance(out, tuple) else out


def finite_difference_gradient(fun, x, step=1e-5):
    """
    Central finite-difference gradient.

    Inputs:
        fun: (callable) x -> value, or x -> (value, gradient).
        x: (np.array) Point.
        step: (float, optional) Step size.

    Returns:
        (np.array) Numerical gradient.
    """
    x = np.atleast_1d(np.array(x, dtype=float))
    grad = np.zeros(x.size)
    e = np.zeros(x.size)

    for i in range(x.size):
        e[i] = step
        grad[i] = (_value(fun, x + e) - _value(fun, x - e)) / (2.0 * step)
        e[i] = 0.0

    return grad


def check_gradient(objective, point, step=1e-5, directions=None):
    """
    Compare an analytic gradient against central differences. The error is
    the largest absolute disagreement divided by the largest derivative
    magnitude (guarded by 1e-12).

    Inputs:
        objective: (callable) x -> (value, gradient).
        point: (np.array) Where to check.
        step: (float, optional) Finite-difference step.
        directions: (np.array, optional) K x n directions. If given, only the
            directional derivatives along them are compared, which keeps
            the check cheap for long parameter vectors.

    Returns:
        (float) Relative error.
    """
    point = np.atleast_1d(np.array(point, dtype=float))
    _, grad = objective(point)
    grad = np.asarray(grad, dtype=float)

    if directions is None:
        analytic = grad
        numeric = finite_difference_gradient(objective, point, step)
    else:
        directions = np.atleast_2d(directions)
        analytic = directions.dot(grad)
        numeric = np.array([
            (_value(objective, point + step * d) - _value(objective, point - step * d)) / (2.0 * step)
            for d in directions])

    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)

    return float(np.max(np.abs(analytic - numeric)) / scale)
