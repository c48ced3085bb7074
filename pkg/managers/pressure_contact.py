"""
Description:
    Insole pressure to dense foot contact. Raw frames from the two 22 x 11
    insoles are mapped onto the 192 foot vertices, normalized by the body
    weight through a logistic and thresholded into contact labels.

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
from scipy.special import expit
from sklearn.neighbors import NearestNeighbors

# local imports
from managers.body_model import N_FOOT_VERTICES, N_FOOT_VERTICES_PER_FOOT

INSOLE_ROWS = 22
INSOLE_COLS = 11
N_SENSORS = INSOLE_ROWS * INSOLE_COLS
CONTACT_THRESHOLD = 0.5

PressureFrame = namedtuple('PressureFrame', ['timestamp', 'left', 'right'])
DenseContact = namedtuple('DenseContact', ['p_norm', 'labels'])


class PressureError(ValueError):
    pass


class NoLoadError(PressureError):
    pass


class InvalidWeightError(PressureError):
    pass


class SensorMapError(PressureError):
    pass


def make_pressure_frame(timestamp, left, right):
    """
    Build and validate a PressureFrame.

    Inputs:
        timestamp: (float) Seconds.
        left: (array-like) 242 raw sensor values of the left insole.
        right: (array-like) 242 raw sensor values of the right insole.

    Returns:
        (PressureFrame) Validated frame.
    """
    frame = PressureFrame(
        float(timestamp),
        np.asarray(left, dtype=float),
        np.asarray(right, dtype=float))

    return validate_pressure_frame(frame)


def validate_pressure_frame(frame):
    for side in ('left', 'right'):
        values = getattr(frame, side)
        if values.shape != (N_SENSORS,):
            raise PressureError('{} insole must hold {} values, got {}'.format(
                side, N_SENSORS, values.size))
        if not np.all(np.isfinite(values)):
            raise PressureError('{} insole holds non-finite values'.format(side))
        if np.any(values < 0):
            raise PressureError('{} insole holds negative values'.format(side))

    if not np.isfinite(frame.timestamp):
        raise PressureError('timestamp must be finite')

    return frame


def sensor_grid():
    """
    Insole sensor centers in a normalized foot frame.
    u runs heel (0) to toe (1), w runs medial (0) to lateral (1).

    Returns:
        (np.array) 242 x 2 (u, w), row-major with row 0 at the heel.
    """
    rows, cols = np.meshgrid(np.arange(INSOLE_ROWS), np.arange(INSOLE_COLS), indexing='ij')
    u = (rows.ravel() + 0.5) / INSOLE_ROWS
    w = (cols.ravel() + 0.5) / INSOLE_COLS

    return np.stack([u, w], axis=1)


def normalized_foot_coordinates(template):
    """
    Foot vertices of a template in the same normalized frame as the sensors.
    The right foot is mirrored so medial/lateral agree with the left.

    Returns:
        (np.array) 192 x 2 (u, w) in registry order.
    """
    foot = template.vertices[template.foot_vertex_ids]
    coords = np.zeros((N_FOOT_VERTICES, 2))

    for side in range(2):
        index = np.arange(side * N_FOOT_VERTICES_PER_FOOT, (side + 1) * N_FOOT_VERTICES_PER_FOOT)
        x = foot[index, 0]
        z = foot[index, 2]

        # toes point to -z
        u = (z.max() - z) / (z.max() - z.min())
        if side == 0:
            w = (x.max() - x) / (x.max() - x.min())
        else:
            w = (x - x.min()) / (x.max() - x.min())

        coords[index] = np.stack([u, w], axis=1)

    return coords


class SensorVertexMap:
    """
    Assignment of insole sensors to foot vertices. Vertex i (registry order)
    averages the sensors in indices[i] with weights[i]. Sensor indices are
    global: 0-241 left insole, 242-483 right insole.
    """
    def __init__(self, indices, weights):
        self.indices = [np.asarray(i, dtype=int) for i in indices]
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.validate()
        self.matrix = self._to_matrix()

    def validate(self):
        if len(self.indices) != N_FOOT_VERTICES or len(self.weights) != N_FOOT_VERTICES:
            raise SensorMapError('map must cover {} vertices'.format(N_FOOT_VERTICES))

        for vertex, (index, weight) in enumerate(zip(self.indices, self.weights)):
            if index.size == 0:
                raise SensorMapError('vertex {} has no sensor'.format(vertex))
            if index.shape != weight.shape:
                raise SensorMapError('vertex {} has mismatched weights'.format(vertex))
            if index.min() < 0 or index.max() >= 2 * N_SENSORS:
                raise SensorMapError('vertex {} has a sensor index out of range'.format(vertex))
            if not np.isclose(weight.sum(), 1.0, rtol=0, atol=1e-12):
                raise SensorMapError('weights of vertex {} do not sum to 1'.format(vertex))

    def _to_matrix(self):
        matrix = np.zeros((N_FOOT_VERTICES, 2 * N_SENSORS))

        for vertex, (index, weight) in enumerate(zip(self.indices, self.weights)):
            matrix[vertex, index] += weight

        return matrix

    def is_partition(self):
        owners = np.concatenate(self.indices)
        return owners.size == 2 * N_SENSORS and np.unique(owners).size == owners.size


def build_sensor_vertex_map(template):
    """
    Nearest-neighbor partition of each insole grid onto the 96 foot
    vertices of the same foot. Every sensor goes to its nearest vertex;
    a vertex left without sensors takes its nearest sensor from a vertex
    that owns more than one.

    Inputs:
        template: (BodyTemplate) Rest template with the foot registry.

    Returns:
        (SensorVertexMap) Map with uniform averaging weights.
    """
    sensors = sensor_grid()
    vertex_coords = normalized_foot_coordinates(template)
    indices = []

    for side in range(2):
        coords = vertex_coords[side * N_FOOT_VERTICES_PER_FOOT:(side + 1) * N_FOOT_VERTICES_PER_FOOT]

        nn = NearestNeighbors(n_neighbors=1).fit(coords)
        owner = nn.kneighbors(sensors, return_distance=False)[:, 0]

        sensor_nn = NearestNeighbors(n_neighbors=N_SENSORS).fit(sensors)
        counts = np.bincount(owner, minlength=N_FOOT_VERTICES_PER_FOOT)

        for vertex in np.where(counts == 0)[0]:
            candidates = sensor_nn.kneighbors(coords[vertex:vertex + 1], return_distance=False)[0]
            for sensor in candidates:
                if counts[owner[sensor]] > 1:
                    counts[owner[sensor]] -= 1
                    owner[sensor] = vertex
                    counts[vertex] += 1
                    break

        log.debug('Foot %d: %d to %d sensors per vertex', side, counts.min(), counts.max())

        for vertex in range(N_FOOT_VERTICES_PER_FOOT):
            indices.append(np.where(owner == vertex)[0] + side * N_SENSORS)

    weights = [np.full(index.size, 1.0 / index.size) for index in indices]

    return SensorVertexMap(indices, weights)


def estimate_body_weight(standing):
    """
    Body weight in raw sensor units: mean over frames of the sum of all
    484 sensors while the subject stands still.

    Inputs:
        standing: (list) PressureFrame of the standing segment.

    Returns:
        (float) w_s.
    """
    if len(standing) == 0:
        raise NoLoadError('no standing frames to estimate body weight from')

    sums = [float(np.sum(frame.left)) + float(np.sum(frame.right)) for frame in standing]
    weight = float(np.mean(sums))

    if weight <= 0:
        raise NoLoadError('standing segment carries no load')

    log.debug('Estimated body weight: %f over %d frames', weight, len(standing))

    return weight


def normalize_pressure(pressure, weight):
    """
    Logistic of the pressure relative to the body weight.

    Inputs:
        pressure: (np.array) Raw per-vertex pressure, non-negative.
        weight: (float) Body weight w_s.

    Returns:
        (np.array) Normalized pressure in [0.5, 1).
    """
    if not np.isfinite(weight) or weight <= 0:
        raise InvalidWeightError('body weight must be positive, got {}'.format(weight))

    pressure = np.asarray(pressure, dtype=float)
    if np.any(pressure < 0):
        raise PressureError('pressure must be non-negative')

    return expit(pressure / weight)


def label_contact(p_norm, p_raw):
    """
    A vertex is in contact when its normalized pressure reaches the 0.5
    threshold and it carries strictly positive raw pressure.

    Inputs:
        p_norm: (np.array) 192 normalized pressures.
        p_raw: (np.array) 192 raw pressures.

    Returns:
        (np.array) 192 labels in {0, 1}.
    """
    p_norm = np.asarray(p_norm, dtype=float)
    p_raw = np.asarray(p_raw, dtype=float)

    if p_norm.shape != (N_FOOT_VERTICES,) or p_raw.shape != (N_FOOT_VERTICES,):
        raise PressureError('expected {} aligned values, got {} and {}'.format(
            N_FOOT_VERTICES, p_norm.size, p_raw.size))

    return ((p_norm >= CONTACT_THRESHOLD) & (p_raw > 0)).astype(int)


def map_sensors_to_vertices(frame, sensor_map):
    """
    Returns:
        (np.array) 192 raw per-vertex pressures, each the weighted average
            of the vertex's sensors.
    """
    validate_pressure_frame(frame)

    return sensor_map.matrix.dot(np.concatenate([frame.left, frame.right]))


def sensor_values_from_vertices(vertex_values, sensor_map):
    """
    Spread per-vertex values back to the sensors: every sensor takes the
    value of the vertex that owns it. Needs a partition map.

    Returns:
        left, right: (np.array) 242 sensor values each.
    """
    if not sensor_map.is_partition():
        raise SensorMapError('spreading values back needs a partition map')

    sensors = np.zeros(2 * N_SENSORS)
    for value, index in zip(vertex_values, sensor_map.indices):
        sensors[index] = value

    return sensors[:N_SENSORS], sensors[N_SENSORS:]


def annotate_frame(frame, sensor_map, weight):
    p_raw = map_sensors_to_vertices(frame, sensor_map)
    p_norm = normalize_pressure(p_raw, weight)

    return DenseContact(p_norm, label_contact(p_norm, p_raw))


def annotate_sequence(frames, sensor_map, weight):
    """
    Annotate every frame independently.

    Inputs:
        frames: (list) PressureFrame sequence.
        sensor_map: (SensorVertexMap) Sensor to vertex map.
        weight: (float) Body weight w_s.

    Returns:
        (list) DenseContact per frame.
    """
    contacts = [annotate_frame(frame, sensor_map, weight) for frame in frames]

    log.info('Annotated %d frames, %d contacted vertex labels in total',
             len(contacts), int(sum(c.labels.sum() for c in contacts)))

    return contacts
