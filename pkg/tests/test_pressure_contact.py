"""
Description:
    Tests of the insole to foot-vertex mapping and the contact annotation.

To-do:
"""
# third party imports
import numpy as np
import pytest

# local imports
from managers.body_model import N_FOOT_VERTICES
from managers.pressure_contact import (
    DenseContact, InvalidWeightError, N_SENSORS, NoLoadError, PressureError,
    SensorMapError, SensorVertexMap, annotate_frame, annotate_sequence,
    estimate_body_weight, label_contact, make_pressure_frame, map_sensors_to_vertices,
    normalize_pressure, sensor_grid, sensor_values_from_vertices)
from managers.synth_oracle import brute_force_annotate


def _frame(left=0.0, right=0.0, timestamp=0.0):
    return make_pressure_frame(
        timestamp, np.full(N_SENSORS, left, dtype=float), np.full(N_SENSORS, right, dtype=float))


def test_pressure_frame_validation():
    with pytest.raises(PressureError):
        make_pressure_frame(0.0, np.zeros(N_SENSORS - 1), np.zeros(N_SENSORS))
    with pytest.raises(PressureError):
        make_pressure_frame(0.0, -np.ones(N_SENSORS), np.zeros(N_SENSORS))
    with pytest.raises(PressureError):
        make_pressure_frame(np.nan, np.zeros(N_SENSORS), np.zeros(N_SENSORS))


def test_sensor_grid_is_normalized():
    grid = sensor_grid()

    assert grid.shape == (N_SENSORS, 2)
    assert grid.min() > 0 and grid.max() < 1


def test_sensor_map_partitions_the_insoles(sensor_map):
    assert sensor_map.is_partition()
    assert sensor_map.matrix.shape == (N_FOOT_VERTICES, 2 * N_SENSORS)
    assert np.allclose(sensor_map.matrix.sum(axis=1), 1.0)

    # left insole feeds the left foot only
    for vertex, index in enumerate(sensor_map.indices):
        if vertex < N_FOOT_VERTICES // 2:
            assert index.max() < N_SENSORS
        else:
            assert index.min() >= N_SENSORS


def test_sensor_map_rejects_uncovered_vertex(sensor_map):
    indices = list(sensor_map.indices)
    weights = list(sensor_map.weights)
    indices[5] = np.zeros(0, dtype=int)
    weights[5] = np.zeros(0)

    with pytest.raises(SensorMapError):
        SensorVertexMap(indices, weights)


def test_body_weight_is_mean_total_load():
    frames = [_frame(1.0, 1.0), _frame(2.0, 1.0, timestamp=0.1)]

    # totals 2 and 3 per sensor pair
    assert estimate_body_weight(frames) == pytest.approx(2.5 * N_SENSORS)


def test_body_weight_needs_load():
    with pytest.raises(NoLoadError):
        estimate_body_weight([])
    with pytest.raises(NoLoadError):
        estimate_body_weight([_frame()])


def test_normalize_pressure():
    values = normalize_pressure(np.array([0.0, 1.0, 100.0]), 10.0)

    assert values[0] == 0.5
    assert values[1] == pytest.approx(1.0 / (1.0 + np.exp(-0.1)))
    assert values[2] < 1.0

    with pytest.raises(InvalidWeightError):
        normalize_pressure(np.zeros(3), 0.0)
    with pytest.raises(InvalidWeightError):
        normalize_pressure(np.zeros(3), -2.0)


def test_zero_pressure_is_never_contact():
    p_raw = np.zeros(N_FOOT_VERTICES)
    p_raw[:10] = 3.0
    p_norm = normalize_pressure(p_raw, 100.0)

    labels = label_contact(p_norm, p_raw)

    assert labels[:10].tolist() == [1] * 10
    assert labels[10:].sum() == 0


def test_uniform_load_reaches_every_vertex(sensor_map):
    p_raw = map_sensors_to_vertices(_frame(2.0, 4.0), sensor_map)

    assert np.allclose(p_raw[:N_FOOT_VERTICES // 2], 2.0)
    assert np.allclose(p_raw[N_FOOT_VERTICES // 2:], 4.0)


def test_vertex_values_spread_back_to_sensors(sensor_map):
    values = np.arange(N_FOOT_VERTICES, dtype=float)
    left, right = sensor_values_from_vertices(values, sensor_map)
    frame = make_pressure_frame(0.0, left, right)

    assert np.allclose(map_sensors_to_vertices(frame, sensor_map), values)


def test_annotation_matches_the_loop_oracle(sensor_map):
    rng = np.random.RandomState(0)
    frames = []
    for t in range(1000):
        left = rng.uniform(0, 5, N_SENSORS) * (rng.rand(N_SENSORS) < 0.4)
        right = rng.uniform(0, 5, N_SENSORS) * (rng.rand(N_SENSORS) < 0.4)
        frames.append(make_pressure_frame(t / 30.0, left, right))

    contacts = annotate_sequence(frames, sensor_map, 250.0)
    expected = brute_force_annotate(frames, sensor_map, 250.0)

    for ours, oracle in zip(contacts, expected):
        assert np.allclose(ours.p_norm, oracle.p_norm, atol=1e-12)
        assert np.array_equal(ours.labels, oracle.labels)


def test_unloaded_frame_annotates_no_contact(sensor_map):
    contact = annotate_frame(_frame(), sensor_map, 700.0)

    assert isinstance(contact, DenseContact)
    assert np.all(contact.p_norm == 0.5)
    assert contact.labels.sum() == 0


def test_synthetic_standing_load_matches_the_weight(walk_sequence):
    start, stop = walk_sequence.standing_segment

    assert estimate_body_weight(walk_sequence.raw_pressure[start:stop]) == pytest.approx(700.0)
