"""
Description:
    On-disk containers. A sequence is a line-delimited JSON file (typed
    header, then one record per frame) with the depth clouds in a binary
    sidecar referenced by offset. Pressure, annotations, predictions and
    metrics have their own line-delimited files; raw pressure can also be
    stored as packed binary records.

    Every writer sorts JSON keys and writes little-endian float64, so
    identical inputs give identical bytes.

To-do:
"""
# standard imports
import json
import logging as log
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../'))

# third party imports
import numpy as np

# local imports
from managers.body_model import BodyParams, Camera
from managers.energy import GroundPlane
from managers.fpp_net import FppPrediction, make_keypoint_frame
from managers.pipelines import GroundTruth, SequenceInput, make_observation_frame
from managers.pressure_contact import (
    DenseContact, N_SENSORS, PressureError, make_pressure_frame)
from utils.utilities import make_parent_dir, sibling_path

FORMAT_VERSION = 1
SEQUENCE_FORMAT = 'mocap-sequence'
PRESSURE_FORMAT = 'mocap-pressure'
ANNOTATION_FORMAT = 'mocap-annotation'
PREDICTION_FORMAT = 'mocap-prediction'
METRICS_FORMAT = 'mocap-metrics'
PRESSURE_MAGIC = b'MOCAPPRS'


class FormatError(ValueError):
    pass


def _dumps(record):
    return json.dumps(record, sort_keys=True)


def _write_jsonl(filepath, header, records):
    make_parent_dir(filepath)
    with open(filepath, 'w') as fid:
        fid.write(_dumps(header) + '\n')
        for record in records:
            fid.write(_dumps(record) + '\n')


def _read_jsonl(filepath, expected_format):
    """
    Returns:
        header: (dict) First line.
        records: (list) Remaining lines.
    """
    if not os.path.isfile(filepath):
        raise FormatError('File not found: {}'.format(filepath))

    with open(filepath, 'r') as fid:
        lines = [line for line in fid.read().splitlines() if line.strip()]

    if not lines:
        raise FormatError('Empty file: {}'.format(filepath))

    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except ValueError as e:
        raise FormatError('Malformed JSON in {}: {}'.format(filepath, e))

    if header.get('format') != expected_format:
        raise FormatError('Expected a \'{}\' file, got \'{}\': {}'.format(
            expected_format, header.get('format'), filepath))
    if header.get('version') != FORMAT_VERSION:
        raise FormatError('Unsupported {} version {} in {}'.format(
            expected_format, header.get('version'), filepath))
    if 'n_frames' in header and header['n_frames'] != len(records):
        raise FormatError('{} declares {} frames but holds {}'.format(
            filepath, header['n_frames'], len(records)))

    return header, records


def _field(record, key, filepath):
    if key not in record:
        raise FormatError('Missing field \'{}\' in {}'.format(key, filepath))

    return record[key]


def _floats(values):
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def save_sequence(sequence, filepath):
    """
    Write a sequence container and its cloud sidecar (same name, '.bin').

    Inputs:
        sequence: (SequenceInput) Sequence to write.
        filepath: (str) Output '.jsonl' file.
    """
    cloud_path = sibling_path(filepath, '.bin')
    cam = sequence.frames[0].cam if sequence.frames else Camera()

    header = {
        'format': SEQUENCE_FORMAT,
        'version': FORMAT_VERSION,
        'subject': sequence.subject,
        'camera': {'fx': cam.fx, 'fy': cam.fy, 'cx': cam.cx, 'cy': cam.cy},
        'frame_rate': sequence.frame_rate,
        'n_frames': len(sequence),
        'cloud_file': os.path.basename(cloud_path),
        'image_size': list(sequence.image_size),
        'floor': {'normal': _floats(sequence.floor.normal), 'offset': sequence.floor.offset},
        'standing_segment': list(sequence.standing_segment),
        'has_gt': sequence.gt is not None}

    records = []
    offset = 0
    make_parent_dir(cloud_path)

    with open(cloud_path, 'wb') as fid:
        for t, frame in enumerate(sequence.frames):
            cloud = np.ascontiguousarray(frame.depth_cloud, dtype='<f8').reshape(-1, 3)
            fid.write(cloud.tobytes())

            record = {
                'frame': t,
                'timestamp': frame.timestamp,
                'keypoints': _floats(frame.keypoints2d.positions),
                'confidences': _floats(frame.keypoints2d.confidences),
                'cloud_offset': offset,
                'cloud_count': int(cloud.shape[0])}
            offset += cloud.nbytes

            if sequence.raw_pressure is not None:
                record['pressure_left'] = _floats(sequence.raw_pressure[t].left)
                record['pressure_right'] = _floats(sequence.raw_pressure[t].right)

            if sequence.gt is not None:
                record['gt_params'] = _floats(sequence.gt.params[t].to_vector())
                if sequence.gt.contacts is not None:
                    record['gt_labels'] = [int(v) for v in sequence.gt.contacts[t].labels]
                    record['gt_p_norm'] = _floats(sequence.gt.contacts[t].p_norm)

            records.append(record)

    _write_jsonl(filepath, header, records)
    log.info('Saved %d frames to %s and %s', len(records), filepath, cloud_path)


def load_sequence(filepath):
    """
    Read a sequence container written by save_sequence().

    Returns:
        (SequenceInput) Sequence with raw pressure and ground truth when stored.
    """
    header, records = _read_jsonl(filepath, SEQUENCE_FORMAT)

    cloud_path = os.path.join(os.path.dirname(filepath), _field(header, 'cloud_file', filepath))
    if not os.path.isfile(cloud_path):
        raise FormatError('Cloud file not found: {}'.format(cloud_path))
    with open(cloud_path, 'rb') as fid:
        blob = fid.read()

    cam = Camera(**_field(header, 'camera', filepath))
    floor_record = _field(header, 'floor', filepath)
    floor = GroundPlane(floor_record['normal'], floor_record['offset'])

    frames, raw_pressure, gt_params, gt_contacts = [], [], [], []

    for record in records:
        count = int(_field(record, 'cloud_count', filepath))
        offset = int(_field(record, 'cloud_offset', filepath))
        if offset + 24 * count > len(blob):
            raise FormatError('Cloud block of frame {} runs past {}'.format(
                record.get('frame'), cloud_path))
        cloud = np.frombuffer(blob, dtype='<f8', count=3 * count, offset=offset).reshape(count, 3)

        keypoints = make_keypoint_frame(
            np.reshape(_field(record, 'keypoints', filepath), (-1, 2)),
            _field(record, 'confidences', filepath))
        frames.append(make_observation_frame(
            keypoints, cloud.copy(), cam, _field(record, 'timestamp', filepath)))

        if 'pressure_left' in record:
            raw_pressure.append(make_pressure_frame(
                record['timestamp'], record['pressure_left'], record['pressure_right']))
        if 'gt_params' in record:
            gt_params.append(BodyParams.from_vector(record['gt_params']))
        if 'gt_labels' in record:
            gt_contacts.append(DenseContact(
                np.array(record['gt_p_norm'], dtype=float),
                np.array(record['gt_labels'], dtype=int)))

    gt = None
    if header.get('has_gt'):
        gt = GroundTruth(gt_params, gt_contacts if gt_contacts else None)

    return SequenceInput(
        frames,
        standing_segment=_field(header, 'standing_segment', filepath),
        subject=_field(header, 'subject', filepath),
        raw_pressure=raw_pressure if raw_pressure else None,
        frame_rate=_field(header, 'frame_rate', filepath),
        floor=floor,
        image_size=_field(header, 'image_size', filepath),
        gt=gt)


def save_pressure_jsonl(frames, filepath):
    header = {'format': PRESSURE_FORMAT, 'version': FORMAT_VERSION, 'n_frames': len(frames),
              'sensors_per_insole': N_SENSORS}
    records = [{'frame': t, 'timestamp': f.timestamp, 'left': _floats(f.left),
                'right': _floats(f.right)} for t, f in enumerate(frames)]

    _write_jsonl(filepath, header, records)


def load_pressure_jsonl(filepath):
    _, records = _read_jsonl(filepath, PRESSURE_FORMAT)

    try:
        return [make_pressure_frame(r['timestamp'], r['left'], r['right']) for r in records]
    except (KeyError, PressureError) as e:
        raise FormatError('Invalid pressure record in {}: {}'.format(filepath, e))


def save_pressure_binary(frames, filepath):
    """
    Packed raw pressure: magic, little-endian uint32 version and frame count,
    then per frame the timestamp and 484 sensor values as float64.
    """
    make_parent_dir(filepath)
    with open(filepath, 'wb') as fid:
        fid.write(PRESSURE_MAGIC)
        fid.write(np.array([FORMAT_VERSION, len(frames)], dtype='<u4').tobytes())
        for frame in frames:
            values = np.concatenate([[frame.timestamp], frame.left, frame.right])
            fid.write(values.astype('<f8').tobytes())


def load_pressure_binary(filepath):
    if not os.path.isfile(filepath):
        raise FormatError('File not found: {}'.format(filepath))

    with open(filepath, 'rb') as fid:
        blob = fid.read()

    if blob[:len(PRESSURE_MAGIC)] != PRESSURE_MAGIC:
        raise FormatError('Not a pressure file: {}'.format(filepath))

    version, n_frames = np.frombuffer(blob, dtype='<u4', count=2, offset=len(PRESSURE_MAGIC))
    if version != FORMAT_VERSION:
        raise FormatError('Unsupported pressure file version {}'.format(version))

    width = 1 + 2 * N_SENSORS
    start = len(PRESSURE_MAGIC) + 8
    if len(blob) - start != 8 * width * n_frames:
        raise FormatError('Truncated pressure file: {}'.format(filepath))

    data = np.frombuffer(blob, dtype='<f8', offset=start).reshape(int(n_frames), width)

    return [make_pressure_frame(row[0], row[1:1 + N_SENSORS], row[1 + N_SENSORS:]) for row in data]


def load_pressure(filepath):
    """
    Raw pressure from either a '.prs' binary or a '.jsonl' file.
    """
    if filepath.endswith('.prs'):
        return load_pressure_binary(filepath)

    return load_pressure_jsonl(filepath)


def save_annotation(contacts, filepath, body_weight):
    header = {'format': ANNOTATION_FORMAT, 'version': FORMAT_VERSION,
              'n_frames': len(contacts), 'body_weight': float(body_weight)}
    records = [{'frame': t, 'p_norm': _floats(c.p_norm), 'labels': [int(v) for v in c.labels]}
               for t, c in enumerate(contacts)]

    _write_jsonl(filepath, header, records)
    log.info('Saved contact annotation of %d frames to %s', len(contacts), filepath)


def load_annotation(filepath):
    """
    Returns:
        contacts: (list) DenseContact per frame.
        body_weight: (float) Weight used for the normalization.
    """
    header, records = _read_jsonl(filepath, ANNOTATION_FORMAT)

    contacts = [DenseContact(
        np.array(_field(r, 'p_norm', filepath), dtype=float),
        np.array(_field(r, 'labels', filepath), dtype=int)) for r in records]

    return contacts, float(header['body_weight'])


def save_predictions(predictions, filepath):
    header = {'format': PREDICTION_FORMAT, 'version': FORMAT_VERSION,
              'n_frames': len(predictions)}
    records = [{'frame': t, 'contact_prob': _floats(p.contact_prob),
                'pressure': _floats(p.pressure)} for t, p in enumerate(predictions)]

    _write_jsonl(filepath, header, records)
    log.info('Saved %d contact predictions to %s', len(predictions), filepath)


def load_predictions(filepath):
    _, records = _read_jsonl(filepath, PREDICTION_FORMAT)

    return [FppPrediction(
        np.array(_field(r, 'contact_prob', filepath), dtype=float),
        np.array(_field(r, 'pressure', filepath), dtype=float)) for r in records]


def save_metrics(reports, filepath):
    """
    One record per sequence report.
    """
    header = {'format': METRICS_FORMAT, 'version': FORMAT_VERSION, 'n_frames': len(reports)}

    _write_jsonl(filepath, header, [r.to_record() for r in reports])


def load_metrics(filepath):
    _, records = _read_jsonl(filepath, METRICS_FORMAT)

    return records


def read_format(filepath):
    """
    Returns:
        (str) Format tag of a line-delimited file, or 'pressure-binary' for
            a packed pressure file.
    """
    if not os.path.isfile(filepath):
        raise FormatError('File not found: {}'.format(filepath))

    with open(filepath, 'rb') as fid:
        head = fid.readline()

    if head.startswith(PRESSURE_MAGIC):
        return 'pressure-binary'

    try:
        return json.loads(head.decode('utf-8')).get('format')
    except (ValueError, UnicodeDecodeError, AttributeError):
        raise FormatError('Unrecognized file: {}'.format(filepath))


def load_contacts(filepath):
    """
    Per-frame contact from either an annotation or a prediction file.
    """
    kind = read_format(filepath)

    if kind == ANNOTATION_FORMAT:
        return load_annotation(filepath)[0]
    if kind == PREDICTION_FORMAT:
        return load_predictions(filepath)

    raise FormatError('{} holds neither annotations nor predictions'.format(filepath))
