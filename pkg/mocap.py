"""
Description:
    Command-line entry point of the toolkit. Every command reads one .ini
    file (see ./config/), applies the command-line overrides and writes its
    outputs next to the 'out' prefix.

        synth       scripted motion -> sequence container, raw pressure, initial poses
        annotate    raw pressure -> dense contact annotation
        fit-rgbdp   sequence + pressure -> fitted body parameters (3 stages)
        vp          sequence + initial poses + contact -> refined body parameters
        train-fpp   sequences + annotations -> FPP-Net checkpoint
        predict     sequence + checkpoint -> contact and pressure predictions
        evaluate    sequence + fitted parameters -> metrics and plot series

    Exit codes: 0 on success, 1 when the configuration or an input file is
    invalid or missing, 2 on any other failure. Failures write one
    key=value diagnostic line to stderr.

To-do:
"""
# standard imports
import argparse
from collections import OrderedDict
import json
import logging as log
import os
import sys

# third party imports
import numpy as np
import pandas as pd

# local imports
from managers.body_model import BodyModel, Camera, load_or_build_templates
from managers.energy import (
    DEPTH_CAP, EnergyError, EnergyWeights, WEIGHT_KEYS, load_or_fit_gmm_prior)
from managers.formats import (
    FormatError, PRESSURE_FORMAT, SEQUENCE_FORMAT, load_annotation, load_contacts,
    load_pressure_binary, load_pressure_jsonl, load_sequence, read_format, save_annotation,
    save_metrics, save_predictions, save_pressure_binary, save_sequence)
from managers.fpp_net import (
    EpochLoss, FppConfig, FppError, TrainingConfig, build_model, load_checkpoint,
    normalize_keypoints, predict_sequence, save_checkpoint, train)
from managers.metrics import (
    FIT_CONTACT_THRESHOLD, PELVIS, evaluate_sequence, foot_acceleration_series,
    reports_to_dataframe, trajectory_series)
from managers.optimizer import OptimizerError
from managers.pipelines import (
    FitResult, PipelineConfig, PipelineError, STAGE_KEYS, initial_pose_dataframe,
    initial_poses_from_dataframe, run_rgbdp, vp_optimize)
from managers.pressure_contact import (
    annotate_sequence, build_sensor_vertex_map, estimate_body_weight)
from managers.synth_oracle import (
    DEFAULT_BODY_WEIGHT, MotionScript, NoiseSpec, SynthError, initial_pose_stub,
    motion_library, synthesize_sequence)
from utils.config_parser import ConfigError, ConfigParser
from utils.set_logging import set_logging
from utils.utilities import make_parent_dir

# global variables
CONFIG_DIR = './config'
DEFAULT_ENERGY_CONFIG = os.path.join(CONFIG_DIR, 'energy.ini')
DEFAULT_OPTIMIZER_CONFIG = os.path.join(CONFIG_DIR, 'optimizer.ini')
DEFAULT_ADULT_TEMPLATE = './data/templates/adult_template.bin'
DEFAULT_CHILD_TEMPLATE = './data/templates/child_template.bin'
DEFAULT_GMM_ASSET = './data/gmm_prior.bin'
DEFAULT_GMM_COMPONENTS = 8

BASE_KEYS = ['out', 'seed']
TEMPLATE_KEYS = ['adult_template', 'child_template']
ENERGY_KEYS = WEIGHT_KEYS + ['depth_cap', 'gmm_components', 'gmm_asset']

COMMAND_KEYS = {
    'synth': BASE_KEYS + TEMPLATE_KEYS + MotionScript.KEYS + NoiseSpec.KEYS + [
        'beta', 'subject', 'body_weight', 'init_alpha', 'fx', 'fy', 'cx', 'cy'],
    'annotate': BASE_KEYS + TEMPLATE_KEYS + [
        'input', 'body_weight', 'standing_start', 'standing_stop'],
    'fit-rgbdp': BASE_KEYS + TEMPLATE_KEYS + [
        'input', 'annotation', 'body_weight', 'n_frames', 'energy_config', 'optimizer_config'],
    'vp': BASE_KEYS + TEMPLATE_KEYS + [
        'input', 'init_params', 'contacts', 'alpha', 'n_frames', 'energy_config',
        'optimizer_config'],
    'train-fpp': BASE_KEYS + TEMPLATE_KEYS + FppConfig.KEYS + TrainingConfig.KEYS + [
        'inputs', 'annotations', 'body_weight'],
    'predict': BASE_KEYS + ['input', 'checkpoint'],
    'evaluate': BASE_KEYS + TEMPLATE_KEYS + [
        'input', 'fit', 'contacts', 'contact_threshold', 'relative'],
}

COMMAND_HELP = OrderedDict([
    ('synth', 'Synthesize a scripted motion with observations and ground truth.'),
    ('annotate', 'Annotate dense foot contact from raw insole pressure.'),
    ('fit-rgbdp', 'Fit the body model to depth, keypoints and pressure.'),
    ('vp', 'Refine initial poses with keypoints, contact and depth anchors.'),
    ('train-fpp', 'Train the contact and pressure network.'),
    ('predict', 'Predict contact and pressure from keypoints.'),
    ('evaluate', 'Compute metrics and plot series of a fit result.'),
])

# failures of the inputs rather than of the computation
VALIDATION_ERRORS = (ConfigError, FormatError, FileNotFoundError)


def parse_argument(argv=None):
    """
    Parse input arguments.

    Returns:
        - parsed arguments
    """
    parser = argparse.ArgumentParser(
        description='Contact-aware motion capture: synthesize, annotate, fit and evaluate.')

    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    for command, help_text in COMMAND_HELP.items():
        subparser = subparsers.add_parser(command, help=help_text, description=help_text)

        subparser.add_argument(
            '--config',
            default=None,
            help='Path to the .ini configuration file. Defaults to {}/{}.ini'.format(
                CONFIG_DIR, command.replace('-', '_')))

        subparser.add_argument(
            '--seed',
            type=int,
            default=None,
            help='Overwrite the seed of the configuration.')

        subparser.add_argument(
            '--out',
            default=None,
            help='Overwrite the output prefix of the configuration.')

        subparser.add_argument(
            '--weights-override',
            dest='weights_override',
            action='append',
            default=[],
            metavar='KEY=VALUE',
            help='Overwrite one energy weight. Can be repeated.')

        subparser.add_argument(
            '--log_file',
            default=None,
            help='Also write the log to this file.')

        subparser.add_argument(
            '--verbose',
            action='store_true',
            help='Log per-iteration details.')

    return parser.parse_args(argv)


def parse_weights_override(items):
    """
    Parse repeated 'key=value' energy weight overrides.

    Inputs:
        items: (list) Strings of the form 'lambda_3d=0'.

    Returns:
        (OrderedDict) Weight name -> value.
    """
    overrides = OrderedDict()

    for item in items:
        if '=' not in item:
            raise ConfigError('Weight override \'{}\' is not of the form key=value'.format(item))

        key, value = [part.strip() for part in item.split('=', 1)]
        if key not in WEIGHT_KEYS:
            raise ConfigError('Invalid config key \'{}\' in --weights-override'.format(key))

        try:
            overrides[key] = float(value)
        except ValueError:
            raise ConfigError('Weight override \'{}\' needs a number, got \'{}\''.format(key, value))

    return overrides


def _require(configparser, key):
    if not configparser.has_key(key):
        raise ConfigError('Missing required config key \'{}\''.format(key))

    return configparser.getstr(key)


def _optional(configparser, key, getter, default):
    if configparser.has_key(key):
        return getattr(configparser, getter)(key)

    return default


def _build(from_config, configparser, section='DEFAULT'):
    """
    Run a from_config() constructor, reporting rejected values as config errors.
    """
    try:
        return from_config(configparser, section=section)
    except (EnergyError, OptimizerError, SynthError, FppError) as e:
        raise ConfigError(str(e))


def _output_prefix(configparser):
    out = _require(configparser, 'out')
    make_parent_dir(out)

    return out


def _body_model(configparser):
    adult, child = load_or_build_templates(
        _optional(configparser, 'adult_template', 'getstr', DEFAULT_ADULT_TEMPLATE),
        _optional(configparser, 'child_template', 'getstr', DEFAULT_CHILD_TEMPLATE))

    return BodyModel(adult, child)


def _energy_config(configparser, weights_override):
    """
    Load the shared energy configuration with the weight overrides applied.

    Returns:
        weights: (EnergyWeights) Term weights.
        energy_config: (ConfigParser) The loaded configuration.
    """
    filepath = _optional(configparser, 'energy_config', 'getstr', DEFAULT_ENERGY_CONFIG)
    energy_config = ConfigParser(filepath)

    for key, value in (weights_override or {}).items():
        log.info('Overriding %s = %g', key, value)
        energy_config.overwrite(key, value)

    energy_config.validate_keys(ENERGY_KEYS)

    return _build(EnergyWeights.from_config, energy_config), energy_config


def _depth_cap(energy_config):
    return _optional(energy_config, 'depth_cap', 'getfloat', DEPTH_CAP)


def _pose_prior(energy_config):
    return load_or_fit_gmm_prior(
        _optional(energy_config, 'gmm_asset', 'getstr', DEFAULT_GMM_ASSET),
        motion_library,
        n_components=_optional(energy_config, 'gmm_components', 'getint', DEFAULT_GMM_COMPONENTS))


def _pipeline_config(configparser, depth_cap):
    filepath = _optional(configparser, 'optimizer_config', 'getstr', DEFAULT_OPTIMIZER_CONFIG)
    optimizer_config = ConfigParser(filepath)
    optimizer_config.validate_keys(STAGE_KEYS)

    try:
        return PipelineConfig.from_config(optimizer_config, depth_cap)
    except (OptimizerError, PipelineError) as e:
        raise ConfigError(str(e))


def _annotate_raw_pressure(sequence, model, body_weight=None):
    """
    Dense contact of a sequence from its own raw pressure. The body weight is
    estimated on the standing segment unless given.
    """
    if sequence.raw_pressure is None:
        raise FormatError('sequence \'{}\' holds no raw pressure to annotate'.format(
            sequence.subject))

    if body_weight is None:
        start, stop = sequence.standing_segment
        body_weight = estimate_body_weight(sequence.raw_pressure[start:stop])

    return annotate_sequence(sequence.raw_pressure, build_sensor_vertex_map(model.adult), body_weight)


def _truncate(configparser, sequence):
    n_frames = _optional(configparser, 'n_frames', 'getint', None)
    if n_frames is None or n_frames >= len(sequence):
        return sequence

    log.info('Using the first %d of %d frames', n_frames, len(sequence))

    return sequence.truncate(n_frames)


def cmd_synth(configparser, weights_override=None):
    """
    Synthesize one scripted motion with noisy observations.

    Outputs:
        <out>.jsonl, <out>.bin: Sequence container with ground truth.
        <out>_pressure.prs: Raw insole pressure.
        <out>_init_params.csv: Initial-pose estimates for VP-MoCap.
    """
    out = _output_prefix(configparser)
    script = _build(MotionScript.from_config, configparser)
    noise = _build(NoiseSpec.from_config, configparser)

    cam = Camera(
        _optional(configparser, 'fx', 'getfloat', 500.0),
        _optional(configparser, 'fy', 'getfloat', 500.0),
        _optional(configparser, 'cx', 'getfloat', 250.0),
        _optional(configparser, 'cy', 'getfloat', 250.0))

    model = _body_model(configparser)
    sequence = synthesize_sequence(
        script, model, cam, noise,
        body_weight=_optional(configparser, 'body_weight', 'getfloat', DEFAULT_BODY_WEIGHT),
        subject=_optional(configparser, 'subject', 'getstr', 'synthetic'))

    init_poses = initial_pose_stub(
        sequence.gt.params, noise, alpha=_optional(configparser, 'init_alpha', 'getfloat', 1.0))

    save_sequence(sequence, out + '.jsonl')
    save_pressure_binary(sequence.raw_pressure, out + '_pressure.prs')
    initial_pose_dataframe(init_poses).to_csv(out + '_init_params.csv', index=False)


def cmd_annotate(configparser, weights_override=None):
    """
    Annotate dense contact from raw pressure. The input is a sequence
    container, a pressure .jsonl file or a packed .prs file.

    Outputs:
        <out>_contact.jsonl: Normalized pressure and labels per frame.
    """
    out = _output_prefix(configparser)
    filepath = _require(configparser, 'input')
    kind = read_format(filepath)

    if kind == SEQUENCE_FORMAT:
        sequence = load_sequence(filepath)
        if sequence.raw_pressure is None:
            raise FormatError('{} holds no raw pressure'.format(filepath))
        frames = sequence.raw_pressure
        start, stop = sequence.standing_segment
    elif kind in (PRESSURE_FORMAT, 'pressure-binary'):
        frames = load_pressure_binary(filepath) if kind == 'pressure-binary' \
            else load_pressure_jsonl(filepath)
        start = _optional(configparser, 'standing_start', 'getint', 0)
        stop = _optional(configparser, 'standing_stop', 'getint', len(frames))
    else:
        raise FormatError('{} holds no pressure data'.format(filepath))

    body_weight = _optional(configparser, 'body_weight', 'getfloat', None)
    if body_weight is None:
        body_weight = estimate_body_weight(frames[start:stop])

    model = _body_model(configparser)
    contacts = annotate_sequence(frames, build_sensor_vertex_map(model.adult), body_weight)

    save_annotation(contacts, out + '_contact.jsonl', body_weight)


def cmd_fit_rgbdp(configparser, weights_override=None):
    """
    Fit shape, initial pose and per-frame poses to depth, keypoints and
    pressure-derived contact.

    Outputs:
        <out>_params.csv, <out>_energy.csv: Fit result.
    """
    out = _output_prefix(configparser)
    sequence = _truncate(configparser, load_sequence(_require(configparser, 'input')))
    model = _body_model(configparser)

    if configparser.has_key('annotation'):
        contacts = load_annotation(configparser.getstr('annotation'))[0][:len(sequence)]
    else:
        contacts = _annotate_raw_pressure(
            sequence, model, _optional(configparser, 'body_weight', 'getfloat', None))

    weights, energy_config = _energy_config(configparser, weights_override)
    config = _pipeline_config(configparser, _depth_cap(energy_config))

    result, (alpha, _) = run_rgbdp(
        sequence.with_pressure(contacts), model, weights, config, _pose_prior(energy_config))
    log.info('Fitted %s with alpha %.3f', sequence.subject, alpha)

    result.save(out)


def cmd_vp(configparser, weights_override=None):
    """
    Refine initial poses with monocular keypoints, contact and depth anchors.

    Outputs:
        <out>_params.csv, <out>_energy.csv: Fit result.
    """
    out = _output_prefix(configparser)
    sequence = _truncate(configparser, load_sequence(_require(configparser, 'input')))

    init_df = pd.read_csv(_require(configparser, 'init_params'), float_precision='round_trip')
    init_poses = initial_poses_from_dataframe(init_df)[:len(sequence)]

    contacts = None
    if configparser.has_key('contacts'):
        contacts = load_contacts(configparser.getstr('contacts'))[:len(sequence)]

    model = _body_model(configparser)
    weights, energy_config = _energy_config(configparser, weights_override)
    config = _pipeline_config(configparser, _depth_cap(energy_config))

    result = vp_optimize(
        sequence, init_poses, contacts, model, weights, config,
        alpha=_optional(configparser, 'alpha', 'getfloat', None), template=model.adult)

    result.save(out)


def cmd_train_fpp(configparser, weights_override=None):
    """
    Train FPP-Net on keypoints and dense contact of one or more sequences.

    Outputs:
        <out>_fpp.bin: Checkpoint.
        <out>_loss.png, <out>_loss.csv: Loss history.
    """
    out = _output_prefix(configparser)
    inputs = configparser.get_str_list('inputs')
    if not inputs:
        raise ConfigError('Missing required config key \'inputs\'')

    annotations = _optional(configparser, 'annotations', 'get_str_list', None)
    if annotations is not None and len(annotations) != len(inputs):
        raise ConfigError('{} annotations for {} inputs'.format(len(annotations), len(inputs)))

    fpp_config = _build(FppConfig.from_config, configparser)
    training = _build(TrainingConfig.from_config, configparser)

    body_model = None
    dataset = []
    for i, filepath in enumerate(inputs):
        sequence = load_sequence(filepath)

        if annotations is not None:
            contacts = load_annotation(annotations[i])[0]
        else:
            body_model = body_model or _body_model(configparser)
            contacts = _annotate_raw_pressure(
                sequence, body_model, _optional(configparser, 'body_weight', 'getfloat', None))

        if len(contacts) != len(sequence):
            raise FormatError('{} contact frames for the {} frames of {}'.format(
                len(contacts), len(sequence), filepath))

        keypoints = np.stack([
            normalize_keypoints(frame.keypoints2d, sequence.image_size) for frame in sequence.frames])
        labels = np.stack([contact.labels for contact in contacts])
        targets = np.stack([contact.p_norm for contact in contacts])
        dataset.append((keypoints, labels, targets))

    callback = EpochLoss()
    model = train(build_model(fpp_config, seed=training.seed), dataset, training, callback)

    save_checkpoint(model, out + '_fpp.bin')
    callback.save_loss(out + '_loss.png')


def cmd_predict(configparser, weights_override=None):
    """
    Predict per-vertex contact and pressure from the keypoints of a sequence.

    Outputs:
        <out>_prediction.jsonl: Contact probability and pressure per frame.
    """
    out = _output_prefix(configparser)
    sequence = load_sequence(_require(configparser, 'input'))
    model = load_checkpoint(_require(configparser, 'checkpoint'))

    predictions = predict_sequence(
        model, [frame.keypoints2d for frame in sequence.frames], sequence.image_size)

    save_predictions(predictions, out + '_prediction.jsonl')


def cmd_evaluate(configparser, weights_override=None):
    """
    Score a fit result against the ground truth of a synthetic sequence.

    Outputs:
        <out>_metrics.jsonl, <out>_metrics.csv: Metrics report.
        <out>_trajectory.csv: Start-relative pelvis trajectories over time.
        <out>_foot_acceleration.csv: Foot-joint acceleration over time.
    """
    out = _output_prefix(configparser)
    sequence = load_sequence(_require(configparser, 'input'))
    if sequence.gt is None:
        raise FormatError('{} holds no ground truth'.format(configparser.getstr('input')))

    fit = FitResult.load(_require(configparser, 'fit'))
    if len(fit) > len(sequence):
        raise FormatError('fit result has {} frames, the sequence {}'.format(
            len(fit), len(sequence)))
    sequence = sequence.truncate(len(fit))

    pred_contacts = None
    if configparser.has_key('contacts'):
        pred_contacts = load_contacts(configparser.getstr('contacts'))[:len(fit)]

    dt = 1.0 / sequence.frame_rate
    model = _body_model(configparser)

    report, pred_joints, gt_joints = evaluate_sequence(
        sequence.subject, fit.params, sequence.gt.params, model, sequence.floor,
        gt_contacts=sequence.gt.contacts,
        pred_contacts=pred_contacts,
        dt=dt,
        threshold=_optional(configparser, 'contact_threshold', 'getfloat', FIT_CONTACT_THRESHOLD),
        relative=_optional(configparser, 'relative', 'getbool', True))

    save_metrics([report], out + '_metrics.jsonl')
    reports_to_dataframe([report]).to_csv(out + '_metrics.csv', index=False)
    trajectory_series(pred_joints[:, PELVIS], gt_joints[:, PELVIS], dt).to_csv(
        out + '_trajectory.csv', index=False)
    foot_acceleration_series(pred_joints, dt).to_csv(out + '_foot_acceleration.csv', index=False)


COMMANDS = {
    'synth': cmd_synth,
    'annotate': cmd_annotate,
    'fit-rgbdp': cmd_fit_rgbdp,
    'vp': cmd_vp,
    'train-fpp': cmd_train_fpp,
    'predict': cmd_predict,
    'evaluate': cmd_evaluate,
}


def load_command_config(args):
    """
    Read the command configuration and apply the --seed and --out overrides.

    Returns:
        (ConfigParser) Validated configuration.
    """
    filepath = args.config or os.path.join(
        CONFIG_DIR, '{}.ini'.format(args.command.replace('-', '_')))
    configparser = ConfigParser(filepath)

    if args.seed is not None:
        configparser.overwrite('seed', args.seed)
    if args.out is not None:
        configparser.overwrite('out', args.out)

    configparser.validate_keys(COMMAND_KEYS[args.command])

    return configparser


def _diagnose(command, code, error):
    sys.stderr.write('status=error exit_code={} command={} error={} message={}\n'.format(
        code, command, type(error).__name__, json.dumps(str(error))))


def main(argv=None):
    """
    Main function.

    Returns:
        (int) Exit code.
    """
    args = parse_argument(argv)
    set_logging(log_file=args.log_file, log_level=log.DEBUG if args.verbose else log.INFO)

    try:
        weights_override = parse_weights_override(args.weights_override)
        configparser = load_command_config(args)
        COMMANDS[args.command](configparser, weights_override)
    except VALIDATION_ERRORS as e:
        log.error('%s failed: %s', args.command, e)
        _diagnose(args.command, 1, e)
        return 1
    except Exception as e:
        log.exception('%s failed', args.command)
        _diagnose(args.command, 2, e)
        return 2

    log.info('%s finished', args.command)

    return 0


if __name__ == '__main__':
    sys.exit(main())
