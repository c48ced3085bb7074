"""
Description:
    Plot the series written by 'mocap.py evaluate': pelvis trajectories over
    time against the ground truth and the acceleration of the foot joints
    over time. Several fit results (for example the weight ablation) can be
    overlaid, and their metrics are collected into one table.

To-do:
"""
# standard imports
import argparse
import logging as log
import os

# third party imports
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd

# local imports
from managers.formats import load_metrics
from utils.set_logging import set_logging
from utils.utilities import file_exists, make_parent_dir

# global variables
AXES = ['x', 'y', 'z']


def parse_argument():
    """
    Parse input arguments.

    Returns:
        - parsed arguments
    """
    parser = argparse.ArgumentParser(description='Plot evaluation series.')

    parser.add_argument(
        'prefixes',
        nargs='+',
        help='Output prefixes of evaluate runs.')

    parser.add_argument(
        '--labels',
        nargs='+',
        default=None,
        help='Legend label of each prefix. Defaults to the file names.')

    parser.add_argument(
        '--out',
        default='./output/analysis',
        help='Prefix of the plots and of the collected metrics table.')

    return parser.parse_args()


def load_series(prefix):
    """
    Load the plot series of one evaluate run.

    Inputs:
        prefix: (str) Output prefix of the run.

    Returns:
        trajectory: (pd.DataFrame) Trajectory series.
        acceleration: (pd.DataFrame) Foot-joint acceleration series.
    """
    trajectory = pd.read_csv(prefix + '_trajectory.csv')
    acceleration = pd.read_csv(prefix + '_foot_acceleration.csv')

    return trajectory, acceleration


def plot_trajectories(runs, filepath):
    """
    One panel per axis. The ground truth is drawn once, from the first run.

    Inputs:
        runs: (list) (label, trajectory dataframe) pairs.
        filepath: (str) Image to save.
    """
    fig, axes = plt.subplots(len(AXES), 1, sharex=True, figsize=(8, 8))

    for i, axis in enumerate(AXES):
        _, first = runs[0]
        axes[i].plot(first['time'], first['gt_' + axis], 'k--', label='ground truth')

        for label, df in runs:
            axes[i].plot(df['time'], df['pred_' + axis], label=label)

        axes[i].set_ylabel('{} (m)'.format(axis))

    axes[-1].set_xlabel('Time (s)')
    axes[0].legend(loc='best')

    log.info('Saving trajectory plot to %s', filepath)
    fig.savefig(filepath)
    plt.close(fig)


def plot_foot_acceleration(runs, filepath):
    """
    One panel per foot joint.

    Inputs:
        runs: (list) (label, acceleration dataframe) pairs.
        filepath: (str) Image to save.
    """
    joints = [c for c in runs[0][1].columns if c != 'time']
    fig, axes = plt.subplots(len(joints), 1, sharex=True, figsize=(8, 2 * len(joints)))

    for i, joint in enumerate(joints):
        for label, df in runs:
            axes[i].plot(df['time'], df[joint], label=label)
        axes[i].set_ylabel('{}\n(m/s^2)'.format(joint))

    axes[-1].set_xlabel('Time (s)')
    axes[0].legend(loc='best')

    log.info('Saving foot acceleration plot to %s', filepath)
    fig.savefig(filepath)
    plt.close(fig)


def collect_metrics(prefixes, labels):
    """
    Returns:
        (pd.DataFrame) One row per run that has a metrics file.
    """
    rows = []
    for prefix, label in zip(prefixes, labels):
        filepath = prefix + '_metrics.jsonl'
        if not file_exists(filepath):
            log.warning('No metrics for %s', prefix)
            continue

        for record in load_metrics(filepath):
            record['run'] = label
            rows.append(record)

    return pd.DataFrame(rows)


def main():
    """
    Main function.
    """
    set_logging()
    args = parse_argument()

    labels = args.labels or [os.path.basename(p) for p in args.prefixes]
    if len(labels) != len(args.prefixes):
        raise ValueError('{} labels for {} prefixes'.format(len(labels), len(args.prefixes)))

    series = [load_series(prefix) for prefix in args.prefixes]
    make_parent_dir(args.out)

    plot_trajectories(
        [(label, s[0]) for label, s in zip(labels, series)], args.out + '_trajectory.png')
    plot_foot_acceleration(
        [(label, s[1]) for label, s in zip(labels, series)], args.out + '_foot_acceleration.png')

    metrics = collect_metrics(args.prefixes, labels)
    if not metrics.empty:
        metrics.to_csv(args.out + '_metrics.csv', index=False)
        log.info('Collected metrics:\n%s', metrics.to_string(index=False))


if __name__ == '__main__':
    main()
