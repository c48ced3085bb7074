"""
Description:
    Tests of the evaluation plots and the collected metrics table.

To-do:
"""
# third party imports
import numpy as np

# local imports
from analysis import collect_metrics, load_series, plot_foot_acceleration, plot_trajectories
from managers.formats import save_metrics
from managers.metrics import (
    MetricsReport, REPORT_FIELDS, foot_acceleration_series, trajectory_series)


def _write_run(tmp_path, name, offset):
    prefix = str(tmp_path / name)
    pelvis = np.cumsum(np.full((6, 3), 0.01), axis=0)
    joints = np.random.RandomState(0).randn(6, 24, 3)

    trajectory_series(pelvis + offset, pelvis, 1.0 / 30.0).to_csv(
        prefix + '_trajectory.csv', index=False)
    foot_acceleration_series(joints, 1.0 / 30.0).to_csv(
        prefix + '_foot_acceleration.csv', index=False)

    return prefix


def test_plots_are_written(tmp_path):
    runs = [load_series(_write_run(tmp_path, name, offset))
            for name, offset in (('vp', 0.0), ('rgbdp', 0.02))]

    plot_trajectories([('vp', runs[0][0]), ('rgbdp', runs[1][0])],
                      str(tmp_path / 'trajectory.png'))
    plot_foot_acceleration([('vp', runs[0][1]), ('rgbdp', runs[1][1])],
                           str(tmp_path / 'foot.png'))

    assert (tmp_path / 'trajectory.png').stat().st_size > 0
    assert (tmp_path / 'foot.png').stat().st_size > 0


def test_metrics_are_collected(tmp_path):
    prefix = _write_run(tmp_path, 'vp', 0.0)
    values = dict.fromkeys(REPORT_FIELDS, 2.0)
    values['sequence'] = 'walk'
    save_metrics([MetricsReport(**values)], prefix + '_metrics.jsonl')

    df = collect_metrics([prefix, str(tmp_path / 'missing')], ['vp', 'missing'])

    assert df['run'].tolist() == ['vp']
    assert df['mpjpe'].tolist() == [2.0]
