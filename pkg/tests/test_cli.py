import filecmp
import os

import numpy as np
import pytest
import yaml

from LegFusion.__main__ import main
from LegFusion.legfusion import run_fuse, run_simulate
from LegFusion.modules.config import load_config
from LegFusion.modules.evaluation import evaluate_trajectory
from LegFusion.modules.log_io import read_covariance, read_diagnostics, read_log, read_trajectory, write_log
from LegFusion.modules.simulator import generate_log, standard_scenarios

from .conftest import FAST_SENSORS, SHORT_CORRIDOR


SMALL = [f'corridor_length={SHORT_CORRIDOR}'] + [f'{k}={v}' for k, v in FAST_SENSORS.items()]


def simulate(out, scenario:str = 'corridor_featured', seed:int = 0, *opts) -> int:
    return main(['simulate', '--scenario', scenario, '--seed', str(seed), '-o', str(out), '--opt', *SMALL, *opts])


@pytest.fixture(scope='module')
def pipeline(tmp_path_factory):
    '''Short corridor_featured log, simulated and fused once for the module'''
    root = tmp_path_factory.mktemp('pipeline')
    log_dir, fused = root / 'log', root / 'adaptive'
    assert simulate(log_dir) == 0
    assert main(['fuse', '--log', str(log_dir), '-o', str(fused)]) == 0
    return root


def test_simulate_writes_log(pipeline):
    log_dir = pipeline / 'log'
    for name in ('imu.csv', 'leg.csv', 'gt.csv', 'segments.csv', 'config.yaml', 'simulate.log'):
        assert (log_dir / name).is_file()
    assert len(os.listdir(log_dir / 'lidar')) > 0
    cfg = load_config(str(log_dir / 'config.yaml'))
    assert cfg.scenario == 'corridor_featured'
    assert cfg.n_azimuth == FAST_SENSORS['n_azimuth']
    with open(log_dir / 'simulate.log') as f:
        text = f.read()
    assert "Process 'simulate' finished" in text
    assert 'Time elapsed' in text

def test_fuse_writes_outputs(pipeline):
    fused = pipeline / 'adaptive'
    for name in ('trajectory.csv', 'diagnostics.csv', 'covariance.csv', 'config.yaml', 'fuse.log'):
        assert (fused / name).is_file()
    traj = read_trajectory(str(fused / 'trajectory.csv'))
    log = read_log(str(pipeline / 'log'))
    assert len(traj) == len(log.scans)
    t, cov = read_covariance(str(fused / 'covariance.csv'))
    np.testing.assert_allclose(t, traj.t)
    report = evaluate_trajectory(traj, log.segments)
    assert report.m_end < 0.5

def test_evaluate_and_plot(pipeline):
    fused, log_dir = pipeline / 'adaptive', pipeline / 'log'
    report = pipeline / 'report.yml'
    assert main(['evaluate', '--traj', str(fused / 'trajectory.csv'), '--segments', str(log_dir / 'segments.csv'),
                 '--gt', str(log_dir / 'gt.csv'), '--cov', str(fused / 'covariance.csv'), '-o', str(report)]) == 0
    with open(report) as f:
        content = yaml.safe_load(f)
    assert list(content) == ['adaptive']
    assert set(content['adaptive']['m_list']) == {'a-b', 'b-a'}
    assert content['adaptive']['nees_mean'] > 0
    assert (pipeline / 'report.csv').is_file()

    svg = pipeline / 'plot.svg'
    assert main(['plot', '--traj', str(fused / 'trajectory.csv'), '--diag', str(fused / 'diagnostics.csv'),
                 '--gt', str(log_dir / 'gt.csv'), '-o', str(svg)]) == 0
    assert svg.read_text().lstrip().startswith('<?xml')

def test_invalid_configuration_exit_code(pipeline, tmp_path):
    assert main(['fuse', '--log', str(pipeline / 'log'), '-o', str(tmp_path), '--opt', 'w1=0.7']) == 2
    bad = tmp_path / 'bad.yml'
    bad.write_text('Adaptive:\n  eta: [1.0\n')
    assert main(['fuse', '--log', str(pipeline / 'log'), '-o', str(tmp_path), '-f', str(bad)]) == 2

def test_missing_config_file_exit_code(tmp_path):
    assert main(['simulate', '-o', str(tmp_path / 'log'), '-f', str(tmp_path / 'nowhere.yml')]) == 2
    assert not (tmp_path / 'log').exists()

def test_bad_option_format():
    with pytest.raises(SystemExit) as e:
        main(['simulate', '-o', 'unused', '--opt', 'eta'])
    assert e.value.code == 2

def test_data_error_exit_code(tmp_path):
    assert main(['fuse', '--log', str(tmp_path / 'missing'), '-o', str(tmp_path / 'out')]) == 3
    assert main(['evaluate', '--traj', str(tmp_path / 'none.csv'), '--segments', str(tmp_path / 'none.csv'),
                 '--label', 'a', 'b', '-o', str(tmp_path / 'r.yml')]) == 3

def test_simulate_is_byte_identical(tmp_path):
    traj_opts = ['corridor_length=2', 'cruise_speed=1.0']
    for name in ('a', 'b'):
        assert simulate(tmp_path / name, 'corridor_ab', 4, *traj_opts) == 0
    cmp = filecmp.dircmp(tmp_path / 'a', tmp_path / 'b', ignore=['simulate.log'])
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert cmp.same_files
    lidar = filecmp.dircmp(tmp_path / 'a' / 'lidar', tmp_path / 'b' / 'lidar')
    assert not lidar.diff_files and len(lidar.same_files) > 0


# acceptance runs on the full-size scenarios, deselected by default

def _fused(tmp_path, scenario:str, seed:int, **fuse_options):
    log_dir = tmp_path / f'{scenario}_{seed}'
    if not log_dir.is_dir():
        run_simulate(str(log_dir), scenario=scenario, seed=seed)
    tag = '_'.join(f'{k}-{v}' for k, v in fuse_options.items()) or 'default'
    paths = run_fuse(str(log_dir), str(tmp_path / f'{scenario}_{seed}_{tag}'), **fuse_options)
    log = read_log(str(log_dir))
    traj = read_trajectory(paths['trajectory'])
    _, cov = read_covariance(paths['covariance'])
    report = evaluate_trajectory(traj, log.segments, gt=log.gt, cov=cov)
    return report, log, read_diagnostics(paths['diagnostics'])

@pytest.mark.slow
def test_featured_corridor_consistency(tmp_path):
    closed, nees = 0, []
    for seed in range(20):
        report, log, _ = _fused(tmp_path, 'corridor_featured', seed)
        closed += report.m_end < 0.01 * log.gt.path_length()
        nees.append(report.nees_mean)
    assert closed >= 18
    assert 1.0 <= np.mean(nees) <= 9.0

@pytest.mark.slow
def test_noiseless_featured_corridor(tmp_path):
    scenario = standard_scenarios()['corridor_featured']
    log = generate_log(scenario.world, scenario.traj, scenario.cfg.noiseless(), 0, scenario.segments)
    write_log(str(tmp_path / 'noiseless'), log)
    paths = run_fuse(str(tmp_path / 'noiseless'), str(tmp_path / 'fused'))
    report = evaluate_trajectory(read_trajectory(paths['trajectory']), log.segments)
    assert report.m_end < 1e-2

@pytest.mark.slow
def test_leg_dead_reckoning_scale_error(tmp_path):
    report, _, _ = _fused(tmp_path, 'corridor_ab', 0, use_lidar=False)
    assert 0.02 <= report.m_list_total <= 0.05

@pytest.mark.slow
def test_adaptive_beats_fixed_weights(tmp_path):
    wins = 0
    for seed in range(10):
        adaptive, _, _ = _fused(tmp_path, 'corridor_ab', seed)
        fixed, _, _ = _fused(tmp_path, 'corridor_ab', seed, adaptive_enabled=False)
        wins += adaptive.m_end < fixed.m_end and adaptive.m_list_total < fixed.m_list_total
    assert wins >= 9

@pytest.mark.slow
def test_open_area_is_less_degenerate(tmp_path):
    _, log, diagnostics = _fused(tmp_path, 'garage_L', 0)
    t_d = max(s.t_end for s in log.segments.groups()['a-d'])
    first_pass = diagnostics[diagnostics['t'] < t_d]
    x = np.array([log.gt.position_at(t)[0] for t in first_pass['t']])
    corridor = first_pass['d_smooth'][(x > 5.0) & (x < 25.0)]
    open_area = first_pass['d_smooth'][x > 33.0]
    assert corridor.mean() - open_area.mean() >= 0.2

@pytest.mark.slow
def test_pipeline_is_byte_identical(tmp_path):
    for name in ('a', 'b'):
        assert simulate(tmp_path / name / 'log') == 0
        assert main(['fuse', '--log', str(tmp_path / name / 'log'), '-o', str(tmp_path / name / 'fused')]) == 0
    for f in ('trajectory.csv', 'diagnostics.csv', 'covariance.csv'):
        assert filecmp.cmp(tmp_path / 'a' / 'fused' / f, tmp_path / 'b' / 'fused' / f, shallow=False)
