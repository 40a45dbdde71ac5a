#!/usr/bin/env python3

r"""
        __                 ______            _
       / /   ___  ____ _  / ____/_  _______(_)___  ____
      / /   / _ \/ __ `/ / /_  / / / / ___/ / __ \/ __ \
     / /___/  __/ /_/ / / __/ / /_/ (__  ) / /_/ / / / /
    /_____/\___/\__, / /_/    \__,_/____/_/\____/_/ /_/
               /____/
                     Adaptive LiDAR-IMU-leg odometry fusion

"""

import logging
import os
import textwrap
from contextlib import contextmanager
from datetime import datetime, timezone

import numpy as np

from LegFusion import __version__, LegFusion_path
from .modules.adaptive_fusion import run_fusion
from .modules.config import RunConfig, dump_config, load_config
from .modules.errors import DataError, MeasurementUnavailable
from .modules.evaluation import evaluate_trajectory
from .modules.log_io import (read_covariance, read_diagnostics, read_log, read_segments,
                             read_trajectory, write_covariance, write_diagnostics,
                             write_log, write_report, write_trajectory)
from .modules.manifold import NominalState, Rotation
from .modules.plotting import plot_trajectories
from .modules.simulator import SensorLog, generate_log, standard_scenarios

logger = logging.getLogger()


@contextmanager
def _run_logging(name:str, out_dir:str):
    '''
    Log file, start banner and elapsed time of one subcommand run

    A FileHandler '<name>.log' is added to the output directory for the
    duration of the run.
    '''
    os.makedirs(out_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(out_dir, f"{name}.log"), mode='w')
    logger.addHandler(handler)

    time_start = datetime.now(timezone.utc)
    logger.info(f"LegFusion v{__version__} {name} started at {time_start.strftime('%Y-%m-%d %H:%M:%S')} UTC\n")
    logger.debug(f"LegFusion path: {LegFusion_path}")
    try:
        yield
    finally:
        time_elapsed = datetime.now(timezone.utc) - time_start
        logger.info(f"\nProcess '{name}' finished\n" +
                    f"Time elapsed: {time_elapsed.seconds//3600 + 24*time_elapsed.days}h {(time_elapsed.seconds//60)%60}m {time_elapsed.seconds%60}s\n")
        logger.removeHandler(handler)
        handler.close()

def _config(config:RunConfig, config_file:str, options:dict) -> RunConfig:
    if config is None:
        return load_config(config_file, **options)
    return config.replace(**options) if options else config

def _default_labels(files:list[str]) -> list[str]:
    '''File name, or the parent directory for the standard trajectory.csv'''
    return [os.path.basename(os.path.dirname(os.path.abspath(f))) if os.path.basename(f) == 'trajectory.csv' else os.path.splitext(os.path.basename(f))[0]
            for f in files]

def initial_state(log:SensorLog) -> NominalState:
    '''
    Filter start: first ground-truth pose, velocity by finite difference

    Without ground truth the filter starts at rest at the origin at the
    time of the first IMU sample.
    '''
    gt = log.gt
    if len(gt) == 0:
        t0 = log.imu[0].t if log.imu else 0.0
        logger.warning(f"WARNING: No ground truth in the log, starting at the origin at t={t0:.3f}")
        return NominalState(t=t0)
    R = Rotation.from_quaternion(gt.q[0]) if gt.q is not None else Rotation.identity()
    v = (gt.p[1] - gt.p[0]) / (gt.t[1] - gt.t[0]) if len(gt) > 1 else np.zeros(3)
    return NominalState(R=R, p=gt.p[0], v=v, t=gt.t[0])


def run_simulate(out_dir:str, config:RunConfig = None, config_file:str = None, **options) -> SensorLog:
    '''
    Generate a synthetic SensorLog directory for a named scenario

    Parameters
    ----------
    out_dir : str
        Directory to write the log into
    config : RunConfig, optional
        Validated configuration (def: None, loaded from 'config_file')
    config_file : str, optional
        YAML parameter file (def: None, defaults only)
    **options : dict
        Parameters overriding the configuration (e.g. scenario, seed)

    Returns
    -------
    SensorLog
        The generated log
    '''
    cfg = _config(config, config_file, options)
    with _run_logging('simulate', out_dir):
        scenario = standard_scenarios(
            cfg.sensor_config(),
            corridor_length = cfg.corridor_length,
            cruise_speed = cfg.cruise_speed,
            leg_scale_error = cfg.leg_scale_error,
            packet_loss = cfg.packet_loss)[cfg.scenario]
        logger.info(textwrap.dedent(f"""\
            Scenario: {scenario.name}
            Seed: {cfg.seed}
            Duration: {scenario.traj.duration:.1f} s
            Path length: {scenario.traj.path_length:.2f} m
            Leg scale error: {scenario.cfg.leg_scale_error:g}
            Leg packet loss: {list(scenario.cfg.packet_loss) or 'none'}"""))
        log = generate_log(scenario.world, scenario.traj, scenario.cfg, cfg.seed, scenario.segments)
        write_log(out_dir, log)
        dump_config(cfg, os.path.join(out_dir, 'config.yaml'))
        logger.info(f"\n{len(log.imu)} IMU samples, {len(log.scans)} scans, {len(log.leg)} leg samples written to {out_dir}")
    return log

def run_fuse(log_dir:str, out_dir:str, config:RunConfig = None, config_file:str = None, **options) -> dict:
    '''
    Fuse a SensorLog directory and write the estimated trajectory

    Mode flags are ordinary parameters: adaptive_enabled=False runs the
    fixed-weight baseline, use_leg=False and use_lidar=False drop a sensor.

    Parameters
    ----------
    log_dir : str
        SensorLog directory
    out_dir : str
        Directory for trajectory.csv, diagnostics.csv, covariance.csv and config.yaml
    config : RunConfig, optional
        Validated configuration (def: None, loaded from 'config_file')
    config_file : str, optional
        YAML parameter file (def: None, defaults only)
    **options : dict
        Parameters overriding the configuration

    Returns
    -------
    dict
        Paths of the written files
    '''
    cfg = _config(config, config_file, options)
    with _run_logging('fuse', out_dir):
        params = cfg.fusion_params()
        mode = 'adaptive' if params.adaptive.enabled else 'fixed weights (TFS)'
        sensors = ' + '.join(name for name, on in (('LiDAR', params.use_lidar), ('leg', params.use_leg)) if on) or 'none'
        logger.info(textwrap.dedent(f"""\
            Log: {log_dir}
            Mode: {mode}
            Aiding sensors: {sensors}"""))
        logger.debug(f"Parameters: {cfg.values}")

        log = read_log(log_dir)
        if not log.imu:
            raise DataError(f"Empty IMU stream in {log_dir}")
        start = initial_state(log)
        try:
            run = run_fusion(log.imu, log.scans, log.leg, start, params)
        except MeasurementUnavailable as e:
            logger.debug("", exc_info=True)
            raise DataError(f"Log cannot be fused: {e}") from e

        outputs = {
            'trajectory': os.path.join(out_dir, 'trajectory.csv'),
            'diagnostics': os.path.join(out_dir, 'diagnostics.csv'),
            'covariance': os.path.join(out_dir, 'covariance.csv'),
            'config': os.path.join(out_dir, 'config.yaml')}
        write_trajectory(outputs['trajectory'], run.states)
        write_diagnostics(outputs['diagnostics'], run.diagnostics)
        write_covariance(outputs['covariance'], run.states, run.covariances)
        dump_config(cfg, outputs['config'])

        logger.info(f"\n{len(run.states)} epochs fused")
        logger.info("Skipped updates:\n" + "\n".join(f"  {name}: {count}" for name, count in run.skips.items()))
        if run.states:
            p = run.states[-1].p
            logger.info(f"Final position: ({p[0]:.3f}, {p[1]:.3f}, {p[2]:.3f}) m")
    return outputs

def run_evaluate(traj_files:list[str],
                 segments_file:str,
                 out:str,
                 labels:list[str] = None,
                 gt_file:str = None,
                 cov_files:list[str] = None,
                 config:RunConfig = None,
                 config_file:str = None,
                 **options) -> list:
    '''
    Segment-distance and endpoint metrics of one or more trajectories

    Parameters
    ----------
    traj_files : list[str]
        trajectory.csv files, one report row each
    segments_file : str
        segments.csv with the reference distances
    out : str
        YAML report file, a CSV table is written beside it
    labels : list[str], optional
        Row labels (def: None, the trajectory file names)
    gt_file : str, optional
        Ground truth, with 'cov_files' enables the position NEES
    cov_files : list[str], optional
        covariance.csv files matching 'traj_files'
    config : RunConfig, optional
        Validated configuration (def: None, loaded from 'config_file')
    config_file : str, optional
        YAML parameter file, only path_length_mode is read
    **options : dict
        Parameters overriding the configuration

    Returns
    -------
    list[MetricsReport]
        One report per trajectory
    '''
    cfg = _config(config, config_file, options)
    labels = labels or _default_labels(traj_files)
    if len(labels) != len(traj_files):
        raise DataError(f"{len(labels)} labels given for {len(traj_files)} trajectories")
    if cov_files and len(cov_files) != len(traj_files):
        raise DataError(f"{len(cov_files)} covariance files given for {len(traj_files)} trajectories")
    with _run_logging('evaluate', os.path.dirname(os.path.abspath(out))):
        segments = read_segments(segments_file)
        gt = read_trajectory(gt_file) if gt_file else None
        reports = []
        for i, (label, path) in enumerate(zip(labels, traj_files)):
            traj = read_trajectory(path)
            cov = None
            if cov_files and gt is not None:
                t_cov, cov = read_covariance(cov_files[i])
                if t_cov.shape != traj.t.shape or np.any(np.abs(t_cov - traj.t) > 1e-6):
                    raise DataError(f"Covariance epochs in '{cov_files[i]}' do not match '{path}'")
            elif cov_files:
                logger.warning("WARNING: Covariances given without ground truth, NEES not computed")
            report = evaluate_trajectory(traj, segments, label, cfg.path_length_mode, gt, cov)
            reports.append(report)
            groups = ', '.join(f"{name} {value:.4f}" for name, value in report.m_list.items())
            logger.info(textwrap.dedent(f"""\
                {label}
                  M_list: {groups} (total {report.m_list_total:.4f})
                  M_end: {report.m_end:.4f} m
                  Max vertical drift: {report.z_drift_max:.4f} m"""))
            if report.nees_mean is not None:
                logger.info(f"  Mean position NEES: {report.nees_mean:.3f}")
        csv_path = write_report(out, reports)
        logger.info(f"\nReport written to {out} and {csv_path}")
    return reports

def run_plot(traj_files:list[str], out:str, diag_file:str = None, gt_file:str = None, labels:list[str] = None) -> str:
    '''
    Top-view SVG of trajectories, with an optional degeneracy strip

    Parameters
    ----------
    traj_files : list[str]
        trajectory.csv files, one polyline each
    out : str
        SVG file to write
    diag_file : str, optional
        diagnostics.csv, adds the smoothed degeneracy index against time
    gt_file : str, optional
        Ground truth trajectory, drawn dashed
    labels : list[str], optional
        Legend labels (def: None, the trajectory file names)

    Returns
    -------
    str
        Path of the SVG
    '''
    labels = labels or _default_labels(traj_files)
    if len(labels) != len(traj_files):
        raise DataError(f"{len(labels)} labels given for {len(traj_files)} trajectories")
    with _run_logging('plot', os.path.dirname(os.path.abspath(out))):
        trajectories = [(label, read_trajectory(f)) for label, f in zip(labels, traj_files)]
        gt = read_trajectory(gt_file) if gt_file else None
        diagnostics = read_diagnostics(diag_file) if diag_file else None
        plot_trajectories(trajectories, out, gt, diagnostics)
        logger.info(f"Plot written to {out}")
    return out
