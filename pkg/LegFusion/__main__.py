#!/usr/bin/env python3

import argparse
import logging
import sys

from LegFusion import __version__
from .legfusion import run_evaluate, run_fuse, run_plot, run_simulate
from .modules.config import SCENARIOS, load_config, parse_option
from .modules.errors import LegFusionError


logger = logging.getLogger()

def _options(opts:list[str]) -> dict:
    options = dict()
    for opt in opts or []:
        opt_val = opt.split("=", 1)
        if len(opt_val) != 2 or not opt_val[0]:
            logger.error(f"ERROR: Options must be specified as 'option=value'. Got '{opt}'")
            sys.exit(2)
        options[opt_val[0]] = parse_option(*opt_val)
    return options

def main(argv:list[str] = None) -> int:
    parser = argparse.ArgumentParser(
        prog='legfusion',
        description='Adaptive LiDAR-IMU-leg odometry fusion: simulate, fuse, evaluate and plot')
    parser.add_argument('-v', '--version', action='version', version=f'LegFusion v{__version__}')
    subparsers = parser.add_subparsers(dest='command', required=True)

    # shared options
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-f', '--config', metavar='.yml', type=str,
        help='File in YAML format with parameters to pass')
    common.add_argument('--opt', metavar="opt=val", nargs='+', type=str,
        help='Extra parameters to pass: name and value, separated by an equal (e.g. --opt eta=1.5 use_yaw_rate=yes)')
    common.add_argument('--verbose', action='store_true',
        help='Verbose mode')

    sim = subparsers.add_parser('simulate', parents=[common],
        help='Generate a synthetic sensor log')
    sim.add_argument('--scenario', type=str, choices=SCENARIOS,
        help='Scenario to simulate (def: from the configuration)')
    sim.add_argument('--seed', type=int,
        help='Seed of the sensor noise (def: from the configuration)')
    sim.add_argument('-o', '--out', metavar='<>', type=str, required=True,
        help='Directory to write the log')

    fuse = subparsers.add_parser('fuse', parents=[common],
        help='Fuse a sensor log')
    fuse.add_argument('--log', metavar='<>', type=str, required=True,
        help='Sensor log directory')
    fuse.add_argument('-o', '--out', metavar='<>', type=str, required=True,
        help='Directory to write trajectory.csv and diagnostics.csv')
    fuse.add_argument('--no-adaptive', action='store_true',
        help='Fixed unit reliability and no leg gap handling (TFS baseline)')
    fuse.add_argument('--no-leg', action='store_true',
        help='Do not use the leg odometry')
    fuse.add_argument('--no-lidar', action='store_true',
        help='Do not use the LiDAR (leg-IMU dead reckoning)')

    ev = subparsers.add_parser('evaluate', parents=[common],
        help='Segment-distance and endpoint metrics of trajectories')
    ev.add_argument('--traj', metavar='.csv', type=str, nargs='+', required=True,
        help='Trajectory files, one report row each')
    ev.add_argument('--label', metavar='<>', type=str, nargs='+',
        help='Row labels, one per trajectory (def: file names)')
    ev.add_argument('--segments', metavar='.csv', type=str, required=True,
        help='Reference segments file')
    ev.add_argument('--gt', metavar='.csv', type=str,
        help='Ground truth trajectory, needed for the NEES')
    ev.add_argument('--cov', metavar='.csv', type=str, nargs='+',
        help='Covariance files, one per trajectory, for the NEES')
    ev.add_argument('-o', '--out', metavar='.yml', type=str, required=True,
        help='Report file, a CSV table is written beside it')

    pl = subparsers.add_parser('plot', parents=[common],
        help='Top-view SVG plot of trajectories')
    pl.add_argument('--traj', metavar='.csv', type=str, nargs='+', required=True,
        help='Trajectory files, one polyline each')
    pl.add_argument('--label', metavar='<>', type=str, nargs='+',
        help='Legend labels, one per trajectory (def: file names)')
    pl.add_argument('--diag', metavar='.csv', type=str,
        help='Diagnostics file, adds the degeneracy strip')
    pl.add_argument('--gt', metavar='.csv', type=str,
        help='Ground truth trajectory')
    pl.add_argument('-o', '--out', metavar='.svg', type=str, required=True,
        help='SVG file to write')

    args = parser.parse_args(argv)

    logger.setLevel(logging.DEBUG if args.verbose else logging.INFO)

    # options from command line, flags last
    options = _options(args.opt)
    if args.command == 'simulate':
        if args.scenario:
            options['scenario'] = args.scenario
        if args.seed is not None:
            options['seed'] = args.seed
    elif args.command == 'fuse':
        if args.no_adaptive:
            options['adaptive_enabled'] = False
        if args.no_leg:
            options['use_leg'] = False
        if args.no_lidar:
            options['use_lidar'] = False

    try:
        if args.command == 'plot':
            run_plot(args.traj, args.out, args.diag, args.gt, args.label)
            return 0
        cfg = load_config(args.config, **options)
        if args.command == 'simulate':
            run_simulate(args.out, cfg)
        elif args.command == 'fuse':
            run_fuse(args.log, args.out, cfg)
        elif args.command == 'evaluate':
            run_evaluate(args.traj, args.segments, args.out, args.label, args.gt, args.cov, cfg)
    except LegFusionError as e:
        logger.debug("", exc_info=True)
        logger.error(f"ERROR: {e}")
        return e.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
