#!/usr/bin/env python3

'''
LegFusion: adaptive LiDAR-IMU-leg odometry fusion

Defaults are read from the sectioned 'parameters.yaml' next to this file
and flattened into 'parameters_default'; 'parameters_sections' keeps the
section of every key for writing configurations back.
'''

import logging
import os

import yaml


__version__ = '0.1.0'

# set up logging
logging.basicConfig(
    level=logging.INFO,
    format='%(message)s',
    handlers=[
        logging.StreamHandler()
        ]
    )

# get path to LegFusion folder
LegFusion_path = os.path.dirname(os.path.realpath(__file__))


def _read_parameters(path:str) -> tuple[dict, dict]:
    '''Flattened defaults and key names per section, keys unique across sections'''
    with open(path, 'r') as f:
        sections = yaml.safe_load(f)
    flat, keys = dict(), dict()
    for section, values in sections.items():
        for key, value in values.items():
            if key in flat:
                raise KeyError(f"Parameter '{key}' of section '{section}' already defined in {path}")
            flat[key] = value
        keys[section] = list(values)
    return flat, keys

parameters_default, parameters_sections = _read_parameters(os.path.join(LegFusion_path, 'parameters.yaml'))

# run functions for better import and usage
from .legfusion import run_simulate, run_fuse, run_evaluate, run_plot
