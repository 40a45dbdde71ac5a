import logging
import math
import os
from dataclasses import dataclass

import yaml

from LegFusion import parameters_default, parameters_sections
from .adaptive_fusion import AdaptiveParams, FusionParams
from .degeneracy import DegeneracyParams
from .errors import ParseError, ValidationError
from .filter_core import ImuNoiseParams
from .leg_pipeline import LegParams
from .lidar_pipeline import LidarExtrinsics, LidarParams
from .manifold import Rotation
from .simulator import SensorConfig


logger = logging.getLogger()

SCENARIOS = ('corridor_ab', 'corridor_featured', 'garage_L')
TRUE_WORDS = ('y', 'yes', 't', 'true', 'on')
FALSE_WORDS = ('n', 'no', 'f', 'false', 'off')
# keys whose default is null but hold numbers or lists
NULLABLE = {'leg_scale_error': float, 'packet_loss': list}


@dataclass(frozen=True)
class RunConfig:
    '''
    Validated flat parameter set of a run

    Parameters are read as attributes or items; the module parameter
    objects are built by the *_params / sensor_config methods.
    '''
    values: dict

    def __getattr__(self, key:str):
        try:
            return self.__dict__['values'][key]
        except KeyError:
            raise AttributeError(key) from None

    def __getitem__(self, key:str):
        return self.values[key]

    def replace(self, **changes) -> 'RunConfig':
        return build_config({**self.values, **changes})

    def as_sections(self) -> dict:
        return {section: {key: _to_yaml(self.values[key]) for key in keys} for section, keys in parameters_sections.items()}

    def imu_noise(self) -> ImuNoiseParams:
        return ImuNoiseParams(self.sigma_g, self.sigma_a, self.sigma_bg, self.sigma_ba, tuple(self.gravity))

    def extrinsics(self) -> LidarExtrinsics:
        return LidarExtrinsics(Rotation.from_quaternion(self.extrinsic_rotation), self.extrinsic_translation)

    def lidar_params(self) -> LidarParams:
        return LidarParams(
            k_neighbors = self.k_neighbors,
            plane_validity_threshold = self.plane_validity_threshold,
            max_correspondence_distance = self.max_correspondence_distance,
            max_residual_gate = self.max_residual_gate,
            scan_voxel_size = self.scan_voxel_size,
            map_voxel_size = self.map_voxel_size,
            max_map_radius = self.max_map_radius,
            max_points_per_voxel = self.max_points_per_voxel,
            max_correspondences = self.max_correspondences,
            sigma_lidar = self.sigma_lidar,
            n_iterations = self.n_iterations)

    def leg_params(self) -> LegParams:
        return LegParams(
            sigma_leg = self.sigma_leg,
            min_valid_fraction = self.min_valid_fraction,
            nominal_period = 1.0 / self.leg_hz,
            gap_factor = self.gap_factor,
            use_yaw_rate = self.use_yaw_rate,
            sigma_leg_yaw = self.sigma_leg_yaw)

    def degeneracy_params(self) -> DegeneracyParams:
        return DegeneracyParams(self.sigma0_sq, self.w1, self.w2, self.kappa, self.min_correspondences)

    def adaptive_params(self) -> AdaptiveParams:
        return AdaptiveParams(self.eta, self.gamma_min, self.alpha, self.adaptive_enabled)

    def fusion_params(self) -> FusionParams:
        return FusionParams(
            noise = self.imu_noise(),
            lidar = self.lidar_params(),
            extrinsics = self.extrinsics(),
            leg = self.leg_params(),
            degeneracy = self.degeneracy_params(),
            adaptive = self.adaptive_params(),
            use_lidar = self.use_lidar,
            use_leg = self.use_leg,
            max_dt = self.max_dt,
            initial_sigmas = (self.sigma_theta0, self.sigma_p0, self.sigma_v0, self.sigma_bg0, self.sigma_ba0))

    def sensor_config(self) -> SensorConfig:
        '''Sensors of the simulator; leg faults stay at 0 and are set per scenario'''
        return SensorConfig(
            lidar_hz = self.lidar_hz,
            imu_hz = self.imu_hz,
            leg_hz = self.leg_hz,
            n_azimuth = self.n_azimuth,
            n_elevation = self.n_elevation,
            vertical_half_fov = self.vertical_half_fov,
            max_range = self.max_range,
            range_noise = self.range_noise,
            imu_noise = self.imu_noise(),
            leg_noise = self.leg_noise,
            leg_yaw_noise = self.leg_yaw_noise,
            extrinsics = self.extrinsics())


def _to_yaml(value):
    if isinstance(value, tuple):
        return [_to_yaml(v) for v in value]
    return value

def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value

def flatten_options(options:dict) -> dict:
    '''Flatten a sectioned options dictionary, known sections only'''
    flat = {}
    for k, v in (options or {}).items():
        if isinstance(v, dict):
            if k not in parameters_sections:
                raise ValidationError(k, f"unknown section (known: {', '.join(parameters_sections)})")
            flat.update(v)
        else:
            flat[k] = v
    return flat

def parse_option(key:str, text:str):
    '''
    Value of a command-line 'key=value' option

    Boolean words are accepted for boolean keys, everything else is read
    as a YAML scalar or list.
    '''
    if key in parameters_default and isinstance(parameters_default[key], bool):
        if text.lower() in TRUE_WORDS:
            return True
        if text.lower() in FALSE_WORDS:
            return False
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text

def _coerce(key:str, value):
    default = parameters_default[key]
    if key in NULLABLE:
        if value is None:
            return None
        if NULLABLE[key] is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(key, f"expected a number or null, got {value!r}")
            return float(value)
        if not isinstance(value, (list, tuple)) or any(not isinstance(ep, (list, tuple)) or len(ep) != 2 for ep in value):
            raise ValidationError(key, f"expected a list of [start, duration] pairs or null, got {value!r}")
        return tuple((float(ep[0]), float(ep[1])) for ep in value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(key, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ValidationError(key, f"expected a list of {len(default)} numbers, got {value!r}")
        try:
            return tuple(float(v) for v in value)
        except (TypeError, ValueError):
            raise ValidationError(key, f"expected a list of {len(default)} numbers, got {value!r}") from None
    if not isinstance(value, str):
        raise ValidationError(key, f"expected a string, got {value!r}")
    return value

def _check(values:dict, key:str, ok:bool, message:str) -> None:
    if not ok:
        raise ValidationError(key, f"{message}, got {values[key]!r}")

def validate(values:dict) -> None:
    '''Re-check every parameter invariant, naming the first offending key'''
    positive = ('sigma_g', 'sigma_a', 'sigma_bg', 'sigma_ba', 'max_dt',
                'sigma_theta0', 'sigma_p0', 'sigma_v0', 'sigma_bg0', 'sigma_ba0',
                'plane_validity_threshold', 'max_correspondence_distance', 'max_residual_gate',
                'scan_voxel_size', 'map_voxel_size', 'max_map_radius', 'sigma_lidar',
                'sigma_leg', 'gap_factor', 'sigma_leg_yaw', 'sigma0_sq', 'kappa', 'eta',
                'lidar_hz', 'imu_hz', 'leg_hz', 'max_range', 'corridor_length', 'cruise_speed')
    for key in positive:
        _check(values, key, values[key] > 0, "must be positive")
    non_negative = ('w1', 'w2', 'range_noise', 'leg_noise', 'leg_yaw_noise', 'min_correspondences', 'seed')
    for key in non_negative:
        _check(values, key, values[key] >= 0, "must be non-negative")
    at_least_one = ('max_points_per_voxel', 'max_correspondences', 'n_iterations', 'n_azimuth', 'n_elevation')
    for key in at_least_one:
        _check(values, key, values[key] >= 1, "must be at least 1")
    _check(values, 'k_neighbors', values['k_neighbors'] >= 3, "a plane needs at least 3 neighbors")
    _check(values, 'min_valid_fraction', 0 <= values['min_valid_fraction'] <= 1, "must be in [0, 1]")
    _check(values, 'gamma_min', 0 < values['gamma_min'] <= 1, "must be in (0, 1]")
    _check(values, 'alpha', 0 <= values['alpha'] < 1, "must be in [0, 1)")
    _check(values, 'w2', math.isclose(values['w1'] + values['w2'], 1.0, rel_tol=0, abs_tol=1e-9), "w1 + w2 must equal 1")
    _check(values, 'vertical_half_fov', 0 < values['vertical_half_fov'] < 0.5 * math.pi, "must be in (0, pi/2) rad")
    _check(values, 'extrinsic_rotation', math.hypot(*values['extrinsic_rotation']) > 1e-6, "must be a non-zero quaternion")
    _check(values, 'scenario', values['scenario'] in SCENARIOS, f"must be one of {', '.join(SCENARIOS)}")
    if values['leg_scale_error'] is not None:
        _check(values, 'leg_scale_error', values['leg_scale_error'] > -1, "must be larger than -1")
    if values['packet_loss'] is not None:
        _check(values, 'packet_loss', all(duration >= 0 for _, duration in values['packet_loss']), "durations must be non-negative")

def build_config(options:dict) -> RunConfig:
    '''
    RunConfig from flat options on top of the defaults

    Raises
    ------
    ValidationError
        Unknown key, wrong type or violated invariant
    '''
    values = {key: _freeze(value) for key, value in parameters_default.items()}
    for key, value in options.items():
        if key not in parameters_default:
            raise ValidationError(key, "unknown parameter")
        values[key] = value
    values = {key: _coerce(key, value) for key, value in values.items()}
    validate(values)
    return RunConfig(values)

def load_config(path:str = None, **overrides) -> RunConfig:
    '''
    Load a YAML parameter file (sectioned as parameters.yaml, or flat)

    Parameters
    ----------
    path : str, optional
        Parameter file, missing keys take the defaults (def: None, defaults only)
    **overrides : dict
        Options applied on top of the file

    Returns
    -------
    RunConfig
        Validated configuration

    Raises
    ------
    ParseError
        The file cannot be read, or is not valid YAML (with the offending line)
    ValidationError
        Unknown key, wrong type or violated invariant
    '''
    options = {}
    if path:
        try:
            with open(path, 'r') as f:
                content = yaml.safe_load(f)
        except OSError as e:
            raise ParseError(f"Cannot read configuration file '{path}': {e.strerror or e}") from e
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            raise ParseError(f"Invalid YAML in '{path}': {getattr(e, 'problem', e)}", mark.line + 1 if mark else None) from e
        if content is not None and not isinstance(content, dict):
            raise ParseError(f"'{path}' must contain a mapping of parameters", 1)
        options = flatten_options(content)
    options.update(overrides)
    return build_config(options)

def dump_config(cfg:RunConfig, path:str) -> None:
    '''Write the full sectioned configuration, reloadable with load_config'''
    tmp = f"{path}.tmp"
    with open(tmp, 'w') as f:
        yaml.safe_dump(cfg.as_sections(), f, sort_keys=False, default_flow_style=None)
    os.replace(tmp, path)
