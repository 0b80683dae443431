import os
import json
import configparser
import logging
from dataclasses import dataclass, field, replace

from .materials import MaterialError, laminate_from_config
from .wavefield import SPECIMEN_PRESETS, excitation_from_config
from .outlier_filter import filter_config_from_dict

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _as_bool(x):
    return str(x).lower() == 'true'


def get_config_val(config, env_key, config_section, config_key, fallback=None, cast_func=None):
    """Get config value from env var or the INI file, with optional type casting."""
    val = os.getenv(env_key)

    if val is None:
        try:
            val = config.get(config_section, config_key, fallback=fallback)
        except (configparser.NoSectionError, configparser.NoOptionError):
            val = fallback

    if val is None:
        return None

    if cast_func:
        try:
            return cast_func(val)
        except (ValueError, TypeError):
            logger.warning(f"⚠️ Invalid value for {env_key}/{config_key}: {val}. Using fallback: {fallback}")
            return fallback
    return val


def load_config(config_path='lamwave.ini'):
    """Runtime settings; a missing file is fine, every key has a default."""
    config = configparser.ConfigParser()
    config.read(config_path)

    cfg = {}
    cfg['LOG_LEVEL'] = get_config_val(config, 'LAMWAVE_LOG', 'logs', 'loglevel', 'INFO').upper()
    cfg['LOG_FILE'] = get_config_val(config, 'LAMWAVE_LOG_FILE', 'logs', 'file', 'true', _as_bool)

    cfg['WORKERS'] = get_config_val(config, 'LAMWAVE_WORKERS', 'behaviour', 'workers', os.cpu_count() or 1, int)
    cfg['SEED'] = get_config_val(config, 'LAMWAVE_SEED', 'behaviour', 'seed', 0, int)
    cfg['OUTPUT_FORMAT'] = get_config_val(config, 'LAMWAVE_FORMAT', 'behaviour', 'format', 'csv').lower()

    cfg['SCAN_POINTS'] = get_config_val(config, 'LAMWAVE_SCAN_POINTS', 'sweep', 'scan_points', 2000, int)
    cfg['CP_MIN'] = get_config_val(config, 'LAMWAVE_CP_MIN', 'sweep', 'cp_min', 300.0, float)
    cfg['CP_MAX'] = get_config_val(config, 'LAMWAVE_CP_MAX', 'sweep', 'cp_max', 15000.0, float)
    cfg['ROOT_TOLERANCE'] = get_config_val(config, 'LAMWAVE_ROOT_TOLERANCE', 'sweep', 'root_tolerance', 1e-7, float)
    cfg['CONTINUATION_WINDOW'] = get_config_val(config, 'LAMWAVE_CONTINUATION_WINDOW', 'sweep', 'continuation_window', 0.02, float)
    cfg['DIRECTION_DEG'] = get_config_val(config, 'LAMWAVE_DIRECTION', 'sweep', 'direction_deg', 0.0, float)

    cfg['PEAKS_PER_FREQUENCY'] = get_config_val(config, 'LAMWAVE_PEAKS_PER_FREQUENCY', 'extract', 'peaks_per_frequency', 4, int)
    cfg['PROMINENCE_FLOOR'] = get_config_val(config, 'LAMWAVE_PROMINENCE_FLOOR', 'extract', 'prominence_floor', 0.05, float)
    cfg['NU_OVERSAMPLE'] = get_config_val(config, 'LAMWAVE_NU_OVERSAMPLE', 'extract', 'nu_oversample', 4, int)
    modes_raw = get_config_val(config, 'LAMWAVE_MODES', 'extract', 'modes', 'A0,S0')
    cfg['MODES'] = [m.strip() for m in modes_raw.split(',') if m.strip()]

    cfg['RESIDUAL_THRESHOLD'] = get_config_val(config, 'LAMWAVE_RESIDUAL_THRESHOLD', 'filter', 'residual_threshold', 0.03, float)
    cfg['METRICS_TEXTFILE'] = get_config_val(config, 'LAMWAVE_METRICS_TEXTFILE', 'metrics', 'textfile', 'false', _as_bool)

    if cfg['OUTPUT_FORMAT'] not in ('csv', 'bin'):
        logger.warning(f"⚠️ Unknown output format '{cfg['OUTPUT_FORMAT']}'. Using fallback: csv")
        cfg['OUTPUT_FORMAT'] = 'csv'
    if cfg['CP_MIN'] >= cfg['CP_MAX'] or cfg['CP_MIN'] <= 0:
        logger.warning(f"⚠️ Invalid phase-velocity window {cfg['CP_MIN']}..{cfg['CP_MAX']}. Using fallback: 300..15000")
        cfg['CP_MIN'], cfg['CP_MAX'] = 300.0, 15000.0
    return cfg


@dataclass
class RunConfig:
    """Everything one cli stage needs: the laminate, signals, scan geometry and filter settings."""
    laminate: object
    excitation: object
    path_length: float  # m
    spacing: float  # m
    jitter: float = 0.0
    filter_block: dict = field(default_factory=dict)
    synthesis: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    direction_deg: float = 0.0
    seed: int = 0
    source: str = ''

    @property
    def stack(self):
        """Laminate as seen along the propagation direction."""
        return self.laminate.rotated(self.direction_deg)

    @property
    def thickness(self):
        return self.laminate.total_thickness * 1e-3

    def filter_config(self, settings, min_point_spacing=None):
        try:
            return filter_config_from_dict(self.filter_block, self.path_length,
                                           min_point_spacing or self.spacing, self.thickness,
                                           settings.get('RESIDUAL_THRESHOLD', 0.03))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{self.source}: invalid 'filter' block: {e}")


DEFAULT_SWEEP = {'f_min': 5e3, 'f_max': 1.0e6, 'df': 5e3}
DEFAULT_SYNTHESIS = {'amplitudes': {'A0': 1.0, 'S0': 0.1}, 'noise_rms': 0.0, 'snr_db': None,
                     'reflection_coeff': 0.0, 'attenuation': 0.0}


def _path_from_config(block, excitation_name):
    block = dict(block or {})
    if 'specimen' in block:
        try:
            specimen = SPECIMEN_PRESETS[block.pop('specimen')]
        except KeyError as e:
            raise ConfigError(f"Unknown specimen {e}. Known: {', '.join(SPECIMEN_PRESETS)}")
        block.setdefault('length_mm', specimen['path_mm'].get(excitation_name, 320.0))
    length = float(block.get('length_mm', 320.0)) * 1e-3
    spacing = float(block.get('spacing_mm', 0.5)) * 1e-3
    jitter = float(block.get('jitter', 0.0))
    if not (length > 0 and spacing > 0 and spacing < length and 0 <= jitter < 0.5):
        raise ConfigError(f"Invalid path block: length {length} m, spacing {spacing} m, jitter {jitter}")
    return length, spacing, jitter


def load_run_config(path, settings=None, overrides=None):
    """Parse the JSON run config; every problem surfaces as ConfigError.

    overrides may carry the cli values fmin, fmax, df (Hz), seed, duration (s).
    """
    settings = settings or {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    try:
        with open(path, encoding='utf-8') as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"Run config not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: malformed JSON ({e.msg})")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")

    try:
        laminate = laminate_from_config(data)
    except MaterialError as e:
        raise ConfigError(f"{path}: {e}")

    excitation_block = data.get('excitation', 'ES1')
    excitation_name = excitation_block if isinstance(excitation_block, str) else excitation_block.get('preset', 'ES1')
    try:
        excitation = excitation_from_config(excitation_block)
        changes = {key: float(overrides[flag]) for flag, key in
                   (('fmin', 'f_min'), ('fmax', 'f_max'), ('df', 'df'), ('duration', 'duration'))
                   if flag in overrides}
        if changes:
            excitation = replace(excitation, **changes)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: invalid 'excitation' block: {e}")

    length, spacing, jitter = _path_from_config(data.get('path'), str(excitation_name).upper())

    sweep = dict(DEFAULT_SWEEP) | dict(data.get('sweep', {}))
    for flag, key in (('fmin', 'f_min'), ('fmax', 'f_max'), ('df', 'df')):
        if flag in overrides:
            sweep[key] = float(overrides[flag])
    if not (0 < sweep['f_min'] <= sweep['f_max'] and sweep['df'] > 0):
        raise ConfigError(f"{path}: invalid sweep grid {sweep}")

    synthesis = dict(DEFAULT_SYNTHESIS) | dict(data.get('synthesis', {}))
    run = RunConfig(
        laminate=laminate,
        excitation=excitation,
        path_length=length,
        spacing=spacing,
        jitter=jitter,
        filter_block=dict(data.get('filter', {})),
        synthesis=synthesis,
        sweep=sweep,
        direction_deg=float(data.get('direction_deg', settings.get('DIRECTION_DEG', 0.0))),
        seed=int(overrides.get('seed', data.get('seed', settings.get('SEED', 0)))),
        source=str(path),
    )
    run.filter_config(settings)
    logger.info(f"Loaded run config {path}: {laminate.describe()}")
    return run
