"""Experiment configuration: YAML (or JSON) files merged over the defaults, command-line overrides
and schema validation.
"""
import ast
import copy
import os

import yaml

CONFIG_VERSION = 1
PARAMS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                          'experiment_params')
DEFAULT_TRAIN_CONFIG_FILE = os.path.join(PARAMS_DIR, 'train_config_default.yaml')
DEFAULT_DATASET_CONFIG_FILE = os.path.join(PARAMS_DIR, 'dataset_default.yaml')

ROTATION_MODES = ('PropRot', 'ImgRot')
ROTATION_PROPOSALS = ('rotated', 'original')
DTYPES = ('float64', 'float32')


class ConfigError(ValueError):
    """A configuration violates the schema. The message names the offending key."""

    def __init__(self, key, message):
        super().__init__(f'{key}: {message}')
        self.key = key


def read_config(config_file):
    """Parse a YAML or JSON config file into a dict."""
    if not os.path.isfile(config_file):
        raise IOError(f'Config file not found: {config_file}')
    with open(config_file, 'r') as f:
        try:
            config = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(config_file, f'could not be parsed: {e}') from e
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigError(config_file, 'the top level must be a mapping.')
    return config


def write_config(config, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        yaml.safe_dump(config, f, default_flow_style=False, sort_keys=True)


def merge_configs(defaults, overrides, prefix=''):
    """Deep-merge overrides into a copy of defaults, rejecting keys the defaults don't have.

    Mappings whose default is empty (e.g. free-form sections) accept any key.
    """
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        dotted = prefix + str(key)
        if key not in merged:
            raise ConfigError(dotted, 'unknown key.')
        if isinstance(merged[key], dict) and merged[key]:
            if not isinstance(value, dict):
                raise ConfigError(dotted, f'expected a mapping, got {value!r}.')
            merged[key] = merge_configs(merged[key], value, dotted + '.')
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _parse_value(value):
    try:
        return ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return value


def apply_overrides(config, assignments):
    """Apply 'key.sub=value' assignments in place; values go through ast.literal_eval.

    Raises:
        ConfigError: If an assignment is malformed or names an unknown key.
    """
    for assignment in assignments or []:
        if '=' not in assignment:
            raise ConfigError(assignment, "overrides must look like 'key.sub=value'.")
        key, value = assignment.split('=', 1)
        ptr = config
        keys = key.split('.')
        for i, k in enumerate(keys):
            if not isinstance(ptr, dict) or k not in ptr:
                raise ConfigError(key, 'unknown key.')
            if i == len(keys) - 1:
                ptr[k] = _parse_value(value)
            else:
                ptr = ptr[k]
    return config


def _check_types(config, defaults, prefix=''):
    for key, default in defaults.items():
        dotted = prefix + key
        value = config[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(dotted, f'expected a mapping, got {value!r}.')
            if default:
                _check_types(value, default, dotted + '.')
            continue
        if default is None:
            if value is not None and not isinstance(value, str):
                raise ConfigError(dotted, f'expected a path or null, got {value!r}.')
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(dotted, f'expected true or false, got {value!r}.')
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(dotted, f'expected a number, got {value!r}.')
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(dotted, f'expected a list, got {value!r}.')
        elif not isinstance(value, type(default)) or isinstance(value, bool):
            raise ConfigError(dotted, f'expected {type(default).__name__}, got {value!r}.')


def _check_range(config, key, condition, message):
    section, _, name = key.partition('.')
    value = config[section][name] if name else config[section]
    if not condition(value):
        raise ConfigError(key, f'{message}, got {value!r}.')


def check_train_ranges(config):
    for key in ('weights.alpha', 'weights.lambda1', 'weights.lambda2'):
        _check_range(config, key, lambda v: v >= 0, 'must be non-negative')
    _check_range(config, 'weights.sigma', lambda v: 0 <= v <= 1, 'must lie in [0, 1]')
    _check_range(config, 'networks.top_k', lambda v: v >= 1, 'must be at least 1')
    _check_range(config, 'networks.dtype', lambda v: v in DTYPES, f'must be one of {DTYPES}')
    _check_range(config, 'networks.reversal_strength', lambda v: v >= 0, 'must be non-negative')
    _check_range(config, 'networks.init_scale', lambda v: v >= 0, 'must be non-negative')
    _check_range(config, 'optimization.steps', lambda v: v >= 0, 'must be non-negative')
    _check_range(config, 'optimization.learning_rate', lambda v: v >= 0, 'must be non-negative')
    _check_range(config, 'optimization.momentum', lambda v: 0 <= v < 1, 'must lie in [0, 1)')
    _check_range(config, 'evaluation.interval', lambda v: v >= 1, 'must be at least 1')
    _check_range(config, 'evaluation.workers', lambda v: v >= 1, 'must be at least 1')
    _check_range(config, 'evaluation.nms_iou', lambda v: 0 <= v <= 1, 'must lie in [0, 1]')
    _check_range(config, 'augmentation.op_count', lambda v: v >= 1, 'must be at least 1')
    _check_range(config, 'augmentation.magnitude', lambda v: 0 <= v <= 1, 'must lie in [0, 1]')
    _check_range(config, 'tasks.rotation_mode', lambda v: v in ROTATION_MODES,
                 f'must be one of {ROTATION_MODES}')
    _check_range(config, 'tasks.rotation_proposals', lambda v: v in ROTATION_PROPOSALS,
                 f'must be one of {ROTATION_PROPOSALS}')
    _check_range(config, 'logging.loss_freq', lambda v: v >= 1, 'must be at least 1')
    _check_range(config, 'ablation.seeds', lambda v: len(v) >= 1, 'needs at least one seed')


def check_dataset_ranges(config):
    for key in ('split.n_train', 'split.n_test'):
        _check_range(config, key, lambda v: v >= 1, 'must be at least 1')
    _check_range(config, 'split.image_size', lambda v: v >= 16 and v % 4 == 0,
                 'must be a multiple of 4 and at least 16')
    _check_range(config, 'split.domain', lambda v: v in ('source', 'target', 'both'),
                 "must be one of ('source', 'target', 'both')")


def validate_config(config, defaults, check_ranges=check_train_ranges):
    """Check version, types and ranges of a merged config.

    Raises:
        ConfigError: On the first violation, naming its dotted key.
    """
    if config.get('version') != CONFIG_VERSION:
        raise ConfigError('version', f'expected {CONFIG_VERSION}, got {config.get("version")!r}.')
    _check_types(config, defaults)
    check_ranges(config)
    return config


def load_config(config_file=None, overrides=None, defaults_file=DEFAULT_TRAIN_CONFIG_FILE,
                check_ranges=check_train_ranges):
    """Read defaults, merge a user config file over them, apply overrides and validate.

    Args:
        config_file (str, optional): User YAML or JSON config.
        overrides (list, optional): 'key.sub=value' strings.
        defaults_file (str): Defaults every key must appear in.
        check_ranges (callable): Range checks of the resolved config.

    Returns:
        (dict): Resolved configuration.
    """
    defaults = read_config(defaults_file)
    config = copy.deepcopy(defaults)
    if config_file is not None:
        user_config = read_config(config_file)
        if 'version' not in user_config:
            raise ConfigError('version', f'missing in {config_file}.')
        config = merge_configs(defaults, user_config)
    apply_overrides(config, overrides)
    return validate_config(config, defaults, check_ranges)
