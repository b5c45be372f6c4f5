"""
Runtime settings and the scenario file grammar.

Settings are a module dict of defaults; get_settings() applies environment
overrides on top of it:

    LEVYPIDE_OUT_DIR    default output directory of the CLI
    LEVYPIDE_WORKERS    worker processes used by batch commands
    LEVYPIDE_LOG_LEVEL  DEBUG, INFO, WARNING, ...

Scenario and problem files are INI-style text read with configparser:

    # comment
    [measure]
    family = merton
    lambda = 0.1

    [problem]
    mu = 0.1 0.05
    sigma =
        0.09      -0.00045
        -0.00045   0.0001

Vectors are whitespace separated, matrices are one row per continuation line.
"""
import configparser
import os

from levypide.errors import ConfigError

default_settings = {
    'out_dir': 'levypide_out',
    'workers': 4,
    'log_level': 'INFO',
}


def get_settings():
    settings = dict(default_settings)
    settings['out_dir'] = os.environ.get('LEVYPIDE_OUT_DIR', settings['out_dir'])
    settings['log_level'] = os.environ.get('LEVYPIDE_LOG_LEVEL', settings['log_level']).upper()
    workers = os.environ.get('LEVYPIDE_WORKERS')
    if workers:
        try:
            settings['workers'] = max(1, int(workers))
        except ValueError:
            raise ConfigError(f"LEVYPIDE_WORKERS must be an integer, got {workers!r}")
    return settings


def _new_parser():
    parser = configparser.ConfigParser(interpolation=None,
                                       comment_prefixes=('#',),
                                       inline_comment_prefixes=('#',),
                                       empty_lines_in_values=False)
    parser.optionxform = str
    return parser


class ScenarioConfig:
    """
    Parsed config file: ordered sections of raw string values with typed
    getters. Every getter raises ConfigError naming section and key.
    """

    def __init__(self, sections=None, source='<memory>'):
        self.sections = sections or {}
        self.source = source

    def has(self, section, key=None):
        if section not in self.sections:
            return False
        return key is None or key in self.sections[section]

    def raw(self, section, key, default=None):
        if section not in self.sections:
            if default is not None:
                return default
            raise ConfigError(f"{self.source}: missing section [{section}]")
        value = self.sections[section].get(key)
        if value is None:
            if default is not None:
                return default
            raise ConfigError(f"{self.source}: missing key '{key}' in [{section}]")
        return value

    def get_str(self, section, key, default=None):
        return self.raw(section, key, default).strip()

    def get_float(self, section, key, default=None):
        value = self.raw(section, key, None if default is None else repr(float(default)))
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{self.source}: [{section}] {key} must be a number, got {value!r}")

    def get_int(self, section, key, default=None):
        value = self.raw(section, key, None if default is None else str(int(default)))
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{self.source}: [{section}] {key} must be an integer, got {value!r}")

    def get_vector(self, section, key):
        value = self.raw(section, key)
        try:
            return [float(item) for item in value.split()]
        except ValueError:
            raise ConfigError(f"{self.source}: [{section}] {key} must be whitespace separated numbers")

    def get_matrix(self, section, key):
        value = self.raw(section, key)
        rows = [line.split() for line in value.strip().splitlines() if line.strip()]
        try:
            matrix = [[float(item) for item in row] for row in rows]
        except ValueError:
            raise ConfigError(f"{self.source}: [{section}] {key} must be rows of numbers")
        if not matrix or any(len(row) != len(matrix[0]) for row in matrix):
            raise ConfigError(f"{self.source}: [{section}] {key} has ragged rows")
        return matrix

    def set(self, section, key, value):
        self.sections.setdefault(section, {})[key] = str(value)


def parse_config(text, source='<memory>'):
    """
    :param text: contents of a scenario/problem file
    :type text: str
    :return: ScenarioConfig
    """
    parser = _new_parser()
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}")
    sections = {}
    for name in parser.sections():
        sections[name] = {key: value.strip() for key, value in parser.items(name)}
    return ScenarioConfig(sections, source=source)


def load_config(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, 'r') as fh:
        return parse_config(fh.read(), source=str(path))


def dump_config(config):
    """
    Canonical text form: sections and keys in stored order, multi-line
    values indented by four spaces. dump_config(parse_config(t)) is a fixed
    point of parse/dump.
    """
    lines = []
    for name, items in config.sections.items():
        if lines:
            lines.append('')
        lines.append(f'[{name}]')
        for key, value in items.items():
            value = str(value).strip()
            if '\n' in value:
                lines.append(f'{key} =')
                lines.extend(f'    {row.strip()}' for row in value.splitlines() if row.strip())
            else:
                lines.append(f'{key} = {value}')
    return '\n'.join(lines) + '\n'


def bundled_config(name):
    """Path of a scenario file shipped in levypide/configs."""
    path = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs', name)
    if not os.path.isfile(path):
        raise ConfigError(f"no bundled config named {name!r}")
    return path
