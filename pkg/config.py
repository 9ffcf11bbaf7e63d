import os
from dotenv import load_dotenv, dotenv_values

# Load environment variables from .env file
load_dotenv()


class ConfigError(ValueError):
    """Raised for invalid environment settings or run configuration files."""


def _parse_bool(value):
    text = str(value).strip().lower()
    if text in ('true', '1', 'yes', 'on'):
        return True
    if text in ('false', '0', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {value!r}")


class Config:
    # Output settings
    OUTPUT_DIR = os.getenv('BHV_OUTPUT_DIR', './runs')
    LOG_LEVEL = os.getenv('BHV_LOG_LEVEL', 'INFO').strip().upper()
    LOG_FILE = os.getenv('BHV_LOG_FILE', 'bhv_brownian.log')

    # Randomness and parallelism
    SEED = os.getenv('BHV_SEED', '20240601')
    WORKERS = os.getenv('BHV_WORKERS', str(os.cpu_count() or 1))

    # Sampler guards
    INIT_CAP = os.getenv('BHV_INIT_CAP', '100000')
    FRECHET_ITERATIONS = os.getenv('BHV_FRECHET_ITERATIONS', '200')

    @classmethod
    def validate(cls):
        """Validate environment configuration"""
        problems = []
        for name in ('SEED', 'WORKERS', 'INIT_CAP', 'FRECHET_ITERATIONS'):
            value = getattr(cls, name)
            try:
                if int(value) < (0 if name == 'SEED' else 1):
                    problems.append(f"{name}={value}")
            except (TypeError, ValueError):
                problems.append(f"{name}={value}")

        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR'):
            problems.append(f"LOG_LEVEL={cls.LOG_LEVEL}")

        if problems:
            raise ConfigError(f"Invalid environment settings: {', '.join(problems)}")

        return True

    @classmethod
    def seed(cls):
        return int(cls.SEED)

    @classmethod
    def workers(cls):
        return int(cls.WORKERS)

    @classmethod
    def init_cap(cls):
        return int(cls.INIT_CAP)

    @classmethod
    def frechet_iterations(cls):
        return int(cls.FRECHET_ITERATIONS)


# Typed schemas per command: key -> (type, default). A default of None marks
# an optional key; REQUIRED marks a key that must be present.
REQUIRED = object()

_COMMON = {
    'seed': (int, None),
    'output_dir': (str, None),
    'workers': (int, None),
}

SCHEMAS = {
    'infer': {
        'data_path': (str, REQUIRED),
        'taxa_path': (str, REQUIRED),
        'm': (int, 50),
        'iters': (int, 10000),
        'burnin': (int, 1000),
        'thin': (int, 10),
        'alpha_b': (float, 0.2),
        'alpha_0': (float, 0.9),
        'lambda0': (float, 0.002),
        'sigma0': (float, 0.1),
        'frechet_iterations': (int, None),
        'fixed_x0': (str, None),
        'rounded_prior': (bool, False),
    },
    'marginal': {
        'data_path': (str, None),
        'taxa_path': (str, None),
        'M1': (int, 1000),
        'M2': (int, 1000),
        'h': (int, 10),
        'K': (int, 100),
        'burnin': (int, 100),
        'thin': (int, 1),
        'alpha_b': (float, 0.2),
        'repeats': (int, 1),
        'bootstrap': (int, 200),
    },
    'sample-bridge': {
        'm': (int, 10),
        'iters': (int, 10000),
        'burnin': (int, 1000),
        'thin': (int, 10),
        'alpha_b': (float, 0.2),
    },
    'simulate-walk': {
        'm': (int, 100),
        'walks': (int, 10000),
    },
}


class RunConfig:
    """Flat, typed key = value configuration for one command."""

    def __init__(self, command, values):
        if command not in SCHEMAS:
            raise ConfigError(f"No configuration schema for command '{command}'")
        self.command = command
        self.schema = {**_COMMON, **SCHEMAS[command]}
        self.values = {}

        unknown = sorted(set(values) - set(self.schema))
        if unknown:
            raise ConfigError(f"Unknown keys for '{command}': {', '.join(unknown)}")

        for key, (kind, default) in self.schema.items():
            raw = values.get(key)
            if raw is None or raw == '':
                if default is REQUIRED:
                    raise ConfigError(f"Missing required key '{key}' for '{command}'")
                self.values[key] = default
                continue
            try:
                self.values[key] = _parse_bool(raw) if kind is bool else kind(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"Key '{key}' expects {kind.__name__}, got {raw!r}")

        if self.values['seed'] is None:
            self.values['seed'] = Config.seed()
        if self.values['output_dir'] is None:
            self.values['output_dir'] = Config.OUTPUT_DIR
        if self.values['workers'] is None:
            self.values['workers'] = Config.workers()

    @classmethod
    def from_file(cls, command, path, overrides=None):
        """Parse a key = value file.

        Args:
            command: subcommand name selecting the schema
            path: config file path
            overrides: optional dict applied on top of the file (CLI flags)

        Returns:
            RunConfig
        """
        if not os.path.exists(path):
            raise FileNotFoundError(f"Config file not found: {path}")
        values = dict(dotenv_values(path))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(command, values)

    @classmethod
    def from_overrides(cls, command, overrides):
        return cls(command, {k: v for k, v in overrides.items() if v is not None})

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        value = self.values.get(key)
        return default if value is None else value

    def __eq__(self, other):
        return (isinstance(other, RunConfig) and self.command == other.command
                and self.values == other.values)

    def snapshot(self):
        """Render the resolved configuration in the key = value syntax."""
        lines = [f"# resolved configuration for '{self.command}'"]
        for key in sorted(self.values):
            value = self.values[key]
            if value is None:
                continue
            if isinstance(value, bool):
                value = 'true' if value else 'false'
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return '\n'.join(lines) + '\n'
