"""Flat ``key=value`` run configuration with per-command schemas."""
from pathlib import Path

from .exceptions import ConfigError

NETWORK_KEYS = {
    "l_out": (int, 100),
    "n_glu_stages": (int, 3),
    "conv_channels": (int, 100),
    "kernel_size": (int, 4),
    "n_res_blocks": (int, 2),
    "res_hidden": (int, 50),
}

GRID_KEYS = {
    "period": (float, 3.0),
    "max_gap": (float, 60.0),
}

# value None means "required"
SCHEMAS = {
    "synth": {
        "output_dir": (str, None),
        "seed": (int, 0),
        "days": (float, 14.0),
        "appliances": (str, "fridge,lighting,dishwasher"),
        "noise_sigma": (float, 2.0),
        "start": (int, 1303132929),
        "period": (float, 3.0),
    },
    "train": {
        "channels": (str, None),
        "target": (str, None),
        "appliance": (str, None),
        "aggregate": (str, ""),
        "output_dir": (str, None),
        **NETWORK_KEYS,
        **GRID_KEYS,
        "appliance_divisor": (float, 0.0),
        "on_threshold": (float, -1.0),
        "aggregate_divisor": (float, 1000.0),
        "step": (int, 5),
        "train_step": (int, 5),
        "batch_size": (int, 32),
        "learning_rate": (float, 1e-3),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "epsilon": (float, 1e-8),
        "epochs": (int, 10),
        "max_steps": (int, 0),
        "validation_fraction": (float, 0.1),
        "rebalance": (bool, False),
        "p_target": (float, 0.1),
        "seed": (int, 0),
    },
    "disaggregate": {
        "checkpoint": (str, None),
        "channels": (str, ""),
        "aggregate": (str, ""),
        "appliance": (str, ""),
        "output": (str, None),
        "step": (int, 5),
        "batch_size": (int, 256),
        **GRID_KEYS,
    },
    "evaluate": {
        "predictions": (str, None),
        "truth": (str, None),
        "output": (str, None),
        "appliance": (str, ""),
        "on_threshold": (float, -1.0),
        "period": (float, 3.0),
    },
    "gradcheck": {
        "l_out": (int, 8),
        "n_glu_stages": (int, 3),
        "conv_channels": (int, 8),
        "kernel_size": (int, 4),
        "n_res_blocks": (int, 1),
        "res_hidden": (int, 16),
        "seed": (int, 0),
        "batch": (int, 4),
        "n_coords": (int, 500),
        "h": (float, 1e-5),
        "threshold": (float, 1e-5),
        "report": (str, ""),
    },
}


def _convert(key, kind, raw):
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


def parse_config_text(text, source="<config>"):
    """Parse ``key=value`` lines; ``#`` starts a comment line."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        values[key.strip()] = value.strip()
    return values


def parse_overrides(tokens):
    """Turn ``--key value`` / ``--key=value`` tokens into a dict."""
    values, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}; overrides look like --key value")
        key, sep, value = tok[2:].partition("=")
        if not sep:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for --{key}")
            value = tokens[i + 1]
            i += 1
        values[key.replace("-", "_")] = value
        i += 1
    return values


class RunConfig:
    """Resolved settings for one command: schema defaults, file values, then flags."""

    def __init__(self, command, values):
        self.command = command
        self.values = values

    @classmethod
    def resolve(cls, command, file_values=None, overrides=None):
        if command not in SCHEMAS:
            raise ConfigError(f"unknown command {command!r}")
        schema = SCHEMAS[command]
        raw = {**(file_values or {}), **(overrides or {})}
        unknown = sorted(set(raw) - set(schema))
        if unknown:
            raise ConfigError(f"unknown {command} config keys: {', '.join(unknown)}")
        values = {}
        for key, (kind, default) in schema.items():
            if key in raw:
                values[key] = _convert(key, kind, raw[key])
            elif default is None:
                raise ConfigError(f"{command}: missing required key {key!r}")
            else:
                values[key] = default
        return cls(command, values)

    @classmethod
    def load(cls, command, path=None, overrides=None):
        file_values = {}
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            file_values = parse_config_text(text, str(path))
        return cls.resolve(command, file_values, overrides)

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self):
        lines = [f"# glunilm {self.command}"]
        for key, value in self.values.items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_text())
