"""Plain ``key = value`` configuration files.

Keys are section-prefixed (``synth.noise_sigma``, ``train.reward_weight``,
``model.hidden_dim``, ``gas.hidden_dim``, ``features.n_mels``) and map onto
the corresponding config dataclass fields.  ``#`` starts a comment; blank
lines are ignored.  Command-line ``--set key=value`` overrides win over the
file.
"""

import dataclasses

from .errors import ConfigError


def parse_config_text(text, source="<config>"):
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        mapping[key] = value.strip()
    return mapping


def load_config_file(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read(), source=str(path))


def format_config(mapping):
    return "".join(f"{k} = {mapping[k]}\n" for k in sorted(mapping))


def _convert(raw, example, key):
    kind = type(example)
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for '{key}': {raw!r}") from None


def build_dataclass(cls, mapping, prefix, **overrides):
    """Instantiate ``cls`` from defaults, prefixed mapping entries, then
    explicit keyword overrides."""
    known = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, raw in mapping.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in known:
            raise ConfigError(f"unknown configuration key: {key}")
        kwargs[name] = _convert(raw, getattr(defaults, name), key)
    kwargs.update(overrides)
    return cls(**kwargs)


def validate_keys(mapping, sections):
    """``sections`` maps prefix -> dataclass; every key must belong somewhere."""
    for key in mapping:
        for prefix, cls in sections.items():
            if key.startswith(prefix):
                name = key[len(prefix):]
                if any(f.name == name for f in dataclasses.fields(cls)):
                    break
        else:
            raise ConfigError(f"unknown configuration key: {key}")


def dataclass_to_mapping(obj, prefix):
    return {f"{prefix}{f.name}": str(getattr(obj, f.name))
            for f in dataclasses.fields(obj)}
