"""INI run configuration with scale presets.

Precedence: command-line flags > config file > preset > built-in defaults.
Unknown sections or keys are rejected by name.
"""

from __future__ import annotations

import configparser
import copy
import io
from pathlib import Path

DEFAULTS: dict[str, dict[str, str]] = {
    "grid": {"width": "10", "height": "10", "count": "3", "seed": "1"},
    "dataset": {
        "total": "20000",
        "fraction_expert": "1.0",
        "remainder": "interaction",
        "tagging": "no_source",
        "k": "1.0",
        "token_budget": "",
    },
    "model": {"hidden": "64", "layers": "2", "heads": "2", "max_seq_len": "128", "seed": "0", "ffn_dim": ""},
    "train": {"epochs": "5", "batch": "16", "lr": "1e-3"},
    "eval": {"test_size": "64", "max_len": "", "elicitations": "no_cue,with_cue"},
    "study": {
        "fractions": "0,0.005,0.01,0.05,0.1,0.25,0.5,1.0",
        "k_values": "0.25,0.5,0.75,1.0",
        "drop_fractions": "0.01,0.05,0.25",
        "token_expert_count": "500",
    },
    "paths": {"out_dir": "runs", "cache_dir": ""},
    "assert": {"enabled": "false"},
}

PRESETS: dict[str, dict[str, dict[str, str]]] = {
    "desk": {},
    "paper": {
        "grid": {"width": "20", "height": "20", "count": "10"},
        "dataset": {"total": "100000"},
        "model": {"hidden": "128", "layers": "4", "heads": "4", "max_seq_len": "256", "ffn_dim": "11008"},
        "train": {"epochs": "10", "lr": "3e-4"},
        "eval": {"test_size": "320"},
    },
}


class ConfigKeyError(KeyError):
    def __str__(self):
        return str(self.args[0])


class RunConfig:
    """Flat ``section.key -> string`` view with typed getters."""

    def __init__(self, values: dict[str, dict[str, str]] | None = None):
        self.values = copy.deepcopy(DEFAULTS)
        if values:
            self.update(values)

    def update(self, values: dict[str, dict[str, str]]) -> None:
        for section, items in values.items():
            if section not in self.values:
                raise ConfigKeyError(f"unknown config section [{section}]")
            for key, val in items.items():
                if key not in self.values[section]:
                    raise ConfigKeyError(f"unknown config key {section}.{key}")
                self.values[section][key] = str(val)

    def set(self, dotted: str, value) -> None:
        section, key = dotted.split(".", 1)
        self.update({section: {key: value}})

    def get(self, dotted: str) -> str:
        section, key = dotted.split(".", 1)
        try:
            return self.values[section][key]
        except KeyError:
            raise ConfigKeyError(f"unknown config key {dotted}") from None

    def get_int(self, dotted: str) -> int:
        return int(self.get(dotted))

    def get_float(self, dotted: str) -> float:
        return float(self.get(dotted))

    def get_bool(self, dotted: str) -> bool:
        return self.get(dotted).strip().lower() in ("1", "true", "yes", "on")

    def get_optional_int(self, dotted: str) -> int | None:
        raw = self.get(dotted).strip()
        return int(raw) if raw else None

    def get_list(self, dotted: str, cast=str) -> list:
        return [cast(x.strip()) for x in self.get(dotted).split(",") if x.strip()]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section, items in self.values.items():
            cp[section] = dict(items)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")


def load_config(path=None, scale: str = "desk", overrides: dict[str, object] | None = None) -> RunConfig:
    if scale not in PRESETS:
        raise ConfigKeyError(f"unknown scale {scale!r}; choose from {sorted(PRESETS)}")
    cfg = RunConfig(PRESETS[scale])
    if path is not None:
        cp = configparser.ConfigParser()
        if not cp.read(path, encoding="utf-8"):
            raise FileNotFoundError(f"config file not found: {path}")
        cfg.update({s: dict(cp[s]) for s in cp.sections()})
    for dotted, value in (overrides or {}).items():
        if value is not None:
            cfg.set(dotted, value)
    return cfg
