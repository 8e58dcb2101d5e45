"""Run configuration: an INI file with a fixed set of sections and keys.

Every key has a default (``DEFAULTS``); unknown sections or keys are
rejected with the offending line number. ``[f]`` and ``[g]`` take the same
training keys and configure the f-network and every distilled stage.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import re

from . import distill
from .errors import ConfigError

_TRAIN_KEYS = {
    "gamma": ("float", 10.0),
    "max_epochs": ("int", None),
    "num_batches": ("int", 10),
    "initial_step": ("float", 10.0),
    "step_decay": ("float", 0.99),
    "svm_c": ("float", 1.0),
    "svm_tol": ("float", 1e-3),
    "svm_max_passes": ("int", 200),
    "seed": ("int", 0),
    "beta_plus": ("float?", None),
    "beta_minus": ("float?", None),
    "conv_window": ("int", 20),
    "conv_rtol": ("float", 1e-6),
}

DEFAULTS = {
    # synthetic data, used when no path is given
    "data": {
        "path": ("str?", None),
        "n": ("int", 20000),
        "d": ("int", 16),
        "positive_fraction": ("float", 0.05),
        "separation": ("float", 8.0),
        "seed": ("int", 0),
    },
    "split": {
        "labeled_count": ("int", 1500),
        "seed": ("int", 0),
    },
    "bank": {
        "num_chunks": ("int", 8),
        "k_neighbors": ("int", 10),
    },
    "f": {**_TRAIN_KEYS, "max_epochs": ("int", distill.F_EPOCHS), "width": ("int?", None)},
    "g": {**_TRAIN_KEYS, "max_epochs": ("int", distill.G_EPOCHS)},
    "cascade": {
        # number of distilled stages placed before f; 0 gives an f-only cascade
        "g_stages": ("int", 5),
        "use_unlabeled": ("bool", False),
        "unlabeled_count": ("int", 0),
    },
}


def _parse_value(kind, raw, section, key, line):
    raw = raw.strip()
    optional = kind.endswith("?")
    kind = kind.rstrip("?")
    if optional and raw.lower() in ("", "none"):
        return None
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] cannot parse {raw!r} as {kind}", key, line) from None


def _key_lines(text):
    """Map (section, key) to its 1-based line number."""
    lines = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = no
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), no)
    return lines


class RunConfig:
    """Resolved configuration; ``values[section][key]`` always populated."""

    def __init__(self, values):
        self.values = values

    @classmethod
    def from_text(cls, text):
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}", line=getattr(exc, "lineno", None)) from exc
        lines = _key_lines(text)
        values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in DEFAULTS.items()}
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown section [{section}]", line=lines.get((section, None)))
            for key, raw in parser.items(section):
                line = lines.get((section, key))
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key in [{section}]", key, line)
                kind = DEFAULTS[section][key][0]
                values[section][key] = _parse_value(kind, raw, section, key, line)
        return cls(values)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())

    @classmethod
    def default(cls):
        return cls.from_text("")

    def override_seed(self, seed):
        for section in ("data", "split", "f", "g"):
            self.values[section]["seed"] = seed

    def to_text(self):
        out = io.StringIO()
        for section, keys in DEFAULTS.items():
            out.write(f"[{section}]\n")
            for key in keys:
                v = self.values[section][key]
                out.write(f"{key} = {'none' if v is None else v}\n")
            out.write("\n")
        return out.getvalue()

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def distill_config(self, section):
        v = self.values[section]
        return distill.DistillConfig(
            beta_plus=v["beta_plus"], beta_minus=v["beta_minus"], gamma=v["gamma"],
            max_epochs=v["max_epochs"], num_batches=v["num_batches"],
            initial_step=v["initial_step"], step_decay=v["step_decay"], svm_C=v["svm_c"],
            svm_tol=v["svm_tol"], svm_max_passes=v["svm_max_passes"], seed=v["seed"],
            conv_window=v["conv_window"], conv_rtol=v["conv_rtol"])

    def __getitem__(self, section):
        return self.values[section]
