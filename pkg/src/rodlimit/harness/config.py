"""Run configuration: an INI file with sections [section], [beam], [sweep], [solver].

Every physical and numerical parameter is explicit; missing keys take the
reference values below.  The digest of the parsed configuration names the
output directory.
"""

import configparser
import copy
import hashlib
import json
import math
from pathlib import Path

REFERENCE = {
    "section": {"shape": "disk", "resolution": 0.1, "floor_resolution": 0.0705},
    "beam": {
        "L": 1.0,
        "mode": 1,
        "M": 0.05,
        # amplitude_mode 'smallness': scale so that max(||v0||_H8, ||v1||_H5) = M;
        # 'direct': use `amplitude` as the mode coefficient
        "amplitude_mode": "smallness",
        "amplitude": 1.0,
        "whirl": True,
        "forcing": "zero",
        "forcing_amplitude": 0.0,
        "forcing_frequency": 1.0,
    },
    "sweep": {
        "h": [0.2, 0.1, 0.05],
        "residual_h": [0.2, 0.1, 0.05, 0.025],
        "korn_h": [1.0, 0.5, 0.25, 0.125],
        "T": 0.5,
        "n1": 8,
        "residual_times": 11,
        "floor_protocol": True,
        "output": "results",
    },
    "solver": {
        "dt": 0.00125,
        "tol": 1e-11,
        "fixed_point_tol": 1e-11,
        "maxiter": 60,
        "delta": 0.1,
        "theta": 1.0,
        "corrector_variant": "consistent",
        "beam_dt": 0.00125,
        "max_halvings": 5,
        "case_budget_s": 600.0,
    },
}

_LISTS = {("sweep", "h"), ("sweep", "residual_h"), ("sweep", "korn_h")}


class ConfigError(ValueError):
    pass


def _coerce(section, key, raw, default):
    if (section, key) in _LISTS:
        vals = [float(x) for x in str(raw).replace(",", " ").split()]
        return vals
    if isinstance(default, bool):
        s = str(raw).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return str(raw).strip()


def load_config(path=None, overrides=None):
    """Parsed configuration as nested dicts (reference values for missing keys).

    Unknown keys in [section] are passed to the mesh builder (radius,
    width, height, a, b, angle, path); elsewhere they are rejected."""
    cfg = copy.deepcopy(REFERENCE)
    if path is not None:
        cp = configparser.ConfigParser()
        cp.optionxform = str          # keys such as T and L are case-sensitive
        with open(path) as fh:
            cp.read_file(fh)
        for sec in cp.sections():
            if sec not in cfg:
                raise ConfigError(f"unknown section [{sec}]")
            for key, raw in cp.items(sec):
                if key in cfg[sec]:
                    cfg[sec][key] = _coerce(sec, key, raw, REFERENCE[sec][key])
                elif sec == "section":
                    try:
                        cfg[sec][key] = float(raw)
                    except ValueError:
                        cfg[sec][key] = raw.strip()
                else:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
    for dotted, val in (overrides or {}).items():
        sec, key = dotted.split(".", 1)
        if sec not in cfg:
            raise ConfigError(f"unknown section [{sec}]")
        default = REFERENCE[sec].get(key, val)
        cfg[sec][key] = _coerce(sec, key, val, default) if isinstance(val, str) else val
    validate(cfg)
    return cfg


def validate(cfg):
    s, b, w, v = cfg["section"], cfg["beam"], cfg["sweep"], cfg["solver"]
    if float(s["resolution"]) <= 0:
        raise ConfigError("resolution must be positive")
    if b["L"] <= 0 or w["T"] <= 0:
        raise ConfigError("L and T must be positive")
    if w["n1"] < 4 or w["n1"] % 2:
        raise ConfigError("n1 must be even and at least 4")
    if not 1 <= b["mode"] < w["n1"] // 2:
        raise ConfigError("beam mode must lie in 1 .. n1/2 - 1")
    for key in ("h", "residual_h", "korn_h"):
        hs = w[key]
        if any(x <= 0 or x > 1 for x in hs):
            raise ConfigError(f"[sweep] {key}: thickness values must lie in (0, 1]")
        if any(a <= b_ for a, b_ in zip(hs, hs[1:])):
            raise ConfigError(f"[sweep] {key}: h values must be strictly decreasing")
    if v["dt"] <= 0 or v["beam_dt"] <= 0:
        raise ConfigError("time steps must be positive")
    if b["amplitude_mode"] not in ("smallness", "direct"):
        raise ConfigError("amplitude_mode is 'smallness' or 'direct'")
    if not math.isfinite(b["M"]) or b["M"] < 0:
        raise ConfigError("M must be a nonnegative number")


def digest(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def write_config(cfg, path):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for sec, items in cfg.items():
        cp[sec] = {}
        for k, val in items.items():
            if isinstance(val, list):
                cp[sec][k] = ", ".join(repr(float(x)) for x in val)
            else:
                cp[sec][k] = str(val)
    with open(path, "w") as fh:
        cp.write(fh)


def output_dir(cfg, root=None):
    base = Path(root if root is not None else cfg["sweep"]["output"])
    return base / digest(cfg)
