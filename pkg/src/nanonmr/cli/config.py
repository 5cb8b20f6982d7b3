"""
Run configuration: INI files with one section per subcommand.

Values carry their laboratory unit in the key name (``b0_gauss``,
``t2_us``, ``depth_nm`` ...).  Lists are comma separated.  Relative
paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

__all__ = ["ConfigError", "DataError", "ConvergenceError", "Param", "SCHEMAS", "RunConfig", "load_config"]


class ConfigError(ValueError):
    exit_code = 2


class DataError(ValueError):
    exit_code = 3


class ConvergenceError(RuntimeError):
    exit_code = 4


_REQUIRED = object()


def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"{s!r} is not an integer")
    return int(v)


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _strs(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _str(s):
    return s.strip()


@dataclass(frozen=True)
class Param:
    parse: Callable[[str], Any]
    default: Any = _REQUIRED
    check: Optional[Callable[[Any], bool]] = None
    rule: str = ""
    path: bool = False


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _all_pos(v):
    return all(x > 0 for x in v)


def _all_nonneg(v):
    return all(x >= 0 for x in v)


def _species(v):
    return all(x in ("1H", "19F") for x in v)


_SENSOR = {
    "alpha_deg": Param(_float, 4.0, lambda v: 0 <= v <= 90, "in [0, 90]"),
    "t2_us": Param(_float, 20.0, _pos, "> 0"),
    "n": Param(_float, 1.0, _pos, "> 0"),
}

SCHEMAS: Mapping[str, Mapping[str, Param]] = {
    "simulate-xy8": {
        **_SENSOR,
        "b0_gauss": Param(_float, check=_nonneg, rule=">= 0"),
        "k": Param(_int, 1, _pos, ">= 1"),
        "tau_start_ns": Param(_float, check=_pos, rule="> 0"),
        "tau_stop_ns": Param(_float, check=_pos, rule="> 0"),
        "tau_points": Param(_int, 201, lambda v: v >= 2, ">= 2"),
        "nuclei": Param(_strs, ("1H",), _species, "1H and/or 19F"),
        "depths_nm": Param(_floats, (), _all_pos, "> 0"),
        "thickness_nm": Param(_float, math.inf, _pos, "> 0"),
        "b_rms_ut": Param(_floats, (), _all_nonneg, ">= 0"),
        "density_h_nm3": Param(_float, 69.5, _nonneg, ">= 0"),
        "density_f_nm3": Param(_float, 42.0, _nonneg, ">= 0"),
        "noise": Param(_float, 0.0, _nonneg, ">= 0"),
    },
    "fit": {
        "model": Param(_str, check=lambda v: v in ("xy8_single", "xy8_dual"), rule="xy8_single or xy8_dual"),
        "data": Param(_str, path=True),
        "k": Param(_int, 1, _pos, ">= 1"),
        "free_stretch": Param(_bool, False),
        "alpha_deg": Param(_float, 4.0, lambda v: 0 <= v <= 90, "in [0, 90]"),
        "density_h_nm3": Param(_float, 69.5, _pos, "> 0"),
        "density_f_nm3": Param(_float, 42.0, _pos, "> 0"),
        "max_iter": Param(_int, 500, _pos, ">= 1"),
    },
    "calibrate": {
        "b_rms_h_ut": Param(_float, check=_pos, rule="> 0"),
        "b_rms_f_ut": Param(_float, None, _pos, "> 0"),
        "alpha_deg": Param(_float, 4.0, lambda v: 0 <= v <= 90, "in [0, 90]"),
        "density_h_nm3": Param(_float, 69.5, _pos, "> 0"),
        "density_f_nm3": Param(_float, 42.0, _pos, "> 0"),
    },
    "sensitivity": {
        **_SENSOR,
        "contrast": Param(_float, 0.2, _pos, "> 0"),
        "alpha_avg": Param(_float, 0.05, _pos, "> 0"),
        "t_ir_us": Param(_float, 1.0, _nonneg, ">= 0"),
        "tau_points": Param(_int, 201, lambda v: v >= 3, ">= 3"),
        "depth_min_nm": Param(_float, 1.0, _pos, "> 0"),
        "depth_max_nm": Param(_float, 6.0, _pos, "> 0"),
        "depth_points": Param(_int, 51, lambda v: v >= 2, ">= 2"),
    },
    "volume-map": {
        "depth_nm": Param(_float, check=_pos, rule="> 0"),
        "alpha_deg": Param(_float, 4.0, lambda v: 0 <= v <= 90, "in [0, 90]"),
        "nucleus": Param(_str, "1H", lambda v: v in ("1H", "19F"), "1H or 19F"),
        "density_nm3": Param(_float, None, _nonneg, ">= 0"),
        "voxel_nm": Param(_float, None, _pos, "> 0"),
        "fraction": Param(_float, 0.7, lambda v: 0 < v < 1, "in (0, 1)"),
    },
    "simulate-correlation": {
        "b0_gauss": Param(_float, check=_pos, rule="> 0"),
        "k": Param(_int, 1, _pos, ">= 1"),
        "tau_ns": Param(_float, None, _pos, "> 0"),
        "tau_c_start_us": Param(_float, 0.0, _nonneg, ">= 0"),
        "tau_c_step_us": Param(_float, check=_pos, rule="> 0"),
        "tau_c_points": Param(_int, check=lambda v: v >= 2, rule=">= 2"),
        "nuclei": Param(_strs, ("1H", "19F"), _species, "1H and/or 19F"),
        "b_rms_ut": Param(_floats, check=_all_nonneg, rule=">= 0"),
        "corr_time_us": Param(_floats, (), _all_pos, "> 0"),
        "method": Param(_str, "mc", lambda v: v in ("mc", "analytic"), "mc or analytic"),
        "n_samples": Param(_int, 100_000, lambda v: v >= 2, ">= 2"),
        "fft_pad": Param(_int, 4, _pos, ">= 1"),
    },
    "fit-correlation": {
        "data": Param(_str, path=True),
        "b0_gauss": Param(_float, check=_pos, rule="> 0"),
        "t_coor_us": Param(_float, 20.0, _pos, "> 0"),
        "max_iter": Param(_int, 500, _pos, ">= 1"),
    },
    "fit-relaxation": {
        "manifest": Param(_str, path=True),
        "init_khz": Param(_floats, (3.0, 9.0, 6.0), lambda v: len(v) == 3 and _all_pos(v), "three positive rates"),
        "nuisance": Param(_bool, False),
        "max_iter": Param(_int, 500, _pos, ">= 1"),
    },
}

RANDOMISED = {"simulate-correlation"}


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: Mapping[str, Any]
    source: Optional[Path]
    seed: Optional[int]
    digest: str


def _digest(command, params):
    lines = [command]
    for key in sorted(params):
        value = params[key]
        if isinstance(value, Path):
            # name and content, so the digest does not depend on where the run happens
            lines.append(f"{key}={value.name}:{hashlib.sha256(value.read_bytes()).hexdigest()}")
        else:
            lines.append(f"{key}={value!r}")
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def load_config(command: str, path: Optional[Path], seed: Optional[int] = None) -> RunConfig:
    """Parse and validate the section for ``command``.

    A ``[run]`` section may hold ``seed``; a seed given on the command line
    wins.  Unknown keys, missing required keys and values outside their
    allowed range raise :class:`ConfigError`.
    """
    schema = SCHEMAS[command]
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as err:
            raise ConfigError(f"cannot parse {path}: {err}") from None
        extra = set(parser.sections()) - {command, "run"}
        if extra:
            raise ConfigError(f"unexpected sections {sorted(extra)} in {path}")
        if parser.has_section(command):
            raw = dict(parser.items(command))
        if parser.has_section("run"):
            run = dict(parser.items("run"))
            unknown = set(run) - {"seed"}
            if unknown:
                raise ConfigError(f"unknown keys in [run]: {sorted(unknown)}")
            if seed is None and "seed" in run:
                try:
                    seed = _int(run["seed"])
                except ValueError as err:
                    raise ConfigError(f"[run] seed: {err}") from None
        base = path.parent
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys in [{command}]: {sorted(unknown)}")
    params = {}
    for key, spec in schema.items():
        if key in raw:
            try:
                value = spec.parse(raw[key])
            except ValueError as err:
                raise ConfigError(f"[{command}] {key}: {err}") from None
            if spec.check is not None and not spec.check(value):
                raise ConfigError(f"[{command}] {key} = {raw[key]!r} must be {spec.rule}")
            if spec.path:
                value = (base / value).resolve()
                if not value.is_file():
                    raise ConfigError(f"[{command}] {key}: file not found: {value}")
        elif spec.default is _REQUIRED:
            raise ConfigError(f"[{command}] missing required key {key!r}")
        else:
            value = spec.default
        params[key] = value
    if command in RANDOMISED and params.get("method", "mc") == "mc" and seed is None:
        raise ConfigError(f"{command} is randomised and needs an explicit seed (--seed or [run] seed)")
    if command == "simulate-xy8" and params["noise"] > 0 and seed is None:
        raise ConfigError("simulate-xy8 with noise > 0 needs an explicit seed (--seed or [run] seed)")
    return RunConfig(command, params, path, seed, _digest(command, params))
