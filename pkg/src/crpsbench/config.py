"""INI-style experiment configs for the harness.

A config file has one run section (``[convergence]``, ``[slicewise]`` or
``[ranking]``) plus optional problem sections::

    [convergence]
    estimators = quantile, pwm_plugin, unbiased, kernquad
    M = 10, 100, 1000, 10000, 100000
    seeds = 10

    [ackley]
    timesteps = 50

    [gp]
    lengthscale = 0.5

Ranking configs name their datasets and models and describe each in
``[dataset.<name>]`` and ``[model.<name>]`` sections.  Any key or section
not listed here is rejected with a :class:`ConfigError` naming it.
"""

from __future__ import annotations

import configparser
import re
from importlib import resources
from pathlib import Path
from typing import Dict, Optional, Union

from .harness import (
    AckleySpec,
    ConvergenceConfig,
    GPVariant,
    MultisinSpec,
    RankingConfig,
    SlicewiseConfig,
)

RUN_KINDS = ("convergence", "slicewise", "ranking")

_RUN_KEYS = {
    "convergence": {"estimators", "M", "Q", "grid", "seeds", "master_seed", "kernquad_s", "kernquad_n",
                    "timing", "workers"},
    "slicewise": {"estimators", "M", "seeds", "master_seed", "kernquad_s", "kernquad_n", "workers"},
    "ranking": {"estimators", "datasets", "models", "M", "seeds", "master_seed", "kernquad_s", "kernquad_n",
                "workers"},
}
_ACKLEY_KEYS = {"n_points", "n_train", "domain_lo", "domain_hi", "seed", "timesteps"}
_GP_KEYS = {"lengthscale", "signal_var", "noise_var"}
_DATASET_KEYS = {"freqs", "weights", "L", "T", "noise_std"}
_MODEL_KEYS = {"lengthscale_steps", "signal_var", "noise_var"}


class ConfigError(ValueError):
    """Invalid config file; the message names the offending key or section."""


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``"fig3.cfg"``."""
    path = resources.files("crpsbench") / "configs" / name
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(path))


def _line_of(text: str, section: str, key: str) -> Optional[int]:
    in_section = False
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("["):
            in_section = s == f"[{section}]"
        elif in_section and re.match(rf"{re.escape(key)}\s*[=:]", s, flags=re.IGNORECASE):
            return no
    return None


class _Section:
    """Typed accessors over one parsed section, with key checking."""

    def __init__(self, name, items, allowed, source, text):
        self.name, self.items, self.source, self.text = name, dict(items), source, text
        unknown = sorted(set(self.items) - allowed)
        if unknown:
            where = "; ".join(self._where(k) for k in unknown)
            raise ConfigError(f"{source}: unknown key(s) in [{name}]: {where}; allowed: {', '.join(sorted(allowed))}")

    def _where(self, key):
        line = _line_of(self.text, self.name, key)
        return f"{key!r} (line {line})" if line else repr(key)

    def _fail(self, key, msg):
        raise ConfigError(f"{self.source}: [{self.name}] {self._where(key)}: {msg}")

    def raw(self, key):
        return self.items.get(key)

    def _convert(self, key, fn, what):
        try:
            return fn(self.items[key])
        except (ValueError, TypeError):
            self._fail(key, f"expected {what}, got {self.items[key]!r}")

    def int(self, key, default=None):
        return default if key not in self.items else self._convert(key, _int_token, "an integer")

    def float(self, key, default=None):
        return default if key not in self.items else self._convert(key, float, "a number")

    def str(self, key, default=None):
        return default if key not in self.items else self.items[key].strip()

    def bool(self, key, default=False):
        if key not in self.items:
            return default
        v = self.items[key].strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        self._fail(key, f"expected a boolean, got {self.items[key]!r}")

    def optional_int(self, key, default=None):
        if key not in self.items or self.items[key].strip().lower() in ("", "none", "all", "default"):
            return default
        return self.int(key)

    def list(self, key, conv=None, default=None):
        if key not in self.items:
            return default
        # ``str`` in this class body is the accessor above, not the builtin
        conv = conv or (lambda p: p)
        parts = [p.strip() for p in self.items[key].split(",")]
        parts = [p for p in parts if p]
        if not parts:
            self._fail(key, "list is empty")
        try:
            return tuple(conv(p) for p in parts)
        except ValueError:
            self._fail(key, f"could not parse list {self.items[key]!r}")


def _int_token(v: str) -> int:
    f = float(v)
    if not f.is_integer():
        raise ValueError(v)
    return int(f)


def _parse(path: Union[str, Path]):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys are case-sensitive (M, Q, L, T)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return parser, text, str(path)


def _ackley(parser, text, source) -> AckleySpec:
    spec = AckleySpec()
    if parser.has_section("ackley"):
        sec = _Section("ackley", parser.items("ackley"), _ACKLEY_KEYS, source, text)
        spec.n_points = sec.int("n_points", spec.n_points)
        spec.n_train = sec.int("n_train", spec.n_train)
        spec.domain_lo = sec.float("domain_lo", spec.domain_lo)
        spec.domain_hi = sec.float("domain_hi", spec.domain_hi)
        spec.seed = sec.int("seed", spec.seed)
        spec.timesteps = sec.optional_int("timesteps", None)
    if parser.has_section("gp"):
        sec = _Section("gp", parser.items("gp"), _GP_KEYS, source, text)
        spec.lengthscale = sec.float("lengthscale", spec.lengthscale)
        spec.signal_var = sec.float("signal_var", spec.signal_var)
        spec.noise_var = sec.float("noise_var", spec.noise_var)
    return spec


def _check_sections(parser, kind, source, extra=()):
    allowed = {kind, *extra}
    if kind in ("convergence", "slicewise"):
        allowed |= {"ackley", "gp"}
    for name in parser.sections():
        if name not in allowed:
            raise ConfigError(f"{source}: unknown section [{name}] for a {kind} config")
    if not parser.has_section(kind):
        raise ConfigError(f"{source}: missing [{kind}] section")


def load_config(path: Union[str, Path], kind: str):
    """Parse ``path`` into the harness config for ``kind``.

    Returns a :class:`ConvergenceConfig`, :class:`SlicewiseConfig` or
    :class:`RankingConfig`; values not given keep the dataclass defaults.
    """
    if kind not in RUN_KINDS:
        raise ValueError(f"kind must be one of {RUN_KINDS}")
    parser, text, source = _parse(path)

    if kind == "ranking":
        extra = [s for s in parser.sections() if s.startswith(("dataset.", "model."))]
        _check_sections(parser, kind, source, extra)
    else:
        _check_sections(parser, kind, source)
    sec = _Section(kind, parser.items(kind), _RUN_KEYS[kind], source, text)

    def common(cfg):
        cfg.estimators = sec.list("estimators", default=cfg.estimators)
        cfg.seeds = sec.int("seeds", cfg.seeds)
        cfg.master_seed = sec.int("master_seed", cfg.master_seed)
        cfg.kernquad_s = sec.optional_int("kernquad_s", cfg.kernquad_s)
        cfg.kernquad_n = sec.int("kernquad_n", cfg.kernquad_n)
        cfg.workers = sec.optional_int("workers", cfg.workers)
        return cfg

    try:
        if kind == "convergence":
            cfg = common(ConvergenceConfig(problem=_ackley(parser, text, source)))
            cfg.M = sec.list("M", _int_token, cfg.M)
            cfg.Q = sec.list("Q", _int_token, cfg.Q)
            cfg.grid = sec.str("grid", cfg.grid)
            cfg.timing = sec.bool("timing", cfg.timing)
        elif kind == "slicewise":
            cfg = common(SlicewiseConfig(problem=_ackley(parser, text, source)))
            cfg.M = sec.int("M", cfg.M)
        else:
            cfg = common(RankingConfig())
            cfg.M = sec.int("M", cfg.M)
            cfg.datasets = _named(parser, text, source, sec, "datasets", "dataset", cfg.datasets)
            cfg.models = _named(parser, text, source, sec, "models", "model", cfg.models)
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def _named(parser, text, source, sec, key, prefix, defaults) -> Dict[str, object]:
    names = sec.list(key)
    declared = [s[len(prefix) + 1:] for s in parser.sections() if s.startswith(prefix + ".")]
    if names is None:
        if not declared:
            return defaults
        names = tuple(declared)
    for name in declared:
        if name not in names:
            raise ConfigError(f"{source}: section [{prefix}.{name}] is not listed in {key}")
    out = {}
    for name in names:
        section = f"{prefix}.{name}"
        if not parser.has_section(section):
            if name in defaults:
                out[name] = defaults[name]
                continue
            raise ConfigError(f"{source}: {key} lists {name!r} but there is no [{section}] section")
        if prefix == "dataset":
            s = _Section(section, parser.items(section), _DATASET_KEYS, source, text)
            base = defaults.get(name, MultisinSpec((0.1, 1.0, 2.0, 5.0)))
            freqs = s.list("freqs", float, base.freqs)
            out[name] = MultisinSpec(
                freqs=freqs,
                weights=s.list("weights", float, base.weights),
                L=s.int("L", base.L),
                T=s.int("T", base.T),
                noise_std=s.float("noise_std", base.noise_std),
            )
        else:
            s = _Section(section, parser.items(section), _MODEL_KEYS, source, text)
            base = GPVariant()
            out[name] = GPVariant(
                lengthscale_steps=s.float("lengthscale_steps", base.lengthscale_steps),
                signal_var=s.float("signal_var", base.signal_var),
                noise_var=s.float("noise_var", base.noise_var),
            )
    return out
