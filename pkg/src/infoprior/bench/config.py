"""Flat ``key = value`` configuration files.

Blank lines and lines starting with ``#`` are ignored. Values stay strings
until a typed getter reads them; lists are comma separated.

Recognized sections::

    seed, replicates, out_dir
    dataset.path, dataset.target, dataset.name, dataset.synthetic_rows,
    dataset.synthetic_features, dataset.synthetic_noise, dataset.extend,
    dataset.n_irrelevant, dataset.target_pve, dataset.train_fraction
    prior.name, prior.hidden, plus the keys read by infoprior.priors.spec_from_config:
    prior.widths, prior.bias, prior.local, prior.local_scale, prior.alpha, prior.beta,
    prior.input_indicator, prior.indicator_p, prior.hidden_indicator,
    prior.hidden_indicator_p, prior.global_scales, prior.count, prior.count_lower,
    prior.count_upper, prior.count_precision, prior.count_mode, prior.count_p
    train.epochs, train.batch_size, train.learning_rate, train.samples,
    train.temp_start, train.temp_end, train.predict_samples
    match.enabled, match.a, match.b, match.theta0, match.steps, match.learning_rate,
    match.samples, match.eta, match.clamp, match.rows
    pve.samples
    synth.n, synth.p0, synth.A, synth.noise_sd
    oracle.priors, oracle.iters, oracle.burn_in, oracle.infoss_lower, oracle.infoss_upper,
    oracle.infoss_precision, oracle.deltass_p
    cv.folds, cv.local_scale, cv.indicator_p
    plot.enabled
"""

from __future__ import annotations

import math

__all__ = ["KNOWN_KEYS", "ConfigError", "Config", "parse_config", "load_config", "REFERENCE_GRIDS"]

KNOWN_KEYS = frozenset(
    ["seed", "replicates", "out_dir"]
    + [f"dataset.{k}" for k in ("path", "target", "name", "synthetic_rows", "synthetic_features",
                                "synthetic_noise", "extend", "n_irrelevant", "target_pve",
                                "train_fraction")]
    + [f"prior.{k}" for k in ("name", "hidden", "widths", "bias", "local", "local_scale", "alpha",
                              "beta", "input_indicator", "indicator_p", "hidden_indicator",
                              "hidden_indicator_p", "global_scales", "count", "count_lower",
                              "count_upper", "count_precision", "count_mode", "count_p")]
    + [f"train.{k}" for k in ("epochs", "batch_size", "learning_rate", "samples", "temp_start",
                              "temp_end", "predict_samples")]
    + [f"match.{k}" for k in ("enabled", "a", "b", "theta0", "steps", "learning_rate", "samples",
                              "eta", "clamp", "rows")]
    + ["pve.samples", "synth.n", "synth.p0", "synth.A", "synth.noise_sd"]
    + [f"oracle.{k}" for k in ("priors", "iters", "burn_in", "infoss_lower", "infoss_upper",
                               "infoss_precision", "deltass_p")]
    + ["cv.folds", "cv.local_scale", "cv.indicator_p", "plot.enabled"]
)

REFERENCE_GRIDS = {
    "cv.local_scale": ",".join(repr(math.exp(k)) for k in (-2, -1, 0, 1, 2)),
    "cv.indicator_p": "0.1,0.3,0.5,0.7,0.9",
}


class ConfigError(ValueError):
    pass


_MISSING = object()


class Config(dict):
    """A dict of string values with typed accessors."""

    def _raw(self, key, default):
        if key in self:
            return self[key]
        if default is _MISSING:
            raise ConfigError(f"missing config key {key!r}")
        return default

    def get_str(self, key, default=None):
        v = self._raw(key, default)
        return None if v is None else str(v)

    def get_int(self, key, default=_MISSING):
        v = self._raw(key, default)
        try:
            return int(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: expected an integer, got {v!r}") from exc

    def get_float(self, key, default=_MISSING):
        v = self._raw(key, default)
        try:
            return float(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: expected a number, got {v!r}") from exc

    def get_bool(self, key, default=False):
        v = str(self._raw(key, default)).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {v!r}")

    def get_list(self, key, cast=float, default=None):
        v = self._raw(key, default)
        if v is None:
            return None
        items = v if isinstance(v, (list, tuple)) else [s for s in str(v).split(",") if s.strip()]
        try:
            return [cast(s.strip() if isinstance(s, str) else s) for s in items]
        except ValueError as exc:
            raise ConfigError(f"{key}: bad list {v!r}") from exc

    def section(self, prefix: str) -> dict:
        return {k: v for k, v in self.items() if k.startswith(prefix + ".")}


def _check_key(key: str, lineno) -> None:
    if key not in KNOWN_KEYS:
        where = f"line {lineno}: " if lineno else ""
        raise ConfigError(f"{where}unknown config key {key!r}")


def parse_config(text: str) -> Config:
    cfg = Config()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        _check_key(key, lineno)
        if key in cfg:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        cfg[key] = value
    return cfg


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def update(cfg: Config, values: dict) -> Config:
    out = Config(cfg)
    for k, v in values.items():
        _check_key(k, None)
        out[k] = v
    return out
