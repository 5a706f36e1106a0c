"""INI-style run configuration for the command line.

Sections ``[model]``, ``[fit]`` and ``[study]`` hold ``key = value`` pairs;
``#`` starts a comment.  Every key is optional; unknown keys are errors.
Defaults reproduce the acceptance design: d = 1, beta1 = 0, beta2 = 2,
pi0 = 0.5, sigma0 = 0.5, alpha = theta = 0.4, fgn kernels.

Vectors are comma separated; matrices separate rows with ``;``.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from .estimator import FitConfig
from .experiments import RateStudySpec, RobustnessSpec
from .procgen import ErrorLawSpec, IdentifiabilityError, ModelSpec, RegressorLawSpec
from .rho import DEFAULT_C, RhoKernel

__all__ = ["CliConfig", "ConfigError", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the line when known."""


def _floats(text: str) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in text.split(",") if p.strip())


def _matrix(text: str) -> list[list[float]]:
    return [list(_floats(row)) for row in text.split(";") if row.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


# key -> (parser, default)
SCHEMA = {
    "model": {
        "beta1": (_floats, (0.0,)),
        "beta2": (_floats, (2.0,)),
        "pi0": (float, 0.5),
        "alpha": (float, 0.4),
        "sigma0": (float, 0.5),
        "error_kernel": (str, "fgn"),
        "slowly_varying": (str, "one"),
        "thetas": (_floats, (0.4,)),
        "mixing": (_matrix, None),
        "var0": (_matrix, None),
        "regressor_kernel": (str, "fgn"),
    },
    "fit": {
        "c": (float, DEFAULT_C),
        "trim": (float, 0.1),
        "n_subsets": (int, 50),
        "irls_max_iter": (int, 200),
        "irls_tol": (float, 1e-10),
        "seed": (_seed, None),
        "bidirectional": (_bool, True),
        "polish_tol": (float, 1e-12),
        "box": (float, 1e6),
    },
    "study": {
        "seed": (_seed, None),
        "n": (int, 1000),
        "ns": (_ints, (512, 1024, 2048, 4096)),
        "replicates": (int, 200),
        "beta_slope_tol": (float, 0.25),
        "sigma_slope_tol": (float, 0.25),
        "pi_slope_tol": (float, 0.35),
        "consistency": (_bool, True),
        "consistency_n": (int, 4096),
        "consistency_replicates": (int, 100),
        "robustness": (_bool, True),
        "robustness_n": (int, 1000),
        "robustness_replicates": (int, 50),
        "contamination": (float, 0.1),
        "magnitude": (float, 100.0),
    },
}

_KEY_RE = re.compile(r"^\s*([^=#\s][^=]*?)\s*=")
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")


def _line_map(text: str) -> dict:
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(raw)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), no)
            continue
        m = _KEY_RE.match(raw)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), no)
    return lines


@dataclass
class CliConfig:
    """Resolved configuration: every key has a value (None where unset)."""

    values: dict = field(default_factory=lambda: {s: {k: d for k, (_, d) in keys.items()}
                                                  for s, keys in SCHEMA.items()})
    source: str = "<defaults>"
    lines: dict = field(default_factory=dict)

    def where(self, section: str, key: str | None = None) -> str:
        no = self.lines.get((section, key)) or self.lines.get((section, None))
        return f"{self.source}: line {no}" if no else self.source

    @property
    def seed(self) -> int | None:
        return self.values["study"]["seed"]

    def set_seed(self, seed: int) -> None:
        self.values["study"]["seed"] = _seed(str(seed))

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError(f"{self.where('study', 'seed')}: [study] seed is required for this command")
        return self.seed

    def echo(self) -> dict:
        """Effective configuration as plain JSON-able data."""
        out = {}
        for section, vals in self.values.items():
            out[section] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vals.items()}
        out["fit"]["seed"] = self.fit_seed
        return out

    @property
    def fit_seed(self) -> int:
        f = self.values["fit"]["seed"]
        if f is not None:
            return f
        return self.seed if self.seed is not None else 0

    def model(self) -> ModelSpec:
        m = self.values["model"]
        try:
            err = ErrorLawSpec(alpha=m["alpha"], sigma0=m["sigma0"], kernel=m["error_kernel"],
                               slowly_varying=m["slowly_varying"])
        except ValueError as exc:
            raise ConfigError(f"{self.where('model', 'alpha')}: {exc}") from None
        try:
            reg = RegressorLawSpec(thetas=m["thetas"], mixing=m["mixing"], var0=m["var0"],
                                   kernel=m["regressor_kernel"])
        except ValueError as exc:
            raise ConfigError(f"{self.where('model', 'thetas')}: {exc}") from None
        try:
            return ModelSpec(beta1=m["beta1"], beta2=m["beta2"], pi0=m["pi0"], error_law=err, regressor_law=reg)
        except IdentifiabilityError as exc:
            raise ConfigError(f"{self.where('model', 'beta2')}: identifiability: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{self.where('model', 'beta1')}: {exc}") from None

    def fit(self) -> FitConfig:
        f = self.values["fit"]
        try:
            kernel = RhoKernel(c=f["c"])
            return FitConfig(kernel=kernel, trim=f["trim"], n_subsets=f["n_subsets"],
                             irls_max_iter=f["irls_max_iter"], irls_tol=f["irls_tol"], seed=self.fit_seed,
                             bidirectional=f["bidirectional"], polish_tol=f["polish_tol"], box=f["box"])
        except ValueError as exc:
            raise ConfigError(f"{self.where('fit')}: {exc}") from None

    def rate_spec(self) -> RateStudySpec:
        s = self.values["study"]
        try:
            return RateStudySpec(model=self.model(), ns=s["ns"], replicates=s["replicates"], fit=self.fit(),
                                 seed=self.require_seed(), beta_slope_tol=s["beta_slope_tol"],
                                 sigma_slope_tol=s["sigma_slope_tol"], pi_slope_tol=s["pi_slope_tol"])
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{self.where('study', 'ns')}: {exc}") from None

    def robustness_spec(self) -> RobustnessSpec:
        s = self.values["study"]
        try:
            return RobustnessSpec(model=self.model(), n=s["robustness_n"], replicates=s["robustness_replicates"],
                                  contamination=s["contamination"], magnitude=s["magnitude"], fit=self.fit(),
                                  seed=self.require_seed())
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{self.where('study', 'contamination')}: {exc}") from None


def parse_config(text: str, source: str = "<string>") -> CliConfig:
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None,
        default_section="\x00unused",
    )
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: key outside any section") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: duplicate entry") from None
    except configparser.ParsingError as exc:
        no = exc.errors[0][0] if exc.errors else "?"
        raise ConfigError(f"{source}: line {no}: cannot parse") from None
    cfg = CliConfig(source=source, lines=_line_map(text))
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{cfg.where(section)}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{cfg.where(section, key)}: unknown key {key!r} in [{section}]")
            conv = SCHEMA[section][key][0]
            try:
                cfg.values[section][key] = conv(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{cfg.where(section, key)}: bad value for {key}: {exc}") from None
    return cfg


def load_config(path) -> CliConfig:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text, source=str(path))
