"""Experiment configuration, presets and validation.

Configs are flat JSON objects, for example::

    {
      "family": "exponential",
      "null_values": [0.1, 0.2, 0.3],
      "alt_values": [2.0, 3.0],
      "cells": 5,
      "tau_c": 0,
      "policy": "scpa",
      "c_list": [0.01, 0.001]
    }

Missing keys take the defaults of ExperimentConfig. Presets for the six
reference figures (and the two slope experiments) ship as package data in
vigie/data/presets/.
"""

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .baselines import CusumPolicy
from .environment import FixedParams, GroundTruth, Prior, TruthMode
from .errors import ConfigError, ConfigParseError
from .model import Family, ParamGrid
from .policy import DEFAULT_CAP, NullMode, PolicyConfig, ScpaPolicy, Statistic


POLICIES = ("scpa", "scpa-known-null", "cusum")
PRESET_DIR_NAME = "presets"


def get_package_data_path() -> Path:
    """Get the path to the package's data directory."""
    return Path(__file__).parent / "data"


def get_presets_dir() -> Path:
    return get_package_data_path() / PRESET_DIR_NAME


def list_presets() -> list[str]:
    return sorted(p.stem for p in get_presets_dir().glob("*.json"))


@dataclass
class ExperimentConfig:
    """Everything one experiment needs. Defaults reproduce the fig1 setup."""

    # Observation model
    family: str = "exponential"
    null_values: list[float] = field(default_factory=lambda: [round(0.1 * n, 1) for n in range(1, 11)])
    alt_values: list[float] = field(default_factory=lambda: [float(n) for n in range(2, 11)])

    # Search problem
    cells: int = 5
    probes: int = 1
    anomalies: int = 1
    window: int = 1
    prior: list[float] | None = None  # None = uniform

    # Ground truth
    truth_mode: str = TruthMode.UNIFORM_COMMON.value
    theta_null: float | list[float] | None = None
    theta_alt: float | None = None
    tau_c: int = 0

    # Policy
    policy: str = "scpa"
    statistic: str = Statistic.SALLR.value
    theta0: float | None = None  # None = common null of the realized truth

    # Monte Carlo
    c: float = 1e-3
    c_list: list[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    n_trials: int = 1000
    seed: int = 0
    cap: int = DEFAULT_CAP
    workers: int = 1
    change_exponent: float = 0.1
    out: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigParseError(None, "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        return cls(**d).validate()

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with the non-None overrides applied, validated."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes).validate()

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        family = self.family_obj()
        for name in ("null_values", "alt_values"):
            values = getattr(self, name)
            if not isinstance(values, list) or not all(_is_number(v) for v in values):
                raise ConfigError(name, "expected a list of numbers")
            for v in values:
                if not family.is_valid_theta(v):
                    raise ConfigError(name, f"{v!r} is not a valid {family.name} parameter")
        grid = self.grid()

        for name in ("cells", "probes", "anomalies", "window", "tau_c", "n_trials", "cap", "workers", "seed"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(name, f"expected an integer, got {value!r}")
        for name, low in (("cells", 1), ("probes", 1), ("anomalies", 1), ("window", 1),
                          ("n_trials", 1), ("cap", 1), ("workers", 1)):
            if getattr(self, name) < low:
                raise ConfigError(name, f"must be >= {low}")
        if self.tau_c < 0:
            raise ConfigError("tau_c", "change point must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed", "seed must be >= 0")
        if self.probes > self.cells:
            raise ConfigError("probes", f"cannot probe {self.probes} of {self.cells} cells")
        if self.anomalies > 1 and self.anomalies >= self.cells:
            raise ConfigError("anomalies", f"need fewer than {self.cells} anomalies")

        if self.prior is not None:
            if not isinstance(self.prior, list) or len(self.prior) != self.cells:
                raise ConfigError("prior", f"expected {self.cells} probabilities")
            if not all(_is_number(p) for p in self.prior):
                raise ConfigError("prior", "probabilities must be numbers")
        self.prior_obj()

        try:
            mode = TruthMode(self.truth_mode)
        except ValueError:
            known = ", ".join(m.value for m in TruthMode)
            raise ConfigError("truth_mode", f"unknown truth mode '{self.truth_mode}' (known: {known})")
        if mode is TruthMode.FIXED:
            self._validate_fixed(grid)

        if self.policy not in POLICIES:
            raise ConfigError("policy", f"unknown policy '{self.policy}' (known: {', '.join(POLICIES)})")
        try:
            Statistic(self.statistic)
        except ValueError:
            raise ConfigError("statistic", f"unknown statistic '{self.statistic}'")
        if self.policy == "cusum" and (self.probes != 1 or self.anomalies != 1):
            raise ConfigError("policy", "cusum probes one cell and declares one anomaly")
        if self.policy == "scpa-known-null":
            self._validate_known_null(grid, mode)

        _check_cost("c", self.c)
        if not isinstance(self.c_list, list) or not self.c_list:
            raise ConfigError("c_list", "expected a non-empty list of costs")
        for c in self.c_list:
            _check_cost("c_list", c)
        if not 0.0 < self.change_exponent < 1.0:
            raise ConfigError("change_exponent", "must lie in (0, 1)")

        # Surfaces remaining cross-field problems (e.g. probes with anomalies).
        self.policy_config(self.c, theta0=self._static_theta0())
        return self

    def _validate_fixed(self, grid: ParamGrid) -> None:
        if self.theta_alt is None or self.theta_null is None:
            raise ConfigError("theta_alt" if self.theta_alt is None else "theta_null",
                              "fixed truth mode needs theta_null and theta_alt")
        if self.theta_alt not in grid.alt_values:
            raise ConfigError("theta_alt", f"{self.theta_alt!r} is not in the anomalous set")
        nulls = self.theta_null if isinstance(self.theta_null, list) else [self.theta_null]
        if isinstance(self.theta_null, list) and len(nulls) != self.cells:
            raise ConfigError("theta_null", f"expected {self.cells} values, got {len(nulls)}")
        for v in nulls:
            if v not in grid.null_values:
                raise ConfigError("theta_null", f"{v!r} is not in the null set")

    def _validate_known_null(self, grid: ParamGrid, mode: TruthMode) -> None:
        if self.theta0 is not None:
            if self.theta0 not in grid.null_values:
                raise ConfigError("theta0", f"{self.theta0!r} is not in the null set")
            return
        if mode is TruthMode.UNIFORM_DRAW:
            raise ConfigError("theta0", "per-cell null draws have no common value to know")
        if mode is TruthMode.FIXED and isinstance(self.theta_null, list) and len(set(self.theta_null)) > 1:
            raise ConfigError("theta0", "fixed null parameters differ across cells")

    def _static_theta0(self) -> float | None:
        if self.policy != "scpa-known-null":
            return None
        if self.theta0 is not None:
            return self.theta0
        # Stand-in for the realized common null; only used for validation.
        return self.grid().null_values[0]

    # ------------------------------------------------------------------
    # Derived objects
    # ------------------------------------------------------------------

    def family_obj(self) -> Family:
        return Family.from_name(self.family)

    def grid(self) -> ParamGrid:
        return ParamGrid.from_sets(self.null_values, self.alt_values)

    def prior_obj(self) -> Prior:
        if self.prior is None:
            return Prior.uniform(self.cells)
        return Prior(tuple(self.prior))

    def fixed_params(self) -> FixedParams | None:
        if TruthMode(self.truth_mode) is not TruthMode.FIXED:
            return None
        return FixedParams(theta_null=self.theta_null, theta_alt=self.theta_alt)

    def policy_config(self, c: float, theta0: float | None = None) -> PolicyConfig:
        known = self.policy == "scpa-known-null"
        return PolicyConfig(
            c=c,
            mode=NullMode.KNOWN if known else NullMode.UNKNOWN,
            theta0=theta0 if known else None,
            statistic=Statistic(self.statistic),
            window=self.window,
            probes=self.probes,
            anomalies=self.anomalies,
        )

    def build_policy(self, c: float, truth: GroundTruth | None = None):
        """Policy for one trial at cost c.

        The known-null policy takes theta0 from the config, or else the
        common null parameter of the realized truth (side information).
        """
        family, grid = self.family_obj(), self.grid()
        if self.policy == "cusum":
            return CusumPolicy(family, grid, c, self.cells)
        theta0 = None
        if self.policy == "scpa-known-null":
            theta0 = self.theta0
            if theta0 is None:
                theta0 = truth.common_null() if truth is not None else None
                if theta0 is None:
                    raise ConfigError("theta0", "no common null parameter to use as side information")
        return ScpaPolicy(self.policy_config(c, theta0), family, grid, self.cells)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_cost(name: str, c) -> None:
    if not _is_number(c) or not 0.0 < c < 1.0:
        raise ConfigError(name, f"observation cost must lie in (0, 1), got {c!r}")


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a JSON experiment config.

    Raises:
        ConfigParseError: The file is missing or not well-formed JSON.
        ConfigError: A value failed validation; .field names the key.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigParseError(None, f"cannot read {path}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(None, f"{path}: {e}")
    try:
        return ExperimentConfig.from_dict(data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(None, str(e))


def load_preset(name: str) -> ExperimentConfig:
    path = get_presets_dir() / f"{name}.json"
    if not path.exists():
        raise ConfigError("preset", f"unknown preset '{name}' (known: {', '.join(list_presets())})")
    return load_config(path)


def dump_config(config: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(config.to_dict(), f, indent=2)
