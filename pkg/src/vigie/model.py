"""Parametric observation families over a finite parameter grid.

Densities are only ever evaluated in log space (natural log). The grid is
explicit and finite; estimators search it exhaustively and break ties
toward the smallest parameter value.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, PolicyStateError


_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class FamilyKind(str, Enum):
    EXPONENTIAL = "exponential"  # theta is the rate
    GAUSSIAN = "gaussian"        # theta is the mean, unit variance


class Restrict(str, Enum):
    """Which part of the grid an estimator may return."""
    ALL = "all"
    NULL_ONLY = "null"


@dataclass(frozen=True)
class Family:
    """A one-parameter observation density f(y | theta)."""

    kind: FamilyKind

    @classmethod
    def from_name(cls, name: str) -> "Family":
        try:
            return cls(FamilyKind(name))
        except ValueError:
            known = ", ".join(k.value for k in FamilyKind)
            raise ConfigError("family", f"unknown family '{name}' (known: {known})")

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def support(self) -> tuple[float, float]:
        if self.kind is FamilyKind.EXPONENTIAL:
            return (0.0, np.inf)
        return (-np.inf, np.inf)

    def is_valid_theta(self, theta: float) -> bool:
        if not np.isfinite(theta):
            return False
        if self.kind is FamilyKind.EXPONENTIAL:
            return theta > 0
        return True

    def check_theta(self, theta: float) -> None:
        if not self.is_valid_theta(theta):
            raise DomainError(f"invalid {self.name} parameter: {theta!r}")

    def check_observation(self, y: float) -> None:
        lo, hi = self.support
        if not (lo <= y < hi) or np.isnan(y):
            raise DomainError(f"observation {y!r} outside the {self.name} support")

    def logpdf(self, theta: float, y: float) -> float:
        """Log density at a single point, with parameter and support checks."""
        self.check_theta(theta)
        self.check_observation(y)
        return float(self.logpdf_array(theta, y))

    def logpdf_array(self, thetas, ys) -> np.ndarray:
        """Broadcasting log density; inputs are assumed already validated."""
        thetas = np.asarray(thetas, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if self.kind is FamilyKind.EXPONENTIAL:
            return np.log(thetas) - thetas * ys
        return -_HALF_LOG_2PI - 0.5 * (ys - thetas) ** 2

    def density(self, theta: float, y: float) -> float:
        lo, _ = self.support
        if y < lo:
            return 0.0
        return float(np.exp(self.logpdf_array(theta, y)))

    def kl(self, theta: float, phi: float) -> float:
        """Closed-form D(theta || phi) in nats."""
        self.check_theta(theta)
        self.check_theta(phi)
        if self.kind is FamilyKind.EXPONENTIAL:
            return float(np.log(theta / phi) + phi / theta - 1.0)
        return float(0.5 * (theta - phi) ** 2)

    def sample(self, theta: float, rng: np.random.Generator) -> float:
        # Draw from the standard variate and transform, so a stream yields
        # the same underlying sequence whatever parameter governs a draw.
        if self.kind is FamilyKind.EXPONENTIAL:
            return float(rng.standard_exponential() / theta)
        return float(theta + rng.standard_normal())


@dataclass(frozen=True)
class ParamGrid:
    """Finite parameter space split into a null part and an anomalous part.

    Args:
        values: Strictly increasing parameter values.
        null_set: Indices into values forming the null parameter set.
        alt_set: Indices into values forming the anomalous parameter set.
    """

    values: tuple[float, ...]
    null_set: tuple[int, ...]
    alt_set: tuple[int, ...]

    _array: np.ndarray = field(init=False, repr=False, compare=False)
    _null_mask: np.ndarray = field(init=False, repr=False, compare=False)
    _null_idx: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        null_set = tuple(sorted(int(i) for i in self.null_set))
        alt_set = tuple(sorted(int(i) for i in self.alt_set))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "null_set", null_set)
        object.__setattr__(self, "alt_set", alt_set)

        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError("grid", "parameter values must be strictly increasing")
        if not null_set:
            raise ConfigError("null_values", "null parameter set is empty")
        if not alt_set:
            raise ConfigError("alt_values", "anomalous parameter set is empty")
        if set(null_set) & set(alt_set):
            raise ConfigError("alt_values", "null and anomalous sets overlap")
        if set(null_set) | set(alt_set) != set(range(len(values))):
            raise ConfigError("grid", "null and anomalous sets must cover every grid value")

        mask = np.zeros(len(values), dtype=bool)
        mask[list(null_set)] = True
        object.__setattr__(self, "_array", np.asarray(values, dtype=float))
        object.__setattr__(self, "_null_mask", mask)
        object.__setattr__(self, "_null_idx", np.asarray(null_set, dtype=int))

    @classmethod
    def from_sets(cls, null_values: Iterable[float], alt_values: Iterable[float]) -> "ParamGrid":
        """Build a grid from the two parameter sets, merged in ascending order."""
        null_values = [float(v) for v in null_values]
        alt_values = [float(v) for v in alt_values]
        if not null_values:
            raise ConfigError("null_values", "null parameter set is empty")
        if not alt_values:
            raise ConfigError("alt_values", "anomalous parameter set is empty")
        shared = set(null_values) & set(alt_values)
        if shared:
            raise ConfigError("alt_values", f"overlaps null set at {sorted(shared)}")
        if len(set(null_values)) != len(null_values):
            raise ConfigError("null_values", "duplicate parameter values")
        if len(set(alt_values)) != len(alt_values):
            raise ConfigError("alt_values", "duplicate parameter values")
        tagged = sorted([(v, True) for v in null_values] + [(v, False) for v in alt_values])
        values = tuple(v for v, _ in tagged)
        null_set = tuple(i for i, (_, is_null) in enumerate(tagged) if is_null)
        alt_set = tuple(i for i, (_, is_null) in enumerate(tagged) if not is_null)
        return cls(values, null_set, alt_set)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def null_values(self) -> tuple[float, ...]:
        return tuple(self.values[i] for i in self.null_set)

    @property
    def alt_values(self) -> tuple[float, ...]:
        return tuple(self.values[i] for i in self.alt_set)

    def is_null(self, index: int) -> bool:
        return bool(self._null_mask[index])

    def index_of(self, value: float) -> int | None:
        """Grid index of a parameter value, or None if it is not on the grid."""
        hits = np.flatnonzero(np.isclose(self._array, value, rtol=1e-12, atol=1e-12))
        return int(hits[0]) if hits.size else None


def logpdf(family: Family, theta: float, y: float) -> float:
    return family.logpdf(theta, y)


def llr(family: Family, theta: float, phi: float, y: float) -> float:
    """Log-likelihood ratio of one observation, testing theta against phi."""
    return family.logpdf(theta, y) - family.logpdf(phi, y)


def kl(family: Family, theta: float, phi: float) -> float:
    return family.kl(theta, phi)


def min_null_kl(family: Family, grid: ParamGrid, theta1: float) -> tuple[float, float]:
    """Smallest divergence from an anomalous parameter to the null set.

    Returns:
        (D(theta1), phi*) with phi* the minimizing null parameter; ties go to
        the smallest phi.
    """
    if not grid.null_set:
        raise ConfigError("null_values", "null parameter set is empty")
    index = grid.index_of(theta1)
    if index is None or grid.is_null(index):
        raise DomainError(f"{theta1!r} is not an anomalous grid parameter")
    best_d, best_phi = np.inf, None
    for phi in grid.null_values:
        d = family.kl(theta1, phi)
        if d < best_d:
            best_d, best_phi = d, phi
    return best_d, best_phi


def grid_loglik(family: Family, grid: ParamGrid, window: Sequence[float]) -> np.ndarray:
    """Log-likelihood of the window under every grid parameter."""
    ys = np.asarray(window, dtype=float)
    return family.logpdf_array(grid.array[:, None], ys[None, :]).sum(axis=1)


def argmax_index(loglik: np.ndarray, grid: ParamGrid, restrict: Restrict = Restrict.ALL) -> int:
    """Index of the largest log-likelihood among the allowed grid entries.

    np.argmax returns the first maximum and indices are in ascending value
    order, so ties resolve to the smallest parameter.
    """
    if restrict is Restrict.NULL_ONLY:
        return int(grid._null_idx[np.argmax(loglik[grid._null_idx])])
    return int(np.argmax(loglik))


def mle(family: Family, grid: ParamGrid, window: Sequence[float],
        restrict: Restrict = Restrict.ALL) -> int:
    """Grid maximum-likelihood estimate over a window of observations.

    Args:
        family: Observation family.
        grid: Parameter grid.
        window: Non-empty sequence of observations.
        restrict: Restrict.ALL for the unconstrained estimate,
            Restrict.NULL_ONLY for the estimate constrained to the null set.

    Returns:
        Grid index of the estimate.
    """
    if len(window) == 0:
        raise PolicyStateError("mle needs at least one observation")
    return argmax_index(grid_loglik(family, grid, window), grid, restrict)
