"""Ground-truth simulator for the M observed cells.

Each trial owns a stream derived from (master seed, trial index). The truth
draw uses child key 0 and each cell c uses child key c, so the order in
which a policy probes cells never perturbs another cell's observations.
"""

from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .model import Family, ParamGrid

PRIOR_TOLERANCE = 1e-12


class TruthMode(str, Enum):
    FIXED = "fixed"                     # parameters given by the config
    UNIFORM_DRAW = "uniform"            # per-cell null drawn i.i.d. from the null set
    UNIFORM_COMMON = "uniform-common"   # one null drawn for all cells


@dataclass(frozen=True)
class Prior:
    """Prior probability of each hypothesis H_m (cell m is anomalous).

    With strict=False the (0, 1) range check is skipped, which tests use to
    pin the anomalous cell with a degenerate prior.
    """

    pi: tuple[float, ...]
    strict: bool = True

    def __post_init__(self):
        pi = tuple(float(p) for p in self.pi)
        object.__setattr__(self, "pi", pi)
        if not pi:
            raise ConfigError("prior", "prior must have one entry per cell")
        if abs(sum(pi) - 1.0) > PRIOR_TOLERANCE:
            raise ConfigError("prior", f"entries sum to {sum(pi)!r}, expected 1")
        if not self.strict:
            if any(p < 0 for p in pi):
                raise ConfigError("prior", "entries must be non-negative")
            return
        if len(pi) == 1:
            return
        if any(not (0.0 < p < 1.0) for p in pi):
            raise ConfigError("prior", "entries must lie strictly between 0 and 1")

    @classmethod
    def uniform(cls, cells: int) -> "Prior":
        return cls(tuple([1.0 / cells] * cells))

    @classmethod
    def degenerate(cls, cell: int, cells: int) -> "Prior":
        pi = [0.0] * cells
        pi[cell - 1] = 1.0
        return cls(tuple(pi), strict=False)

    @property
    def cells(self) -> int:
        return len(self.pi)


@dataclass(frozen=True)
class GroundTruth:
    """The realized hypothesis, parameters and change point of one trial.

    Cells are labelled 1..M. anomalous holds every cell that switches at
    tau_c; in the single-anomaly model it is just (m_star,).
    """

    m_star: int
    theta_null: tuple[float, ...]
    theta_alt: float
    tau_c: int
    anomalous: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "theta_null", tuple(float(v) for v in self.theta_null))
        if not self.anomalous:
            object.__setattr__(self, "anomalous", (self.m_star,))
        if not 1 <= self.m_star <= self.cells:
            raise ConfigError("m_star", f"cell {self.m_star} outside 1..{self.cells}")
        if self.tau_c < 0:
            raise ConfigError("tau_c", "change point must be >= 0")

    @property
    def cells(self) -> int:
        return len(self.theta_null)

    @property
    def first_anomalous_time(self) -> int:
        # tau_c = 0 means anomalous from the first sample
        return max(self.tau_c, 1)

    def regime(self, cell: int, t: int) -> float:
        """Parameter governing cell's observation at time t."""
        if not 1 <= cell <= self.cells:
            raise DomainError(f"cell {cell} outside 1..{self.cells}")
        if t < 1:
            raise DomainError(f"time {t} must be >= 1")
        if cell in self.anomalous and t >= self.tau_c:
            return self.theta_alt
        return self.theta_null[cell - 1]

    def common_null(self) -> float | None:
        """The shared null parameter, or None when cells differ."""
        first = self.theta_null[0]
        return first if all(v == first for v in self.theta_null) else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta_null"] = list(self.theta_null)
        d["anomalous"] = list(self.anomalous)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            m_star=int(d["m_star"]),
            theta_null=tuple(d["theta_null"]),
            theta_alt=float(d["theta_alt"]),
            tau_c=int(d["tau_c"]),
            anomalous=tuple(int(c) for c in d.get("anomalous", ())),
        )


@dataclass(frozen=True)
class FixedParams:
    """Config-given parameters for TruthMode.FIXED."""
    theta_null: float | Sequence[float]
    theta_alt: float


def trial_seed(master_seed: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(trial,))


def child_rng(stream: np.random.SeedSequence, key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=stream.entropy, spawn_key=tuple(stream.spawn_key) + (key,))
    return np.random.default_rng(seq)


def sample_truth(
    prior: Prior,
    grid: ParamGrid,
    mode: TruthMode,
    rng: np.random.Generator,
    tau_c: int = 0,
    fixed: FixedParams | None = None,
    anomalies: int = 1,
) -> GroundTruth:
    """Draw the anomalous cell(s) from the prior and assign parameters.

    Args:
        prior: Hypothesis prior over the M cells.
        grid: Parameter grid supplying the null and anomalous sets.
        mode: How per-cell parameters are chosen.
        rng: Generator for this trial's truth draw.
        tau_c: Deterministic change point.
        fixed: Parameters for TruthMode.FIXED.
        anomalies: Number of anomalous cells (L).

    Returns:
        The realized GroundTruth.
    """
    cells = prior.cells
    mode = TruthMode(mode)

    if anomalies == 1:
        m_star = int(rng.choice(cells, p=prior.pi)) + 1
        anomalous = (m_star,)
    else:
        picked = rng.choice(cells, size=anomalies, replace=False, p=prior.pi)
        anomalous = tuple(int(c) + 1 for c in picked)
        m_star = anomalous[0]

    if mode is TruthMode.FIXED:
        if fixed is None:
            raise ConfigError("theta_alt", "fixed truth mode needs theta_null and theta_alt")
        theta_null = _fixed_nulls(fixed.theta_null, cells, grid)
        if fixed.theta_alt not in grid.alt_values:
            raise ConfigError("theta_alt", f"{fixed.theta_alt!r} is not in the anomalous set")
        theta_alt = float(fixed.theta_alt)
    elif mode is TruthMode.UNIFORM_DRAW:
        nulls = grid.null_values
        theta_null = tuple(nulls[i] for i in rng.integers(len(nulls), size=cells))
        theta_alt = grid.alt_values[int(rng.integers(len(grid.alt_values)))]
    else:
        nulls = grid.null_values
        theta_null = (nulls[int(rng.integers(len(nulls)))],) * cells
        theta_alt = grid.alt_values[int(rng.integers(len(grid.alt_values)))]

    return GroundTruth(m_star, theta_null, theta_alt, tau_c, anomalous)


def _fixed_nulls(theta_null, cells: int, grid: ParamGrid) -> tuple[float, ...]:
    if np.isscalar(theta_null):
        values = (float(theta_null),) * cells
    else:
        values = tuple(float(v) for v in theta_null)
        if len(values) != cells:
            raise ConfigError("theta_null", f"expected {cells} values, got {len(values)}")
    for v in values:
        if v not in grid.null_values:
            raise ConfigError("theta_null", f"{v!r} is not in the null set")
    return values


def observe(family: Family, truth: GroundTruth, cell: int, t: int,
            rng: np.random.Generator) -> float:
    """One observation of a cell at time t under the ground truth."""
    return family.sample(truth.regime(cell, t), rng)


@dataclass
class Environment:
    """A ground truth plus its per-cell random streams for one trial."""

    family: Family
    truth: GroundTruth
    stream: np.random.SeedSequence
    _cell_rngs: list = field(init=False, repr=False)

    def __post_init__(self):
        self._cell_rngs = [child_rng(self.stream, cell) for cell in range(1, self.truth.cells + 1)]

    def observe(self, cell: int, t: int) -> float:
        if not 1 <= cell <= self.truth.cells:
            raise DomainError(f"cell {cell} outside 1..{self.truth.cells}")
        return observe(self.family, self.truth, cell, t, self._cell_rngs[cell - 1])
