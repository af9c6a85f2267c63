"""The SCPA search policy and the trial loop shared by all policies.

SCPA alternates between three phases:

- Explore: probe cells round-robin (K at a time) and estimate each cell's
  parameter from its last N exploration samples. When exactly L cells look
  anomalous, anchor T at the current time and switch to Exploit.
- Exploit: probe the suspect(s) and re-estimate from the samples taken
  since T+1. A suspect whose estimate falls back into the null set sends
  the policy back to Explore.
- Test: evaluated inside the same step as Exploit; the suspect's SALLR (or
  GLLR) is compared against -log c and the policy stops once it clears it.

Policies are single-owner mutable objects. Given the same observations they
make the same decisions, so a trace can be replayed exactly.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

import numpy as np

from .environment import Environment
from .errors import ConfigError, PolicyStateError
from .model import Family, ParamGrid, Restrict, argmax_index, mle
from .trace import StepRecord, TrialTrace


logger = logging.getLogger(__name__)

# Trials that have not stopped after this many steps are truncated.
DEFAULT_CAP = 10_000_000


class NullMode(str, Enum):
    UNKNOWN = "unknown"  # null parameter estimated by constrained MLE
    KNOWN = "known"      # null parameter given as side information


class Statistic(str, Enum):
    SALLR = "sallr"
    GLLR = "gllr"


class Phase(str, Enum):
    EXPLORE = "explore"
    EXPLOIT = "exploit"
    TEST = "test"


@dataclass(frozen=True)
class Probe:
    cells: tuple[int, ...]


@dataclass(frozen=True)
class Stop:
    declared: tuple[int, ...]


Action = Probe | Stop


@dataclass(frozen=True)
class PolicyConfig:
    """Settings of one SCPA policy.

    Args:
        c: Cost per observation, in (0, 1). The stopping threshold is -ln c.
        mode: Whether the null parameter is estimated or known.
        theta0: Known null parameter (NullMode.KNOWN only).
        statistic: SALLR or GLLR.
        window: Exploration window length N.
        probes: Cells probed per step K.
        anomalies: Number of anomalous cells L.
    """

    c: float
    mode: NullMode = NullMode.UNKNOWN
    theta0: float | None = None
    statistic: Statistic = Statistic.SALLR
    window: int = 1
    probes: int = 1
    anomalies: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", NullMode(self.mode))
        object.__setattr__(self, "statistic", Statistic(self.statistic))
        if not 0.0 < self.c < 1.0:
            raise ConfigError("c", f"observation cost must lie in (0, 1), got {self.c!r}")
        if self.window < 1:
            raise ConfigError("window", "exploration window must be >= 1")
        if self.probes < 1:
            raise ConfigError("probes", "probes per step must be >= 1")
        if self.anomalies < 1:
            raise ConfigError("anomalies", "anomaly count must be >= 1")
        if self.probes > 1 and self.anomalies > 1:
            raise ConfigError("probes", "multi-cell probing is not combined with multiple anomalies")
        if self.mode is NullMode.KNOWN and self.theta0 is None:
            raise ConfigError("theta0", "known-null mode needs the null parameter")

    @property
    def threshold(self) -> float:
        return -math.log(self.c)

    def validate(self, cells: int, grid: ParamGrid) -> None:
        if cells < 1:
            raise ConfigError("cells", "need at least one cell")
        if self.probes > cells:
            raise ConfigError("probes", f"cannot probe {self.probes} of {cells} cells per step")
        if self.anomalies > 1 and self.anomalies >= cells:
            raise ConfigError("anomalies", f"need fewer than {cells} anomalies")
        if self.mode is NullMode.KNOWN:
            index = grid.index_of(self.theta0)
            if index is None or not grid.is_null(index):
                raise ConfigError("theta0", f"{self.theta0!r} is not in the null set")


def statistic_sallr(family: Family, history: Sequence[float],
                    estimates: Sequence[float], null_param: float) -> float:
    """Sum of adaptive LLRs over an exploit history.

    history[i] is the observation at time T+1+i and estimates[i] the
    unconstrained estimate formed from history[:i+1]. The sum starts at the
    second observation, whose numerator uses the estimate formed from the
    first one.
    """
    if len(history) < 2:
        return 0.0
    ys = np.asarray(history[1:], dtype=float)
    thetas = np.asarray(estimates[:len(history) - 1], dtype=float)
    terms = family.logpdf_array(thetas, ys) - family.logpdf_array(null_param, ys)
    return float(terms.sum())


def statistic_gllr(family: Family, grid: ParamGrid, history: Sequence[float],
                   null_param: float) -> float:
    """Sum of generalized LLRs: the current estimate is used for every term."""
    if len(history) < 2:
        return 0.0
    theta = grid.values[mle(family, grid, history)]
    ys = np.asarray(history[1:], dtype=float)
    terms = family.logpdf_array(theta, ys) - family.logpdf_array(null_param, ys)
    return float(terms.sum())


@dataclass
class CellTest:
    """Observations of one cell since the exploitation anchor T."""

    history: list[float] = field(default_factory=list)
    estimates: list[int] = field(default_factory=list)
    loglik: np.ndarray | None = None
    statistic: float = 0.0

    def add(self, family: Family, grid: ParamGrid, y: float) -> int:
        term = family.logpdf_array(grid.array, y)
        self.loglik = term if self.loglik is None else self.loglik + term
        self.history.append(y)
        self.estimates.append(argmax_index(self.loglik, grid))
        return self.estimates[-1]

    @property
    def estimate(self) -> int:
        return self.estimates[-1]


@dataclass
class PolicyState:
    """Mutable state of an SCPA policy. Cells are labelled 1..M."""

    cells: int
    window: int
    phase: Phase = Phase.EXPLORE
    T: int = 0
    rr_ptr: int = 1
    clock: int = 0
    buffers: list = field(default_factory=list)
    explore_estimates: list = field(default_factory=list)
    suspects: list[int] = field(default_factory=list)
    tests: dict[int, CellTest] = field(default_factory=dict)
    exploit_ptr: int = 0
    declared: list[int] = field(default_factory=list)
    declared_at: list[int] = field(default_factory=list)
    stop_ready: bool = False
    stopped: bool = False
    last_probe: tuple[int, ...] | None = None
    last_phase: Phase = Phase.EXPLORE

    def __post_init__(self):
        if not self.buffers:
            self.buffers = [deque(maxlen=self.window) for _ in range(self.cells)]
        if not self.explore_estimates:
            self.explore_estimates = [None] * self.cells

    @property
    def suspect(self) -> int | None:
        return self.suspects[0] if self.suspects else None

    @property
    def S(self) -> float | None:
        cell = self.suspect
        if cell is None and self.declared:
            cell = self.declared[-1]
        if cell is None or cell not in self.tests:
            return None
        return self.tests[cell].statistic


def init(config: PolicyConfig, cells: int) -> PolicyState:
    """Initial state: exploring, pointer on cell 1, T = 0, empty buffers."""
    if config.probes > cells:
        raise ConfigError("probes", f"cannot probe {config.probes} of {cells} cells per step")
    return PolicyState(cells=cells, window=config.window)


class Policy(Protocol):
    """What the trial loop needs from a search policy."""

    threshold: float

    @property
    def clock(self) -> int: ...

    def next_action(self) -> Action: ...

    def update(self, cells: Sequence[int], ys: Sequence[float]) -> None: ...

    def step_record(self, cells: Sequence[int], ys: Sequence[float]) -> StepRecord: ...

    def declaration_times(self) -> tuple[int, ...]: ...


class ScpaPolicy:
    """SCPA decision strategy over M cells."""

    def __init__(self, config: PolicyConfig, family: Family, grid: ParamGrid, cells: int):
        config.validate(cells, grid)
        self.config = config
        self.family = family
        self.grid = grid
        self.threshold = config.threshold
        self.state = init(config, cells)

    @property
    def clock(self) -> int:
        return self.state.clock

    @property
    def cells(self) -> int:
        return self.state.cells

    # ------------------------------------------------------------------
    # Actions
    # ------------------------------------------------------------------

    def next_action(self) -> Action:
        state = self.state
        if state.stopped:
            raise PolicyStateError("policy already stopped")
        if state.stop_ready:
            state.stopped = True
            state.last_probe = None
            return Stop(tuple(state.declared))

        if state.phase is Phase.EXPLORE:
            cells = self._round_robin(state.rr_ptr, self.config.probes)
        elif self.config.probes == 1:
            cells = (state.suspects[state.exploit_ptr % len(state.suspects)],)
        else:
            cells = (state.suspect,) + self._companions()
        state.last_probe = cells
        return Probe(cells)

    def _active(self, cell: int) -> bool:
        return cell not in self.state.declared

    def _round_robin(self, start: int, count: int) -> tuple[int, ...]:
        picked = []
        cell = start
        for _ in range(self.cells):
            if self._active(cell):
                picked.append(cell)
                if len(picked) == count:
                    break
            cell = cell % self.cells + 1
        return tuple(picked)

    def _companions(self) -> tuple[int, ...]:
        """The K-1 non-suspects with the largest statistics, lowest index first on ties."""
        state = self.state
        others = [c for c in range(1, self.cells + 1) if c != state.suspect]
        ranked = sorted(others, key=lambda c: (-self._score(c), c))
        return tuple(ranked[:self.config.probes - 1])

    def _score(self, cell: int) -> float:
        record = self.state.tests.get(cell)
        return record.statistic if record else 0.0

    # ------------------------------------------------------------------
    # Updates
    # ------------------------------------------------------------------

    def update(self, cells: Sequence[int], ys: Sequence[float]) -> None:
        state = self.state
        cells = tuple(int(c) for c in cells)
        if state.stopped:
            raise PolicyStateError("policy already stopped")
        if state.last_probe is None or cells != state.last_probe:
            raise PolicyStateError(f"observed cells {cells} do not match probe {state.last_probe}")
        if len(ys) != len(cells):
            raise PolicyStateError(f"{len(ys)} observations for {len(cells)} probed cells")

        state.clock += 1
        state.last_probe = None
        if state.phase is Phase.EXPLORE:
            self._explore_update(cells, ys)
        else:
            self._exploit_update(cells, ys)

    def _explore_update(self, cells: tuple[int, ...], ys: Sequence[float]) -> None:
        state = self.state
        state.last_phase = Phase.EXPLORE
        for cell, y in zip(cells, ys):
            self._remember(cell, y)
        state.rr_ptr = cells[-1] % self.cells + 1

        active = [c for c in range(1, self.cells + 1) if self._active(c)]
        estimates = [state.explore_estimates[c - 1] for c in active]
        if any(e is None for e in estimates):
            return
        suspects = [c for c, e in zip(active, estimates) if not self.grid.is_null(e)]
        remaining = self.config.anomalies - len(state.declared)
        if len(suspects) == remaining:
            self._enter_exploit(suspects)

    def _remember(self, cell: int, y: float) -> None:
        """Push y into the cell's window of its last N samples and refresh its estimate."""
        buffer = self.state.buffers[cell - 1]
        buffer.append(float(y))
        if len(buffer) == self.state.window:
            self.state.explore_estimates[cell - 1] = mle(self.family, self.grid, buffer)

    def _enter_exploit(self, suspects: list[int]) -> None:
        state = self.state
        state.phase = Phase.EXPLOIT
        state.last_phase = Phase.EXPLOIT
        state.T = state.clock
        state.suspects = list(suspects)
        state.tests = {}
        state.exploit_ptr = 0
        logger.debug("t=%d exploit suspects=%s", state.clock, suspects)

    def _return_to_explore(self, cell: int) -> None:
        state = self.state
        state.phase = Phase.EXPLORE
        state.last_phase = Phase.EXPLORE
        state.suspects = []
        state.tests = {}
        state.rr_ptr = cell % self.cells + 1
        logger.debug("t=%d cell %d looks normal, back to exploration", state.clock, cell)

    def _exploit_update(self, cells: tuple[int, ...], ys: Sequence[float]) -> None:
        state = self.state
        # exploit samples also enter each cell's last-N exploration window
        for cell, y in zip(cells, ys):
            state.tests.setdefault(cell, CellTest()).add(self.family, self.grid, float(y))
            self._remember(cell, y)

        # Any probed suspect that looks normal again, or a companion that
        # looks anomalous, sends the policy back to exploration.
        for cell in cells:
            is_null = self.grid.is_null(state.tests[cell].estimate)
            if cell in state.suspects and is_null:
                self._return_to_explore(cell)
                return
            if cell not in state.suspects and not is_null:
                self._return_to_explore(state.suspect)
                return

        state.last_phase = Phase.TEST
        for cell in cells:
            state.tests[cell].statistic = self.statistic(cell)

        if self.config.probes > 1:
            others = [state.tests[c].statistic for c in cells if c != state.suspect]
            margin = state.tests[state.suspect].statistic - max(others, default=0.0)
            if margin >= self.threshold:
                self._declare(state.suspect)
            return

        state.exploit_ptr += 1
        best = max(state.suspects, key=lambda c: (self._score(c), -c))
        if self._score(best) >= self.threshold:
            self._declare(best)

    def _declare(self, cell: int) -> None:
        state = self.state
        state.declared.append(cell)
        state.declared_at.append(state.clock)
        if cell in state.suspects:
            state.suspects.remove(cell)
        logger.debug("t=%d declared cell %d", state.clock, cell)
        if len(state.declared) >= self.config.anomalies or self.config.probes > 1:
            state.stop_ready = True

    def null_param(self, cell: int) -> float:
        """Denominator parameter: the known null, or the constrained MLE over the exploit history."""
        if self.config.mode is NullMode.KNOWN:
            return float(self.config.theta0)
        record = self.state.tests[cell]
        return self.grid.values[argmax_index(record.loglik, self.grid, Restrict.NULL_ONLY)]

    def statistic(self, cell: int) -> float:
        record = self.state.tests[cell]
        nu = self.null_param(cell)
        if self.config.statistic is Statistic.GLLR:
            return statistic_gllr(self.family, self.grid, record.history, nu)
        thetas = [self.grid.values[i] for i in record.estimates]
        return statistic_sallr(self.family, record.history, thetas, nu)

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    def estimates(self) -> tuple[int, ...]:
        """Current grid-index estimate of every cell, -1 where none exists yet."""
        state = self.state
        out = []
        for cell in range(1, self.cells + 1):
            record = state.tests.get(cell)
            if record is not None:
                out.append(record.estimate)
            else:
                e = state.explore_estimates[cell - 1]
                out.append(-1 if e is None else e)
        return tuple(out)

    def declaration_times(self) -> tuple[int, ...]:
        return tuple(self.state.declared_at)

    def step_record(self, cells: Sequence[int], ys: Sequence[float]) -> StepRecord:
        state = self.state
        suspects = tuple(state.suspects)
        if state.phase is Phase.EXPLORE:
            suspects = ()
        scores = tuple(self._score(c) for c in suspects) if state.last_phase is Phase.TEST else ()
        if state.stop_ready and state.declared and not suspects:
            # the final declaration removed the suspect; keep it visible in the row
            suspects = (state.declared[-1],)
            scores = (self._score(state.declared[-1]),)
        return StepRecord(
            step=state.clock,
            cells=tuple(cells),
            observations=tuple(float(y) for y in ys),
            phase=state.last_phase.value,
            T=state.T,
            suspects=suspects,
            scores=scores,
            estimates=self.estimates(),
        )


def run_trial(policy: Policy, env: Environment, cap: int = DEFAULT_CAP,
              record: bool = True) -> TrialTrace:
    """Drive a policy against the environment until it stops or hits the cap.

    Args:
        policy: Any policy implementing the Policy protocol.
        env: Environment holding the ground truth and per-cell streams.
        cap: Maximum number of steps; a trial reaching it is truncated.
        record: Keep per-step records (needed for diagnostics and traces).

    Returns:
        The trial trace. tau is the stop time (or cap when truncated).
    """
    if cap < 1:
        raise ConfigError("cap", "trial cap must be >= 1")
    steps: list[StepRecord] = []
    declared: tuple[int, ...] = ()
    truncated = False
    while True:
        action = policy.next_action()
        if isinstance(action, Stop):
            declared = action.declared
            break
        if policy.clock >= cap:
            truncated = True
            logger.warning("trial truncated after %d steps", cap)
            break
        t = policy.clock + 1
        ys = tuple(env.observe(cell, t) for cell in action.cells)
        policy.update(action.cells, ys)
        if record:
            steps.append(policy.step_record(action.cells, ys))

    return TrialTrace(
        truth=env.truth,
        tau=policy.clock,
        declared=declared,
        truncated=truncated,
        threshold=policy.threshold,
        steps=steps,
        declared_at=policy.declaration_times(),
    )
