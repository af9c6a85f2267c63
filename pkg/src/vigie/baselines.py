"""CUSUM-style multi-cell baseline.

The baseline tests one cell at a time with a single fixed LLR: the closest
(minimal-KL) anomalous/null parameter pair. The statistic starts at 0 on
every cell; when it goes negative the baseline moves on to the next cell,
and it stops as soon as the statistic reaches -ln c.
"""

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .errors import ConfigError, PolicyStateError
from .model import Family, ParamGrid
from .policy import Action, Phase, Probe, Stop
from .trace import StepRecord


def cusum_pair(grid: ParamGrid, family: Family) -> tuple[float, float]:
    """The (theta1, theta0) pair in alt x null minimizing D(theta1 || theta0).

    Ties go to the smallest theta1, then the smallest theta0.
    """
    best: tuple[float, float] | None = None
    best_d = math.inf
    for theta1 in grid.alt_values:
        for theta0 in grid.null_values:
            d = family.kl(theta1, theta0)
            if d < best_d:
                best_d, best = d, (theta1, theta0)
    return best


@dataclass(frozen=True)
class CusumState:
    cell: int = 1
    S: float = 0.0
    clock: int = 0
    entered: int = 0  # time the current cell was first probed, minus one


def cusum_step(state: CusumState, y: float, c: float, family: Family,
               pair: tuple[float, float], cells: int) -> tuple[CusumState, Stop | None]:
    """Fold one observation of the current cell into the statistic.

    Returns:
        The next state and a Stop when the statistic reached -ln c, else None
        (probe again, or move on if the state's cell changed).
    """
    theta1, theta0 = pair
    S = state.S + family.logpdf(theta1, y) - family.logpdf(theta0, y)
    clock = state.clock + 1
    if S < 0:
        return CusumState(cell=state.cell % cells + 1, S=0.0, clock=clock, entered=clock), None
    nxt = replace(state, S=S, clock=clock)
    if S >= -math.log(c):
        return nxt, Stop((state.cell,))
    return nxt, None


class CusumPolicy:
    """Round-robin CUSUM tester driven through the same loop as SCPA."""

    def __init__(self, family: Family, grid: ParamGrid, c: float, cells: int):
        if not 0.0 < c < 1.0:
            raise ConfigError("c", f"observation cost must lie in (0, 1), got {c!r}")
        self.family = family
        self.grid = grid
        self.c = c
        self.cells = cells
        self.pair = cusum_pair(grid, family)
        self.threshold = -math.log(c)
        self.state = CusumState()
        self._pending: Stop | None = None
        self._stopped = False
        self._last_probe: tuple[int, ...] | None = None
        self._declared_at: tuple[int, ...] = ()

    @property
    def clock(self) -> int:
        return self.state.clock

    def next_action(self) -> Action:
        if self._stopped:
            raise PolicyStateError("policy already stopped")
        if self._pending is not None:
            self._stopped = True
            return self._pending
        self._last_probe = (self.state.cell,)
        return Probe(self._last_probe)

    def update(self, cells: Sequence[int], ys: Sequence[float]) -> None:
        cells = tuple(int(c) for c in cells)
        if self._stopped:
            raise PolicyStateError("policy already stopped")
        if cells != self._last_probe or len(ys) != 1:
            raise PolicyStateError(f"observed cells {cells} do not match probe {self._last_probe}")
        self._last_probe = None
        self.state, self._pending = cusum_step(
            self.state, float(ys[0]), self.c, self.family, self.pair, self.cells)
        if self._pending is not None:
            self._declared_at = (self.state.clock,)

    def declaration_times(self) -> tuple[int, ...]:
        return self._declared_at

    def step_record(self, cells: Sequence[int], ys: Sequence[float]) -> StepRecord:
        moved = self.state.entered == self.state.clock
        return StepRecord(
            step=self.state.clock,
            cells=tuple(cells),
            observations=tuple(float(y) for y in ys),
            phase=(Phase.EXPLORE if moved else Phase.TEST).value,
            T=self.state.entered,
            suspects=(self.state.cell,),
            scores=(self.state.S,),
            estimates=(-1,) * self.cells,
        )
