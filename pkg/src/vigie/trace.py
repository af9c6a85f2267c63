"""Trial traces and their line-delimited text form.

A trace file looks like::

    #vigie-trace 1
    #config {...}        experiment config (JSON)
    #trial {...}         trial index, master seed and cost c
    #truth {...}         realized ground truth
    step,cell,observation,phase,T,suspect,S
    1,1,0.4183...,explore,0,,
    ...
    #result {...}        stop time, declarations, truncation flag

Observations and statistics are written with repr(), which round-trips
doubles exactly, so a replay can reproduce the file byte for byte.
"""

import json
from dataclasses import dataclass, field

from .environment import GroundTruth
from .errors import ConfigParseError


TRACE_MAGIC = "#vigie-trace 1"
TRACE_COLUMNS = "step,cell,observation,phase,T,suspect,S"


@dataclass(frozen=True)
class StepRecord:
    """What happened at one time step, as seen after the policy's update.

    estimates holds the grid index of every cell's current estimate (-1 when
    the cell has none); it feeds the diagnostics and is not written to the
    text form, since a replay recomputes it.
    """

    step: int
    cells: tuple[int, ...]
    observations: tuple[float, ...]
    phase: str
    T: int
    suspects: tuple[int, ...] = ()
    scores: tuple[float, ...] = ()
    estimates: tuple[int, ...] = ()

    def score_of(self, cell: int) -> float | None:
        if cell in self.suspects and len(self.scores) == len(self.suspects):
            return self.scores[self.suspects.index(cell)]
        return None

    def lines(self) -> list[str]:
        suspects = ";".join(str(c) for c in self.suspects)
        scores = ";".join(repr(float(s)) for s in self.scores)
        return [
            f"{self.step},{cell},{float(y)!r},{self.phase},{self.T},{suspects},{scores}"
            for cell, y in zip(self.cells, self.observations)
        ]


@dataclass
class TrialTrace:
    """Full record of one simulated trial."""

    truth: GroundTruth
    tau: int
    declared: tuple[int, ...]
    truncated: bool
    threshold: float
    steps: list[StepRecord] = field(default_factory=list)
    declared_at: tuple[int, ...] = ()

    @property
    def delta(self) -> int | None:
        return self.declared[0] if self.declared else None

    def result_dict(self) -> dict:
        return {
            "tau": self.tau,
            "declared": list(self.declared),
            "declared_at": list(self.declared_at),
            "truncated": self.truncated,
        }


def _meta_line(tag: str, payload: dict) -> str:
    return f"#{tag} {json.dumps(payload, sort_keys=True)}"


def format_trace(trace: TrialTrace, config: dict, trial: dict) -> str:
    """Render a trace to its text form.

    Args:
        trace: The trial trace (must have been recorded step by step).
        config: Experiment config as a plain dict.
        trial: Trial metadata: index, master seed and cost c.
    """
    lines = [
        TRACE_MAGIC,
        _meta_line("config", config),
        _meta_line("trial", trial),
        _meta_line("truth", trace.truth.to_dict()),
        TRACE_COLUMNS,
    ]
    for step in trace.steps:
        lines.extend(step.lines())
    lines.append(_meta_line("result", trace.result_dict()))
    return "\n".join(lines) + "\n"


@dataclass
class ParsedTrace:
    """A trace read back from text: metadata plus the probe/observation log."""

    config: dict
    trial: dict
    truth: GroundTruth
    result: dict
    probes: list[tuple[tuple[int, ...], tuple[float, ...]]]


def parse_trace(text: str) -> ParsedTrace:
    lines = text.splitlines()
    if not lines or lines[0] != TRACE_MAGIC:
        raise ConfigParseError("trace", "not a vigie trace (missing header line)")

    meta: dict[str, dict] = {}
    by_step: dict[int, tuple[list, list]] = {}
    order: list[int] = []
    for number, line in enumerate(lines[1:], start=2):
        if not line or line == TRACE_COLUMNS:
            continue
        if line.startswith("#"):
            tag, _, payload = line[1:].partition(" ")
            try:
                meta[tag] = json.loads(payload)
            except json.JSONDecodeError as e:
                raise ConfigParseError("trace", f"line {number}: bad {tag} record: {e}")
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise ConfigParseError("trace", f"line {number}: expected 7 fields, got {len(parts)}")
        try:
            step, cell, y = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as e:
            raise ConfigParseError("trace", f"line {number}: {e}")
        if step not in by_step:
            by_step[step] = ([], [])
            order.append(step)
        by_step[step][0].append(cell)
        by_step[step][1].append(y)

    for tag in ("config", "trial", "truth", "result"):
        if tag not in meta:
            raise ConfigParseError("trace", f"missing #{tag} record")

    probes = [(tuple(by_step[s][0]), tuple(by_step[s][1])) for s in order]
    return ParsedTrace(
        config=meta["config"],
        trial=meta["trial"],
        truth=GroundTruth.from_dict(meta["truth"]),
        result=meta["result"],
        probes=probes,
    )
