"""Monte Carlo estimation of error probabilities, delay and Bayes risk.

Every trial i draws from its own stream keyed by (seed, i), so the same
trials are replayed for every cost c and every policy (paired comparison).
Trials may run in a process pool; results are always reduced in trial-index
order, so a parallel run reports exactly what a serial run reports.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .config import POLICIES, ExperimentConfig
from .environment import Environment, TruthMode, child_rng, sample_truth, trial_seed
from .errors import ReportError
from .model import ParamGrid, min_null_kl
from .policy import Probe, Stop, run_trial
from .trace import TrialTrace, format_trace, parse_trace


logger = logging.getLogger(__name__)

CONFIDENCE = 0.95
CSV_COLUMNS = ("c", "neg_ln_c", "mean_delay", "delay_ci", "p_fa", "p_md", "p_e",
               "bayes_risk", "n_trials", "n_truncated")


class Outcome(str, Enum):
    CORRECT = "correct"
    FALSE_ALARM = "false_alarm"
    MISSED_DETECTION = "missed_detection"
    TRUNCATED = "truncated"


def classify(trace: TrialTrace) -> Outcome:
    """False alarm if the policy stopped before the change, else right or wrong cell(s)."""
    if trace.truncated:
        return Outcome.TRUNCATED
    if trace.tau < trace.truth.tau_c:
        return Outcome.FALSE_ALARM
    if sorted(trace.declared) == sorted(trace.truth.anomalous):
        return Outcome.CORRECT
    return Outcome.MISSED_DETECTION


@dataclass(frozen=True)
class Diagnostics:
    """Estimation/testing split of a trial's post-change time.

    tau_est is the first time at or after the change from which every
    recorded estimate stays correct; tau_u the first later time the
    anomalous cell's statistic reaches the threshold.
    """

    tau_est: int | None = None
    n_est: int | None = None
    tau_u: int | None = None
    n_u: int | None = None


def diagnostics(trace: TrialTrace, grid: ParamGrid) -> Diagnostics:
    """Compute tau_EST, n_EST and n_U retrospectively from a recorded trace.

    Non-anomalous cells count as correctly estimated when their estimate is
    their own true null parameter.
    """
    if trace.truncated or not trace.steps:
        return Diagnostics()
    truth = trace.truth
    expected = []
    for cell in range(1, truth.cells + 1):
        value = truth.theta_alt if cell in truth.anomalous else truth.theta_null[cell - 1]
        index = grid.index_of(value)
        if index is None:
            return Diagnostics()
        expected.append(index)
    expected = tuple(expected)

    start = truth.first_anomalous_time
    tau_est = None
    for record in reversed(trace.steps):
        if record.step < start or record.estimates != expected:
            break
        tau_est = record.step
    if tau_est is None:
        return Diagnostics()

    tau_u = None
    for record in trace.steps:
        if record.step <= tau_est:
            continue
        score = record.score_of(truth.m_star)
        if score is not None and score >= trace.threshold:
            tau_u = record.step
            break
    return Diagnostics(
        tau_est=tau_est,
        n_est=tau_est - truth.tau_c,
        tau_u=tau_u,
        n_u=None if tau_u is None else tau_u - tau_est,
    )


@dataclass(frozen=True)
class TrialSummary:
    """The few numbers a risk report needs from one trial."""

    m_star: int
    tau: int
    tau_c: int
    outcome: Outcome
    n_est: int | None
    n_u: int | None

    @property
    def delay(self) -> int:
        return max(self.tau - self.tau_c, 0)


def simulate(config: ExperimentConfig, c: float, trial: int, record: bool = True) -> TrialTrace:
    """Run trial number `trial` of the experiment at cost c."""
    stream = trial_seed(config.seed, trial)
    grid = config.grid()
    truth = sample_truth(
        config.prior_obj(), grid, TruthMode(config.truth_mode), child_rng(stream, 0),
        tau_c=config.tau_c, fixed=config.fixed_params(), anomalies=config.anomalies,
    )
    env = Environment(config.family_obj(), truth, stream)
    policy = config.build_policy(c, truth)
    return run_trial(policy, env, cap=config.cap, record=record)


def summarize(trace: TrialTrace, grid: ParamGrid) -> TrialSummary:
    diag = diagnostics(trace, grid)
    return TrialSummary(
        m_star=trace.truth.m_star,
        tau=trace.tau,
        tau_c=trace.truth.tau_c,
        outcome=classify(trace),
        n_est=diag.n_est,
        n_u=diag.n_u,
    )


def _run_one(job: tuple) -> TrialSummary:
    config, c, trial = job
    return summarize(simulate(config, c, trial), config.grid())


def run_trials(config: ExperimentConfig, c: float, n_trials: int, workers: int = 1) -> list[TrialSummary]:
    jobs = [(config, c, i) for i in range(n_trials)]
    if workers <= 1:
        return [_run_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map() yields in submission order, which fixes the reduction order
        return list(pool.map(_run_one, jobs, chunksize=max(1, n_trials // (4 * workers))))


def wilson_interval(successes: int, n: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    z = stats.norm.ppf(0.5 + confidence / 2)
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class RiskReport:
    """Monte Carlo estimate of the error/delay trade-off at one cost c.

    Per-hypothesis rates are weighted by the prior over the hypotheses that
    occurred in the run, so p_e = sum(pi_m * alpha_m) and
    bayes_risk = p_e + c * mean_delay hold exactly.
    delay_ci is the normal half-width of that weighted mean, built from the
    per-hypothesis sample variances. alpha_intervals holds a Wilson
    interval for each alpha_m.
    """

    c: float
    n_trials: int
    n_truncated: int
    n_false_alarm: int
    n_missed: int
    alpha_fa: dict[int, float]
    alpha_md: dict[int, float]
    weights: dict[int, float]
    p_fa: float
    p_md: float
    p_e: float
    p_e_interval: tuple[float, float]
    mean_delay: float
    delay_ci: float
    bayes_risk: float
    mean_n_est: float | None = None
    n_est_missing: int = 0
    mean_n_u: float | None = None
    n_u_missing: int = 0
    policy: str = "scpa"
    alpha_intervals: dict[int, tuple[float, float]] = field(default_factory=dict)

    @property
    def neg_ln_c(self) -> float:
        return -math.log(self.c)

    @property
    def alpha(self) -> dict[int, float]:
        return {m: self.alpha_fa[m] + self.alpha_md[m] for m in self.alpha_fa}

    def to_row(self) -> dict:
        return {
            "c": self.c,
            "neg_ln_c": self.neg_ln_c,
            "mean_delay": self.mean_delay,
            "delay_ci": self.delay_ci,
            "p_fa": self.p_fa,
            "p_md": self.p_md,
            "p_e": self.p_e,
            "bayes_risk": self.bayes_risk,
            "n_trials": self.n_trials,
            "n_truncated": self.n_truncated,
        }

    def summary(self) -> str:
        lo, hi = self.p_e_interval
        lines = [
            f"policy {self.policy}, c = {self.c:g} (-ln c = {self.neg_ln_c:.4g}), {self.n_trials} trials",
            f"  error probability  P_e = {self.p_e:.6g}  (Wilson {CONFIDENCE:.0%}: {lo:.4g} .. {hi:.4g})",
            f"    false alarm        {self.p_fa:.6g}  ({self.n_false_alarm} trials)",
            f"    missed detection   {self.p_md:.6g}  ({self.n_missed} trials, "
            f"{self.n_truncated} truncated counted as errors)",
            f"  mean delay E[(tau - tau_c)+] = {self.mean_delay:.6g} +/- {self.delay_ci:.4g}",
            f"  Bayes risk R = {self.bayes_risk:.6g}",
        ]
        if self.mean_n_est is not None:
            lines.append(f"  mean n_EST = {self.mean_n_est:.4g} ({self.n_est_missing} undefined)")
        if self.mean_n_u is not None:
            lines.append(f"  mean n_U = {self.mean_n_u:.4g} ({self.n_u_missing} undefined)")
        return "\n".join(lines)


def aggregate(summaries: Sequence[TrialSummary], c: float, prior: Sequence[float],
              policy: str = "scpa") -> RiskReport:
    """Reduce trial summaries (in the given order) to a risk report."""
    n = len(summaries)
    if n == 0:
        raise ReportError("no trials to aggregate")
    n_truncated = sum(s.outcome is Outcome.TRUNCATED for s in summaries)
    if n_truncated == n:
        raise ReportError(f"all {n} trials were truncated")

    by_cell: dict[int, list[TrialSummary]] = {}
    for s in summaries:
        by_cell.setdefault(s.m_star, []).append(s)
    cells = sorted(by_cell)
    total = sum(prior[m - 1] for m in cells)
    weights = {m: prior[m - 1] / total for m in cells}

    alpha_fa, alpha_md, delay, delay_var, alpha_intervals = {}, {}, {}, {}, {}
    for m in cells:
        group = by_cell[m]
        alpha_fa[m] = sum(s.outcome is Outcome.FALSE_ALARM for s in group) / len(group)
        alpha_md[m] = sum(s.outcome in (Outcome.MISSED_DETECTION, Outcome.TRUNCATED)
                          for s in group) / len(group)
        delay[m] = sum(s.delay for s in group) / len(group)
        delays = np.array([s.delay for s in group], dtype=float)
        delay_var[m] = float(delays.var(ddof=1)) if len(group) > 1 else 0.0
        errors = sum(s.outcome is not Outcome.CORRECT for s in group)
        alpha_intervals[m] = wilson_interval(errors, len(group))

    p_fa = sum(weights[m] * alpha_fa[m] for m in cells)
    p_md = sum(weights[m] * alpha_md[m] for m in cells)
    p_e = sum(weights[m] * (alpha_fa[m] + alpha_md[m]) for m in cells)
    mean_delay = sum(weights[m] * delay[m] for m in cells)

    z = stats.norm.ppf(0.5 + CONFIDENCE / 2)
    delay_ci = float(z * math.sqrt(sum(weights[m] ** 2 * delay_var[m] / len(by_cell[m]) for m in cells)))

    n_fa = sum(s.outcome is Outcome.FALSE_ALARM for s in summaries)
    n_md = sum(s.outcome is Outcome.MISSED_DETECTION for s in summaries)
    n_est = [s.n_est for s in summaries if s.n_est is not None]
    n_u = [s.n_u for s in summaries if s.n_u is not None]

    return RiskReport(
        c=c,
        n_trials=n,
        n_truncated=n_truncated,
        n_false_alarm=n_fa,
        n_missed=n_md,
        alpha_fa=alpha_fa,
        alpha_md=alpha_md,
        weights=weights,
        p_fa=p_fa,
        p_md=p_md,
        p_e=p_e,
        p_e_interval=wilson_interval(n_fa + n_md + n_truncated, n),
        mean_delay=mean_delay,
        delay_ci=delay_ci,
        bayes_risk=p_e + c * mean_delay,
        mean_n_est=float(np.mean(n_est)) if n_est else None,
        n_est_missing=n - len(n_est),
        mean_n_u=float(np.mean(n_u)) if n_u else None,
        n_u_missing=n - len(n_u),
        policy=policy,
        alpha_intervals=alpha_intervals,
    )


def estimate_risk(config: ExperimentConfig, n_trials: int | None = None,
                  seed: int | None = None, c: float | None = None,
                  workers: int | None = None) -> RiskReport:
    """Estimate the risk report of the configured policy at one cost.

    Arguments left as None fall back to the config's values.
    """
    config = config.with_overrides(n_trials=n_trials, seed=seed, c=c, workers=workers)
    summaries = run_trials(config, config.c, config.n_trials, config.workers)
    report = aggregate(summaries, config.c, config.prior_obj().pi, policy=config.policy)
    if report.n_truncated:
        logger.warning("%d of %d trials hit the %d-step cap", report.n_truncated, report.n_trials, config.cap)
    logger.info("c=%g: P_e=%.4g mean delay=%.4g R=%.4g", report.c, report.p_e,
                report.mean_delay, report.bayes_risk)
    return report


def check_change_point(config: ExperimentConfig, c_values: Iterable[float]) -> bool:
    """Whether tau_c is small against -ln c for the smallest cost.

    The asymptotic claims need tau_c = O((-ln c)^(1 - change_exponent)).
    """
    smallest = min(c_values)
    bound = (-math.log(smallest)) ** (1.0 - config.change_exponent)
    if config.tau_c > bound:
        logger.warning(
            "tau_c=%d exceeds (-ln c)^%.2g = %.3g at c=%g; asymptotic guarantees do not apply",
            config.tau_c, 1.0 - config.change_exponent, bound, smallest)
        return False
    return True


def sweep(config: ExperimentConfig, c_values: Sequence[float] | None = None,
          n_trials: int | None = None, seed: int | None = None,
          workers: int | None = None) -> list[RiskReport]:
    """One risk report per cost, all on the same trial streams."""
    config = config.with_overrides(n_trials=n_trials, seed=seed, workers=workers)
    c_values = list(c_values) if c_values is not None else list(config.c_list)
    check_change_point(config, c_values)
    return [estimate_risk(config, c=c) for c in c_values]


def compare(config: ExperimentConfig, policies: Sequence[str] = POLICIES,
            c_values: Sequence[float] | None = None, n_trials: int | None = None,
            seed: int | None = None, workers: int | None = None) -> dict[str, list[RiskReport]]:
    """Sweep several policies over the same seeds, hence the same ground truths."""
    results = {}
    for policy in policies:
        logger.info("sweeping policy %s", policy)
        results[policy] = sweep(config.with_overrides(policy=policy), c_values, n_trials, seed, workers)
    return results


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    stderr: float = 0.0


def fit_delay_slope(reports: Sequence[RiskReport]) -> SlopeFit:
    """Least-squares fit of mean delay against -ln c."""
    if len(reports) < 2:
        raise ReportError("need at least two costs to fit a slope")
    x = [r.neg_ln_c for r in reports]
    y = [r.mean_delay for r in reports]
    fit = stats.linregress(x, y)
    return SlopeFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2), float(fit.stderr))


def reference_slope(config: ExperimentConfig) -> float | None:
    """Asymptotic delay per nat of threshold, 1/D, for a fixed ground truth.

    Uses D(theta1 || theta0) with a known null and the minimal divergence to
    the null set otherwise. None when the truth is drawn at random.
    """
    if TruthMode(config.truth_mode) is not TruthMode.FIXED or config.policy == "cusum":
        return None
    family, grid = config.family_obj(), config.grid()
    if config.policy == "scpa-known-null":
        theta0 = config.theta0
        if theta0 is None:
            nulls = config.theta_null if isinstance(config.theta_null, list) else [config.theta_null]
            theta0 = nulls[0]
        return 1.0 / family.kl(config.theta_alt, theta0)
    d, _ = min_null_kl(family, grid, config.theta_alt)
    return 1.0 / d


def _log_error(report: RiskReport) -> float:
    return math.log(max(report.p_e, 0.5 / report.n_trials))


def matched_delay_dominance(reports: Sequence[RiskReport], baseline: Sequence[RiskReport]) -> tuple[int, int]:
    """Compare error probabilities at matched mean delay.

    The baseline's log error probability is interpolated (linearly in
    delay) at each of the reports' mean delays inside the baseline's delay
    range. Zero error rates are floored at half a trial.

    Returns:
        (points compared, points where reports have strictly lower error).
    """
    ordered = sorted(baseline, key=lambda r: r.mean_delay)
    xs = np.array([r.mean_delay for r in ordered])
    ys = np.array([_log_error(r) for r in ordered])
    compared = better = 0
    for r in reports:
        if not xs[0] <= r.mean_delay <= xs[-1]:
            continue
        compared += 1
        if _log_error(r) < float(np.interp(r.mean_delay, xs, ys)):
            better += 1
    return compared, better


# ----------------------------------------------------------------------
# Traces and replay
# ----------------------------------------------------------------------

def trial_metadata(config: ExperimentConfig, c: float, trial: int) -> dict:
    return {"index": trial, "seed": config.seed, "c": c}


def record_trace(config: ExperimentConfig, c: float, trial: int) -> str:
    """Simulate one trial and render its trace text."""
    trace = simulate(config, c, trial)
    return format_trace(trace, config.to_dict(), trial_metadata(config, c, trial))


@dataclass
class ReplayResult:
    ok: bool
    text: str
    mismatch_line: int | None = None
    trace: TrialTrace | None = field(default=None, repr=False)


def replay(text: str) -> ReplayResult:
    """Feed a trace's recorded observations into a fresh policy.

    The rebuilt trace is rendered again and compared with the input byte for
    byte; any divergence in probes, phases, anchors, suspects, statistics or
    the final declaration shows up as a differing line.
    """
    parsed = parse_trace(text)
    config = ExperimentConfig.from_dict(parsed.config)
    c = float(parsed.trial["c"])
    policy = config.build_policy(c, parsed.truth)

    steps = []
    declared: tuple[int, ...] = ()
    for cells, ys in parsed.probes:
        action = policy.next_action()
        if not isinstance(action, Probe) or action.cells != cells:
            break
        policy.update(cells, ys)
        steps.append(policy.step_record(cells, ys))
    else:
        if not parsed.result.get("truncated", False):
            action = policy.next_action()
            if isinstance(action, Stop):
                declared = action.declared

    rebuilt = TrialTrace(
        truth=parsed.truth,
        tau=policy.clock,
        declared=declared,
        truncated=bool(parsed.result.get("truncated", False)),
        threshold=policy.threshold,
        steps=steps,
        declared_at=policy.declaration_times(),
    )
    out = format_trace(rebuilt, parsed.config, parsed.trial)
    mismatch = None
    if out != text:
        for number, (a, b) in enumerate(zip(text.splitlines(), out.splitlines()), start=1):
            if a != b:
                mismatch = number
                break
        else:
            mismatch = min(len(text.splitlines()), len(out.splitlines())) + 1
    return ReplayResult(ok=out == text, text=out, mismatch_line=mismatch, trace=rebuilt)
