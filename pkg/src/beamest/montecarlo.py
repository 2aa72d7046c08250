"""Seeded Monte Carlo experiments over a pilot-energy sweep.

Every trial draws a channel from a stream keyed by ``(master_seed, trial)``
and both search variants consume that same draw, so curve comparisons are
paired.  Noise streams are keyed per ``(trial, variant)`` and reused across
energy points.  Aggregation uses exact integer counts for failures and
exactly-rounded summation for error means, so results are bit-identical for
any worker split or execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analysis import pcef_upper_bound
from .arrays import ChannelRealization, substream
from .codebook import IndexRange, overlapped_pattern_matrix, partition_subranges
from .estimator import (
    ALPHA_MMSE_ALL,
    NON_OVERLAPPED,
    OVERLAPPED,
    PILOT,
    EstimationTrace,
    EstimatorConfig,
    codebook_bank,
    estimate_alpha_final_stage,
    patterns_per_end,
    run_estimation,
    slot_count,
    stage_count,
)

__all__ = [
    "BOUND_CSV_HEADER",
    "BoundPoint",
    "ExperimentConfig",
    "RESULT_CSV_HEADER",
    "ResultTable",
    "SweepPoint",
    "bound_csv",
    "bound_table",
    "failure_indicator",
    "power_for_energy",
    "run_sweep",
    "sample_channel",
    "stage_gains",
]

# Substream keys: 0 reserves the channel draw, variants get their own noise key.
_CHANNEL_KEY = 0
_VARIANT_KEYS = {OVERLAPPED: 1, NON_OVERLAPPED: 2}

_CONFIDENCE_Z = 1.959963984540054  # two-sided 95% normal quantile


@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep description: geometry, energy grid, trial budget and seeding.

    ``et_db`` lists total pilot energy relative to ``n0`` in dB, strictly
    increasing.  ``var_alpha = None`` selects the default gain prior variance
    of ``n**2``.
    """

    n: int
    k: int
    et_db: tuple[float, ...]
    trials: int = 10_000
    master_seed: int = 0
    n0: float = 1.0
    var_alpha: float | None = None
    variants: tuple[str, ...] = (OVERLAPPED, NON_OVERLAPPED)

    def __post_init__(self):
        object.__setattr__(self, "et_db", tuple(float(x) for x in self.et_db))
        object.__setattr__(self, "variants", tuple(self.variants))
        if self.trials < 1:
            raise ValueError(f"trial count must be at least 1, got {self.trials}")
        if not self.et_db:
            raise ValueError("energy sweep is empty")
        if any(b <= a for a, b in zip(self.et_db, self.et_db[1:])):
            raise ValueError("energy sweep must be strictly increasing")
        if self.n0 <= 0:
            raise ValueError(f"noise variance must be positive, got {self.n0}")
        if not self.variants:
            raise ValueError("no variants selected")
        for variant in self.variants:
            if variant not in _VARIANT_KEYS:
                raise ValueError(f"unknown variant {variant!r}")
            patterns_per_end(self.k, variant)
        stage_count(self.n, self.k)

    @property
    def alpha_variance(self) -> float:
        return float(self.n * self.n) if self.var_alpha is None else float(self.var_alpha)


def sample_channel(cfg: ExperimentConfig, trial_index: int) -> ChannelRealization:
    """Draw one channel: angles uniform on the grid, gain complex Gaussian.

    Fully determined by ``(master_seed, trial_index)``, so trials can run in
    any order.
    """
    rng = np.random.default_rng(substream(cfg.master_seed, trial_index, _CHANNEL_KEY))
    theta = int(rng.integers(cfg.n))
    phi = int(rng.integers(cfg.n))
    scale = math.sqrt(cfg.alpha_variance / 2.0)
    alpha = complex(rng.normal(scale=scale), rng.normal(scale=scale))
    return ChannelRealization(theta=theta, phi=phi, alpha=alpha, n=cfg.n)


def noise_stream(cfg: ExperimentConfig, trial_index: int, variant: str) -> np.random.SeedSequence:
    """Noise substream for one (trial, variant); shared across energy points."""
    return substream(cfg.master_seed, trial_index, _VARIANT_KEYS[variant])


def failure_indicator(trace: EstimationTrace, truth: ChannelRealization) -> bool:
    """True when either true angle index escaped its finally selected sub-range."""
    return (truth.phi not in trace.final_transmit_range
            or truth.theta not in trace.final_receive_range)


def stage_gains(n: int, k: int, variant: str = OVERLAPPED) -> tuple[float, ...]:
    """Per-stage codebook gain constants.

    The constant depends only on the sub-range size, not on which parent is
    refined, so walking the leftmost refinement path covers every stage.
    """
    bank = codebook_bank(n, k, variant)
    gains = []
    parent = IndexRange(0, n)
    for s in range(1, stage_count(n, k) + 1):
        partition = partition_subranges(parent, parent, k, stage=s)
        gains.append(bank.stage_codebook(partition).gain)
        parent = partition.transmit[0]
    return tuple(gains)


def power_for_energy(total_energy: float, n: int, k: int, variant: str = OVERLAPPED) -> float:
    """Invert ``E_T = (beams per end)^2 * sum_s p_s`` with ``p_s = p_t / C_s^4``."""
    slots_per_stage = patterns_per_end(k, variant) ** 2
    weight = sum(c ** -4 for c in stage_gains(n, k, variant))
    return total_energy / (slots_per_stage * weight)


@dataclass(frozen=True)
class SweepPoint:
    """Aggregated results of one energy point for one variant.

    Relative gain errors are reported both over all trials and conditioned on
    successful angle estimation (the conditioning the downstream consumer
    wants is not knowable here, so both ship).
    """

    et_db: float
    pcef: float
    ci_low: float
    ci_high: float
    low_count: bool
    relerr_mmse_all: float
    relerr_mmse_success: float
    relerr_final_all: float
    relerr_final_success: float
    trials: int
    failures: int
    slots: int


RESULT_CSV_HEADER = ("et_db,pcef,pcef_ci_low,pcef_ci_high,pcef_low_count,"
                     "relerr_mmse_all_trials,relerr_mmse_successes,"
                     "relerr_final_all_trials,relerr_final_successes,"
                     "trials,failures,slots")


@dataclass(frozen=True)
class ResultTable:
    """One variant's sweep results, one row per energy point."""

    variant: str
    n: int
    k: int
    points: tuple[SweepPoint, ...]

    def to_csv(self) -> str:
        lines = [RESULT_CSV_HEADER]
        for p in self.points:
            lines.append(",".join([
                repr(p.et_db), repr(p.pcef), repr(p.ci_low), repr(p.ci_high),
                str(int(p.low_count)),
                repr(p.relerr_mmse_all), repr(p.relerr_mmse_success),
                repr(p.relerr_final_all), repr(p.relerr_final_success),
                str(p.trials), str(p.failures), str(p.slots),
            ]))
        return "\n".join(lines) + "\n"


def _sweep_chunk(cfg: ExperimentConfig, lo: int, hi: int) -> dict:
    """Raw per-trial outcomes for trials [lo, hi) across all points and variants."""
    n_points = len(cfg.et_db)
    estimator_configs = {}
    for variant in cfg.variants:
        configs = []
        for db in cfg.et_db:
            energy = cfg.n0 * 10.0 ** (db / 10.0)
            configs.append(EstimatorConfig(
                n=cfg.n, k=cfg.k,
                p_t=power_for_energy(energy, cfg.n, cfg.k, variant),
                n0=cfg.n0, var_alpha=cfg.alpha_variance,
                variant=variant, alpha_estimator=ALPHA_MMSE_ALL))
        estimator_configs[variant] = configs

    width = hi - lo
    out = {variant: (np.zeros((n_points, width), dtype=bool),
                     np.zeros((n_points, width)),
                     np.zeros((n_points, width)))
           for variant in cfg.variants}
    for column, trial in enumerate(range(lo, hi)):
        channel = sample_channel(cfg, trial)
        alpha_mag = abs(channel.alpha)
        for variant in cfg.variants:
            seed = noise_stream(cfg, trial, variant)
            fails, err_mmse, err_final = out[variant]
            for i, ecfg in enumerate(estimator_configs[variant]):
                trace = run_estimation(channel, ecfg, np.random.default_rng(seed))
                fails[i, column] = failure_indicator(trace, channel)
                final_hat = estimate_alpha_final_stage(
                    trace.selected_values[-1], ecfg.p_t, PILOT, cfg.n0,
                    cfg.alpha_variance)
                err_mmse[i, column] = abs(trace.alpha_hat - channel.alpha) / alpha_mag
                err_final[i, column] = abs(final_hat - channel.alpha) / alpha_mag
    return out


def _aggregate(cfg: ExperimentConfig, variant: str, fails: np.ndarray,
               err_mmse: np.ndarray, err_final: np.ndarray) -> ResultTable:
    slots = slot_count(cfg.n, cfg.k, variant)
    points = []
    for i, db in enumerate(cfg.et_db):
        trials = fails.shape[1]
        failures = int(fails[i].sum())
        pcef = failures / trials
        half_width = _CONFIDENCE_Z * math.sqrt(pcef * (1.0 - pcef) / trials)
        success = ~fails[i]
        n_success = trials - failures

        def conditional_mean(errors: np.ndarray) -> float:
            if n_success == 0:
                return math.nan
            return math.fsum(errors[success].tolist()) / n_success

        points.append(SweepPoint(
            et_db=db,
            pcef=pcef,
            ci_low=max(0.0, pcef - half_width),
            ci_high=min(1.0, pcef + half_width),
            low_count=failures < 5 or n_success < 5,
            relerr_mmse_all=math.fsum(err_mmse[i].tolist()) / trials,
            relerr_mmse_success=conditional_mean(err_mmse[i]),
            relerr_final_all=math.fsum(err_final[i].tolist()) / trials,
            relerr_final_success=conditional_mean(err_final[i]),
            trials=trials,
            failures=failures,
            slots=slots,
        ))
    return ResultTable(variant=variant, n=cfg.n, k=cfg.k, points=tuple(points))


def run_sweep(cfg: ExperimentConfig, workers: int = 1) -> dict[str, ResultTable]:
    """Run the full paired sweep; returns one table per variant.

    ``workers > 1`` splits trials across processes.  Per-trial streams are
    keyed by trial index, and chunks are reassembled in trial order before
    aggregation, so the result does not depend on the split.
    """
    if workers <= 1 or cfg.trials == 1:
        chunks = [_sweep_chunk(cfg, 0, cfg.trials)]
    else:
        workers = min(workers, cfg.trials)
        size = -(-cfg.trials // (workers * 4))
        bounds = [(lo, min(lo + size, cfg.trials)) for lo in range(0, cfg.trials, size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sweep_chunk, [cfg] * len(bounds),
                                   [b[0] for b in bounds], [b[1] for b in bounds]))
    tables = {}
    for variant in cfg.variants:
        fails = np.concatenate([c[variant][0] for c in chunks], axis=1)
        err_mmse = np.concatenate([c[variant][1] for c in chunks], axis=1)
        err_final = np.concatenate([c[variant][2] for c in chunks], axis=1)
        tables[variant] = _aggregate(cfg, variant, fails, err_mmse, err_final)
    return tables


@dataclass(frozen=True)
class BoundPoint:
    et_db: float
    per_stage: float
    raw_total: float
    bound: float
    clamped: bool


BOUND_CSV_HEADER = "et_db,bound,per_stage,raw_total,clamped"


def bound_table(n: int, k: int, et_db, n0: float = 1.0,
                var_alpha: float | None = None) -> tuple[BoundPoint, ...]:
    """Analytical failure bound for the overlapped design across an energy grid."""
    patterns = overlapped_pattern_matrix(patterns_per_end(k, OVERLAPPED))
    stages = stage_count(n, k)
    variance = float(n * n) if var_alpha is None else float(var_alpha)
    points = []
    for db in et_db:
        energy = n0 * 10.0 ** (float(db) / 10.0)
        p_t = power_for_energy(energy, n, k, OVERLAPPED)
        result = pcef_upper_bound(patterns, stages, p_t, n0, variance)
        points.append(BoundPoint(et_db=float(db), per_stage=result.per_stage,
                                 raw_total=result.raw_total, bound=result.total,
                                 clamped=result.clamped))
    return tuple(points)


def bound_csv(points) -> str:
    lines = [BOUND_CSV_HEADER]
    for p in points:
        lines.append(",".join([repr(p.et_db), repr(p.bound), repr(p.per_stage),
                               repr(p.raw_total), str(int(p.clamped))]))
    return "\n".join(lines) + "\n"
