import numpy as np
import pytest
from scipy import stats

from beamest.estimator import NON_OVERLAPPED, OVERLAPPED, run_estimation, EstimatorConfig
from beamest.montecarlo import (
    ExperimentConfig,
    bound_csv,
    bound_table,
    failure_indicator,
    noise_stream,
    power_for_energy,
    run_sweep,
    sample_channel,
    stage_gains,
)


def _cfg(**kw):
    defaults = dict(n=9, k=3, et_db=(5.0, 15.0), trials=64, master_seed=77)
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestSampleChannel:
    def test_deterministic_per_trial(self):
        cfg = _cfg()
        a = sample_channel(cfg, 12)
        b = sample_channel(cfg, 12)
        assert (a.theta, a.phi, a.alpha) == (b.theta, b.phi, b.alpha)
        c = sample_channel(cfg, 13)
        assert (a.theta, a.phi, a.alpha) != (c.theta, c.phi, c.alpha)

    def test_independent_of_variant_list(self):
        # both variants must see identical channel draws (paired comparison)
        one = _cfg(variants=(OVERLAPPED,))
        both = _cfg()
        for trial in range(20):
            a = sample_channel(one, trial)
            b = sample_channel(both, trial)
            assert (a.theta, a.phi, a.alpha) == (b.theta, b.phi, b.alpha)

    def test_gain_variance_default_n_squared(self):
        cfg = _cfg(n=27)
        draws = np.array([sample_channel(cfg, t).alpha for t in range(100_000)])
        measured = np.mean(np.abs(draws) ** 2)
        assert abs(measured - 729.0) / 729.0 < 0.02
        assert abs(np.mean(draws)) < 3.0  # zero-mean within a few std errors

    def test_angle_uniformity_chi_squared(self):
        cfg = _cfg(n=27)
        thetas = np.array([sample_channel(cfg, t).theta for t in range(100_000)])
        counts = np.bincount(thetas, minlength=27)
        _, p_value = stats.chisquare(counts)
        assert p_value > 0.01

    def test_angles_mutually_independent_spot(self):
        cfg = _cfg(n=27)
        pairs = np.array([[sample_channel(cfg, t).theta, sample_channel(cfg, t).phi]
                          for t in range(5000)])
        corr = np.corrcoef(pairs.T)[0, 1]
        assert abs(corr) < 0.05

    def test_noise_streams_distinct_per_variant(self):
        cfg = _cfg()
        a = np.random.default_rng(noise_stream(cfg, 0, OVERLAPPED)).normal(size=4)
        b = np.random.default_rng(noise_stream(cfg, 0, NON_OVERLAPPED)).normal(size=4)
        assert not np.allclose(a, b)


class TestFailureIndicator:
    def test_equivalence_with_index_match(self):
        # containment in the final singleton sub-range must agree with exact
        # index recovery, trial by trial
        cfg = _cfg(n=9, trials=1, et_db=(6.0,))
        ecfg = EstimatorConfig(n=9, k=3, p_t=power_for_energy(10 ** 0.6, 9, 3),
                               n0=1.0, var_alpha=81.0)
        mismatches = 0
        for trial in range(10_000):
            channel = sample_channel(cfg, trial)
            trace = run_estimation(channel, ecfg,
                                   np.random.default_rng(noise_stream(cfg, trial, OVERLAPPED)))
            failed = failure_indicator(trace, channel)
            index_failed = (trace.theta_hat != channel.theta
                            or trace.phi_hat != channel.phi)
            mismatches += failed != index_failed
        assert mismatches == 0

    def test_perfect_and_broken_traces(self):
        cfg = _cfg(n=9)
        ecfg = EstimatorConfig(n=9, k=3, p_t=1.0, n0=0.0, var_alpha=81.0)
        channel = sample_channel(cfg, 0)
        trace = run_estimation(channel, ecfg)
        assert failure_indicator(trace, channel) is False
        # wrong transmit side alone must flag failure
        other = sample_channel(cfg, 1)
        wrong_phi = type(channel)(theta=channel.theta,
                                  phi=(channel.phi + 1) % 9,
                                  alpha=channel.alpha, n=9)
        assert failure_indicator(trace, wrong_phi) is True


class TestEnergyAccounting:
    def test_stage_gains_increase(self):
        gains = stage_gains(27, 3, OVERLAPPED)
        assert len(gains) == 3
        assert gains[0] < gains[1] < gains[2]

    def test_power_for_energy_roundtrip(self):
        for variant in (OVERLAPPED, NON_OVERLAPPED):
            gains = stage_gains(27, 3, variant)
            slots_per_stage = {OVERLAPPED: 4, NON_OVERLAPPED: 9}[variant]
            p_t = power_for_energy(819.0, 27, 3, variant)
            total = slots_per_stage * sum(p_t / c ** 4 for c in gains)
            assert abs(total - 819.0) < 1e-9

    def test_both_variants_share_the_energy_to_power_map(self):
        # slots x sum(C^-4) coincides for the two designs on this geometry
        a = power_for_energy(100.0, 27, 3, OVERLAPPED)
        b = power_for_energy(100.0, 27, 3, NON_OVERLAPPED)
        assert abs(a - b) / a < 1e-12


class TestRunSweep:
    def test_zero_noise_sentinel_point(self):
        # effectively noiseless energy: no failures for either variant
        cfg = _cfg(n=27, et_db=(80.0,), trials=300)
        tables = run_sweep(cfg)
        for table in tables.values():
            assert table.points[0].pcef == 0.0
            assert table.points[0].failures == 0

    def test_slot_columns(self):
        cfg = _cfg(n=27, trials=16)
        tables = run_sweep(cfg)
        assert tables[OVERLAPPED].points[0].slots == 12
        assert tables[NON_OVERLAPPED].points[0].slots == 27

    def test_pcef_and_interval_sanity(self):
        cfg = _cfg(n=9, et_db=(0.0, 10.0, 20.0), trials=400)
        tables = run_sweep(cfg)
        for table in tables.values():
            for p in table.points:
                assert 0.0 <= p.ci_low <= p.pcef <= p.ci_high <= 1.0
                assert p.trials == 400
                assert p.failures == round(p.pcef * 400)

    def test_worker_split_bit_identical(self):
        cfg = _cfg(n=9, et_db=(4.0, 12.0), trials=120)
        serial = run_sweep(cfg, workers=1)
        parallel = run_sweep(cfg, workers=3)
        for variant in cfg.variants:
            assert serial[variant].to_csv() == parallel[variant].to_csv()

    def test_csv_shape(self):
        cfg = _cfg(trials=32)
        text = run_sweep(cfg)[OVERLAPPED].to_csv()
        lines = text.strip().split("\n")
        assert lines[0].startswith("et_db,pcef,")
        assert len(lines) == 1 + 2
        assert len(lines[1].split(",")) == len(lines[0].split(","))

    def test_low_count_flag(self):
        cfg = _cfg(n=27, et_db=(60.0,), trials=200)
        point = run_sweep(cfg)[OVERLAPPED].points[0]
        assert point.failures < 5
        assert point.low_count

    def test_config_validation(self):
        with pytest.raises(ValueError):
            _cfg(et_db=(5.0, 5.0))
        with pytest.raises(ValueError):
            _cfg(trials=0)
        with pytest.raises(ValueError):
            _cfg(variants=("sideways",))
        with pytest.raises(ValueError):
            _cfg(n=10)

    def test_pcef_statistically_non_increasing_in_energy(self):
        cfg = _cfg(n=9, et_db=(0.0, 6.0, 12.0, 18.0, 24.0), trials=2000,
                   variants=(OVERLAPPED,))
        points = run_sweep(cfg)[OVERLAPPED].points
        for a, b in zip(points, points[1:]):
            band = 3.0 * np.hypot(a.pcef - a.ci_low, b.pcef - b.ci_low) / 1.96
            assert b.pcef <= a.pcef + band


class TestBoundTable:
    def test_rows_and_clamping(self):
        points = bound_table(27, 3, et_db=(float("-inf"), 0.0, 30.0))
        assert points[0].bound == 1.0 and points[0].clamped
        # zero power: every non-self pairwise term is 1/2
        assert abs(points[0].raw_total - 12.0) < 1e-12
        assert points[-1].bound < 0.1
        assert not points[-1].clamped

    def test_monotone_tail(self):
        values = [p.bound for p in bound_table(27, 3, et_db=tuple(range(10, 42, 4)))]
        assert all(x >= y for x, y in zip(values, values[1:]))

    def test_csv_format(self):
        text = bound_csv(bound_table(27, 3, et_db=(10.0, 20.0)))
        lines = text.strip().split("\n")
        assert lines[0] == "et_db,bound,per_stage,raw_total,clamped"
        assert len(lines) == 3
