"""PI tuner: constraint verification, frozen tuned gains, batch behavior.

Frozen gain pairs below were produced by this tuner and cross-checked by an
independent margin measurement (fractional.margins on a dense grid).  They
are regression anchors: the optimizer is deterministic, so drift signals a
real change in the objective or the measurement chain.
"""
import math

import numpy as np
import pytest

from heatgrid.fractional import (
    FoTransferFunction,
    FrequencyResponse,
    freq_response,
    margins,
    rationalize,
)
from heatgrid.presets import DIAG_PARAMS, REFERENCE_MODEL
from heatgrid.tuner import (
    PiGains,
    TuneBatch,
    TuningSpec,
    load_gains_csv,
    save_gains_csv,
    tune_all,
    tune_pi,
    verify_spec,
)

# (channel index, frozen Kp, frozen Ki) in normalized-drive units.
FROZEN_GAINS = [
    (0, 0.335129, 0.256095),
    (15, 1.194402, 0.772279),
]


def independent_margins(plant, gains, w_lo=1e-4, w_hi=1e3):
    """Margin check through the fractional-module path, not the tuner's."""
    w = np.logspace(math.log10(w_lo), math.log10(w_hi), 2401)
    vals = (gains.prop_K + gains.integ_I / (1j * w)) * freq_response(plant, w).values
    return margins(FrequencyResponse(w, vals))


def closed_loop_error_curve(plant, gains, horizon, n=4000):
    """Unit-step error of the rationalized closed loop by partial fractions."""
    rat = rationalize(plant)
    ng = np.asarray(rat.num_coeffs)
    dg = np.asarray(rat.den_coeffs)
    dcl = np.polyadd(np.polymul(dg, [1.0, 0.0]),
                     np.polymul(ng, [gains.prop_K, gains.integ_I]))
    poles = np.roots(dcl)
    assert np.all(poles.real < 0.0), "loop must be stable for this oracle"
    resid = np.polyval(dg, poles) / np.polyval(np.polyder(dcl), poles)
    t = np.linspace(0.0, horizon, n + 1)
    e = (resid[:, None] * np.exp(poles[:, None] * t[None, :])).sum(axis=0).real
    return t, e


class TestPiGains:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            PiGains(0.0, 1.0)
        with pytest.raises(ValueError):
            PiGains(1.0, -2.0)
        with pytest.raises(ValueError):
            PiGains(float("inf"), 1.0)

    def test_integral_time(self):
        g = PiGains(65.73, 1.17)
        assert g.integral_time == pytest.approx(65.73 / 1.17, rel=1e-12)

    def test_scaled(self):
        g = PiGains(2.0, 0.5).scaled(3.0)
        assert (g.prop_K, g.integ_I) == (6.0, 1.5)


class TestTuningSpec:
    def test_defaults(self):
        s = TuningSpec()
        assert s.pm_range_deg == (60.0, 65.0)
        assert s.gm_range_db == (10.0, 15.0)
        assert s.crossover_target_w is None
        assert s.flat_phase_tol == 5.0
        assert (s.hf_noise_bound_db, s.hf_noise_w) == (-20.0, 10.0)
        assert (s.dist_rej_bound_db, s.dist_rej_w) == (-20.0, 1e-3)

    def test_pm_range_must_sit_inside_zero_ninety(self):
        with pytest.raises(ValueError):
            TuningSpec(pm_range_deg=(0.0, 65.0))
        with pytest.raises(ValueError):
            TuningSpec(pm_range_deg=(60.0, 95.0))
        with pytest.raises(ValueError):
            TuningSpec(pm_range_deg=(65.0, 60.0))

    def test_other_validation(self):
        with pytest.raises(ValueError):
            TuningSpec(flat_phase_tol=0.0)
        with pytest.raises(ValueError):
            TuningSpec(crossover_target_w=-1.0)
        with pytest.raises(ValueError):
            TuningSpec(itae_step=0.0)
        with pytest.raises(ValueError):
            TuningSpec(hf_noise_bound_db=float("nan"))


class TestTunePi:
    @pytest.mark.parametrize("ch,kp,ki", FROZEN_GAINS)
    def test_frozen_bench_channels(self, ch, kp, ki):
        r = tune_pi(DIAG_PARAMS[ch])
        assert r.feasible
        assert r.gains.prop_K == pytest.approx(kp, rel=5e-3)
        assert r.gains.integ_I == pytest.approx(ki, rel=5e-3)
        assert 60.0 <= r.achieved.phase_margin_deg <= 65.0
        assert abs(r.flat_phase_slope) <= 5.0
        assert r.hf_noise_db <= -20.0
        assert r.dist_rej_db <= -20.0
        assert math.isinf(r.achieved.gain_margin_db)
        assert math.isfinite(r.itae_value) and r.itae_value > 0.0
        # independent margin measurement agrees with the tuner's report
        m = independent_margins(DIAG_PARAMS[ch], r.gains)
        assert m.phase_margin_deg == pytest.approx(
            r.achieved.phase_margin_deg, abs=0.05
        )

    def test_integer_plant_tight_phase_margin_window(self):
        plant = FoTransferFunction(1.0, 1.0, 1.0, 0.0)
        r = tune_pi(plant, TuningSpec(pm_range_deg=(59.0, 61.0)))
        assert r.feasible
        m = independent_margins(plant, r.gains)
        assert m.phase_margin_deg == pytest.approx(60.0, abs=1.0)

    def test_deterministic(self):
        a = tune_pi(DIAG_PARAMS[15])
        b = tune_pi(DIAG_PARAMS[15])
        assert a.gains == b.gains
        assert a.itae_value == b.itae_value
        assert a.iterations == b.iterations

    def test_scale_covariance(self):
        base = tune_pi(DIAG_PARAMS[15])
        k = 3.7
        g16 = DIAG_PARAMS[15]
        scaled_plant = FoTransferFunction(
            k * g16.gain_K, g16.time_const_T, g16.order_alpha, 0.0
        )
        r = tune_pi(scaled_plant)
        assert r.gains.prop_K * k == pytest.approx(base.gains.prop_K, rel=0.01)
        assert r.gains.integ_I * k == pytest.approx(base.gains.integ_I, rel=0.01)

    def test_zero_gain_plant_rejected(self):
        with pytest.raises(ValueError, match="zero gain"):
            tune_pi(FoTransferFunction(0.0, 10.0, 0.5, 0.0))

    def test_pinned_crossover(self):
        spec = TuningSpec(
            pm_range_deg=(30.0, 89.0),
            flat_phase_tol=1e3,
            hf_noise_bound_db=60.0,
            dist_rej_bound_db=60.0,
            crossover_target_w=0.05,
        )
        r = tune_pi(REFERENCE_MODEL, spec)
        assert r.feasible
        assert r.achieved.gain_crossover_w == pytest.approx(0.05, rel=0.02)


class TestVerifySpec:
    def test_vanishing_gains_act_like_tiny_integrator(self):
        r = verify_spec(REFERENCE_MODEL, PiGains(1e-9, 1e-9))
        assert r.achieved.phase_margin_deg > 65.0
        assert not r.feasible
        assert r.achieved.gain_crossover_w < 1e-6

    def test_bench_reference_controller_stable_and_tracking(self):
        # Deployed channel-1 gains: stable and zero steady-state error, but
        # far outside the design windows (pm well above the upper edge).
        gains = PiGains(65.73, 1.17)
        r = verify_spec(REFERENCE_MODEL, gains)
        assert math.isfinite(r.itae_value)
        assert not r.feasible
        assert r.achieved.phase_margin_deg == pytest.approx(135.4516, abs=0.05)
        t, e = closed_loop_error_curve(REFERENCE_MODEL, gains, 600.0)
        assert abs(e[0] - 1.0) < 1e-6
        assert abs(e[-1]) < 1e-3

    def test_bench_channel16_controller_stable(self):
        r = verify_spec(DIAG_PARAMS[15], PiGains(83.33, 4.45))
        assert math.isfinite(r.itae_value)
        assert r.achieved.phase_margin_deg > 0.0

    def test_verification_idempotent_with_tune(self):
        tuned = tune_pi(DIAG_PARAMS[0])
        again = verify_spec(DIAG_PARAMS[0], tuned.gains)
        assert again.gains == tuned.gains
        assert again.achieved == tuned.achieved
        assert again.flat_phase_slope == tuned.flat_phase_slope
        assert again.hf_noise_db == tuned.hf_noise_db
        assert again.dist_rej_db == tuned.dist_rej_db
        assert again.itae_value == tuned.itae_value
        assert again.feasible == tuned.feasible

    def test_itae_value_scales_with_step(self):
        g = PiGains(65.73, 1.17)
        small = verify_spec(REFERENCE_MODEL, g, TuningSpec(itae_step=1.0))
        large = verify_spec(REFERENCE_MODEL, g, TuningSpec(itae_step=13.0))
        assert large.itae_value == pytest.approx(13.0 * small.itae_value, rel=1e-12)


class TestTuneAll:
    def test_identical_channels_identical_results(self):
        plant = DIAG_PARAMS[15]
        batch = tune_all((plant, plant, plant))
        assert batch.errors == ()
        assert batch.n_feasible == 3
        g0 = batch.results[0].gains
        assert all(r.gains == g0 for r in batch.results)

    def test_error_isolation(self):
        plants = (DIAG_PARAMS[15], FoTransferFunction(0.0, 5.0, 0.5, 0.0),
                  DIAG_PARAMS[12])
        batch = tune_all(plants)
        assert batch.results[1] is None
        assert len(batch.errors) == 1
        assert batch.errors[0][0] == 1
        assert "zero gain" in batch.errors[0][1]
        assert batch.results[0] is not None and batch.results[0].feasible
        assert batch.results[2] is not None and batch.results[2].feasible

    def test_accepts_object_with_diagonal(self):
        class Holder:
            def diagonal(self):
                return (DIAG_PARAMS[15],)

        batch = tune_all(Holder())
        assert len(batch.results) == 1
        assert batch.results[0].feasible


class TestGainsTable:
    def test_round_trip(self, tmp_path):
        batch = tune_all((DIAG_PARAMS[15], FoTransferFunction(0.0, 5.0, 0.5, 0.0)))
        path = tmp_path / "gains.csv"
        save_gains_csv(path, batch)
        loaded = load_gains_csv(path)
        assert set(loaded) == {0}
        assert loaded[0].prop_K == pytest.approx(
            batch.results[0].gains.prop_K, rel=1e-9
        )
        assert loaded[0].integ_I == pytest.approx(
            batch.results[0].gains.integ_I, rel=1e-9
        )

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "junk.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            load_gains_csv(path)
