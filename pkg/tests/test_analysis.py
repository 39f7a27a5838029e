import numpy as np
import pytest

from rnnchaos.analysis import (HIST_EDGES, config_hash, ensemble, histogram,
                               prediction_error_curve, rnn_lyapunov_spectrum)
from rnnchaos.errors import LengthMismatch
from rnnchaos.model import RnnParams, spectral_init, warmup
from rnnchaos.numerics import make_rng, spectral_radius
from rnnchaos.spectrum import AttractorClass
from rnnchaos.training import FitConfig, TrainConfig, rc_fit


def test_pure_leak_exponents(rng):
    d = 5
    p = RnnParams(np.zeros((d, d)), np.zeros((d, 2)), rng.standard_normal((2, d)),
                  rng.standard_normal(d), 0.5)
    rep = rnn_lyapunov_spectrum(p, rng.standard_normal(d), n_steps=200)
    np.testing.assert_allclose(rep.spectrum_per_step, np.log(0.5), rtol=0, atol=1e-13)
    assert rep.attractor_class is AttractorClass.FIXED_POINT
    assert rep.dl_dimension == 0.0


def test_linear_map_at_origin():
    p = RnnParams(np.diag([1.5, 0.5]), np.eye(2), np.zeros((2, 2)), np.zeros(2), 1.0)
    rep = rnn_lyapunov_spectrum(p, np.zeros(2), n_steps=100)
    np.testing.assert_allclose(rep.spectrum_per_step, np.log([1.5, 0.5]), rtol=0, atol=1e-13)
    assert rep.dl_dimension == pytest.approx(1 + np.log(1.5) / np.log(2.0), abs=1e-12)


def test_closed_loop_enters_through_readout():
    # the same linear map split between recurrence and input-readout loop
    W_in = np.array([[1.0, 0.0], [0.0, 0.0]])
    W_out = np.array([[0.5, 0.0], [0.0, 0.0]])
    p = RnnParams(np.diag([1.0, 0.5]), W_in, W_out, np.zeros(2), 1.0)
    rep = rnn_lyapunov_spectrum(p, np.zeros(2), n_steps=50)
    np.testing.assert_allclose(rep.spectrum_per_step, np.log([1.5, 0.5]), atol=1e-13)


def test_dt_converts_to_time_units(rng):
    p = RnnParams(np.zeros((3, 3)), np.zeros((3, 1)), np.zeros((1, 3)), np.zeros(3), 0.5)
    rep = rnn_lyapunov_spectrum(p, np.zeros(3), n_steps=20, dt=0.02)
    np.testing.assert_allclose(rep.spectrum, np.log(0.5) / 0.02, rtol=1e-13)


def test_contractive_machine_is_fixed_point():
    p = spectral_init(20, 3, 0.5, 0.5, make_rng(4))
    J0 = 0.5 * np.eye(20) + 0.5 * p.closed_loop_matrix()
    assert spectral_radius(J0) < 1
    rep = rnn_lyapunov_spectrum(p, make_rng(5).uniform(-0.5, 0.5, 20), n_steps=400,
                                transient=100, dt=0.02)
    assert rep.spectrum[0] < 0
    assert rep.attractor_class is AttractorClass.FIXED_POINT


def test_transient_bounds(rng):
    p = spectral_init(4, 1, 0.5, 0.5, rng)
    with pytest.raises(ValueError):
        rnn_lyapunov_spectrum(p, np.zeros(4), n_steps=10, transient=10)


def test_top_m_default_for_large_machines(rng):
    p = spectral_init(80, 3, 0.9, 0.3, rng)
    rep = rnn_lyapunov_spectrum(p, np.zeros(80), n_steps=20)
    assert len(rep.spectrum_per_step) == 16


@pytest.fixture(scope="module")
def chaotic_machine(lorenz_traj):
    u = lorenz_traj.states
    p = rc_fit(u[:2101], FitConfig(d=60, fit_len=2000, warmup_len=100, seed=3))
    return p, warmup(p, u[3000:3100])


def test_frame_invariance(chaotic_machine):
    p, h = chaotic_machine
    a = rnn_lyapunov_spectrum(p, h, 1600, 100, n_exponents=3, rng=make_rng(1))
    b = rnn_lyapunov_spectrum(p, h, 1600, 100, n_exponents=3, rng=make_rng(2))
    np.testing.assert_allclose(a.spectrum_per_step, b.spectrum_per_step, rtol=0, atol=1e-3)


def test_subset_matches_full_spectrum_head(chaotic_machine):
    p, h = chaotic_machine
    full = rnn_lyapunov_spectrum(p, h, 600)
    head = rnn_lyapunov_spectrum(p, h, 600, n_exponents=4)
    np.testing.assert_allclose(head.spectrum_per_step, full.spectrum_per_step[:4], atol=1e-10)


def test_divergent_machine_reported():
    p = RnnParams(np.array([[np.inf]]), np.ones((1, 1)), np.ones((1, 1)), np.zeros(1), 1.0)
    with np.errstate(invalid="ignore"):
        rep = rnn_lyapunov_spectrum(p, np.array([-1.0]), n_steps=5)
    assert rep.attractor_class is AttractorClass.DIVERGENT


# -- error curves --------------------------------------------------------------------

def test_error_curve_identical():
    x = make_rng(0).standard_normal((40, 3))
    ec = prediction_error_curve(x, x)
    assert np.all(ec.rmse == 0) and ec.horizon == 40


def test_error_curve_constant_offset():
    x = make_rng(1).standard_normal((25, 3))
    ec = prediction_error_curve(x, x + 0.3)
    np.testing.assert_allclose(ec.rmse, 0.3, rtol=1e-12)
    assert ec.horizon == 0


def test_error_curve_horizon_is_first_exceedance():
    truth = np.zeros((10, 2))
    pred = truth.copy()
    pred[4:] = 0.5
    pred[7] = 0.0
    assert prediction_error_curve(truth, pred).horizon == 4
    assert prediction_error_curve(truth, pred, threshold=0.6).horizon == 10


def test_error_curve_nan_counts_as_exceeded():
    pred = np.zeros((5, 1))
    pred[2] = np.nan
    assert prediction_error_curve(np.zeros((5, 1)), pred).horizon == 2


def test_error_curve_length_mismatch():
    with pytest.raises(LengthMismatch):
        prediction_error_curve(np.zeros((5, 3)), np.zeros((4, 3)))


# -- histograms and ensembles ---------------------------------------------------------

def test_histogram_bins():
    assert len(HIST_EDGES) - 1 == 60
    counts = histogram([0.0, 0.05, 2.31, 5.99, 6.0, 9.0, np.nan])
    assert counts.sum() == 6
    assert counts[0] == 2 and counts[23] == 1 and counts[-1] == 3


def test_config_hash_stable():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def small_fit_ensemble(traj, M, R, seed=11):
    cfg = FitConfig(d=20, fit_len=400, warmup_len=50)
    return ensemble(traj, M, R, "fit", cfg, seed, n_steps=300, transient=50, warmup_len=50)


def test_ensemble_single_run(lorenz_traj):
    rep = small_fit_ensemble(lorenz_traj, 1, 1)
    assert len(rep.reports) + len(rep.aborted) >= 1 and len(rep.reports) == 1
    r = rep.reports[0]
    assert r.n_steps == 250 and r.meta["machine"] == 0 and r.meta["run"] == 0
    assert r.meta["config_hash"] == rep.config_hash
    assert sum(rep.class_tallies.values()) == 1


def test_ensemble_bookkeeping(lorenz_traj):
    rep = small_fit_ensemble(lorenz_traj, 3, 2)
    finite = sum(np.isfinite(r.dl_dimension) for r in rep.reports)
    no_dim = sum(1 for a in rep.aborted if a["reason"] in {c.value for c in AttractorClass})
    assert rep.counts.sum() == finite == 3 * 2 - no_dim - (len(rep.aborted) - no_dim)
    assert len(rep.histogram_rows()) == 60
    assert len({m["seed"] for m in rep.machines}) == 3


def test_ensemble_deterministic(lorenz_traj):
    a = small_fit_ensemble(lorenz_traj, 2, 2).to_dict()
    b = small_fit_ensemble(lorenz_traj, 2, 2).to_dict()
    assert a == b
    assert small_fit_ensemble(lorenz_traj, 2, 2, seed=12).to_dict() != a


def test_ensemble_rejects_bad_arguments(lorenz_traj):
    with pytest.raises(ValueError):
        ensemble(lorenz_traj, 0, 1, "fit", FitConfig(), 0)
    with pytest.raises(TypeError):
        ensemble(lorenz_traj, 1, 1, "fit", TrainConfig(), 0)
