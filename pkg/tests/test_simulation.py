import numpy as np
import pytest
from scipy import stats

import dqvc.simulation as sim_mod
from dqvc.exceptions import InvalidInputError, NumericalError
from dqvc.ps import PsOptions
from dqvc.quantile import DirectionGrid
from dqvc.simulation import (
    Report,
    SimConfig,
    analytic_coverage,
    draw_errors,
    gen_dataset,
    oracle_quantiles,
    rng_for,
    run_replications,
    true_coefficients,
)
from dqvc.envelope import build_envelope, coverage

TINY = dict(n=24, J=6, d=12, knot_count=2, tau_levels=(0.2,), replications=2)


def test_defaults():
    c = SimConfig()
    assert (c.n, c.J, c.d, c.tau_levels, c.probe) == (200, 50, 100, (0.05, 0.1, 0.2), (1.0, 0.5, 0.7))
    for bad in ({"n": 3}, {"J": 1}, {"tau_levels": (1.0,)}, {"coeff_set": "x"}, {"error_dist": "IV"}):
        with pytest.raises(InvalidInputError):
            SimConfig(**bad)


def test_error_I_variance():
    e = draw_errors("I", 100_000, rng_for(1))
    assert np.allclose(e.var(axis=0), 0.8, atol=0.02)


def test_error_II_is_heavy_tailed():
    e = draw_errors("II", 200_000, rng_for(2))
    scale = np.sqrt(0.8**5)
    assert np.quantile(e[:, 0] / scale, 0.95) == pytest.approx(stats.t.ppf(0.95, 3), abs=0.05)


def test_error_III_shape():
    e = draw_errors("III", 100_000, rng_for(3))
    assert np.corrcoef(e.T)[0, 1] > 0.2
    assert stats.skew(e[:, 0]) > 0
    assert np.corrcoef(e.T)[0, 1] == pytest.approx(1 / 3, abs=0.02)


@pytest.mark.xfail(strict=True, reason="error III marginal SD (1.96) is 2.2x error I (0.89) under the stated parameters")
def test_snr_comparability():
    sds = [draw_errors(k, 200_000, rng_for(4)).std(axis=0).max() for k in ("I", "II", "III")]
    assert max(sds) / min(sds) <= 1.6


def test_true_coefficients():
    b1, b2 = true_coefficients("smooth", np.array([0.0]))
    assert b1[:, 0].tolist() == [1.0, 2.0, -1.0]
    assert b2[:, 0].tolist() == [-1.0, -1.0, 3.0]
    r1, _ = true_coefficients("rough", np.array([1.0]))
    assert r1[:, 0] == pytest.approx([40 / 3, -4.0, 4.0])


def test_gen_dataset_deterministic_and_shaped():
    cfg = SimConfig(n=50, J=10)
    a, b, c = gen_dataset(cfg, 0), gen_dataset(cfg, 0), gen_dataset(cfg, 1)
    assert np.array_equal(a.responses, b.responses) and not np.array_equal(a.responses, c.responses)
    assert a.responses.shape == (50, 10, 2)
    assert set(np.unique(a.covariates[:, 1])) <= {0.0, 1.0}
    assert np.all(a.covariates[:, 0] == 1.0)
    assert np.allclose(a.t_grid, np.linspace(0, 1, 10))


def test_analytic_coverage():
    assert analytic_coverage("gaussian", 0.05) == pytest.approx(0.7415, abs=1e-4)
    assert analytic_coverage("gaussian", 0.1) == pytest.approx(0.560, abs=1e-3)
    # exact value 1 - exp(-0.8416**2 / 2) = 0.29824
    assert analytic_coverage("gaussian", 0.2) == pytest.approx(0.2979, abs=5e-4)
    assert analytic_coverage("t3", 0.1) == pytest.approx(0.620, abs=0.005)
    assert analytic_coverage("t3", 0.05) == pytest.approx(0.792, abs=1e-3)
    with pytest.raises(InvalidInputError):
        analytic_coverage("chi2", 0.1)


@pytest.mark.parametrize("error,tau,target", [("I", 0.05, 0.740), ("II", 0.05, 0.790)])
def test_oracle_envelope_coverage(error, tau, target):
    cfg = SimConfig(error_dist=error)
    grid = DirectionGrid(cfg.d)
    q = oracle_quantiles(cfg, cfg.probe_x, cfg.probe_t, tau, seed=rng_for(7, 0))
    fresh = cfg.center() + draw_errors(error, 5000, rng_for(7, 1))
    assert coverage(grid, q, fresh) == pytest.approx(target, abs=0.02)


@pytest.mark.parametrize("tau", [0.05, 0.5])
def test_oracle_symmetry(tau):
    # symmetric errors: q(s) - s'c = q(-s) + s'c
    cfg = SimConfig()
    grid = DirectionGrid(cfg.d)
    q = oracle_quantiles(cfg, cfg.probe_x, cfg.probe_t, tau, n_oracle=20000, seed=rng_for(8))
    center = grid.directions @ cfg.center()
    opp = (np.arange(cfg.d) + cfg.d // 2) % cfg.d
    assert np.abs(q - (q[opp] + 2 * center)).max() < 0.1


def test_run_replications_report(tmp_path):
    cfg = SimConfig(**TINY)
    rep = run_replications(cfg, PsOptions(lam=0.1, C=2))
    assert not rep.failed
    csv_text = rep.to_csv()
    assert csv_text.splitlines()[0] == ",".join(Report.COLUMNS)
    assert len(csv_text.splitlines()) == 3
    row = rep.row(0.2, "nu")
    assert 0 <= row["initial_mean"] <= 1 and row["initial_sd"] >= 0
    assert "tau" in rep.to_text()
    again = run_replications(cfg, PsOptions(lam=0.1, C=2))
    assert again.to_csv() == csv_text


def test_replication_count_and_failures(monkeypatch):
    with pytest.raises(InvalidInputError):
        run_replications(SimConfig(**{**TINY, "replications": 1}))
    real = sim_mod.run_multistage
    calls = []

    def flaky(data, *a, **k):
        calls.append(1)
        if len(calls) == 2:
            raise NumericalError("boom")
        return real(data, *a, **k)

    monkeypatch.setattr(sim_mod, "run_multistage", flaky)
    rep = run_replications(SimConfig(**{**TINY, "replications": 3}), PsOptions(lam=0.1, C=1))
    assert rep.failed == [1]
    assert "failed replications: [1]" in rep.to_text()


def test_local_coverage_mode():
    cfg = SimConfig(**{**TINY, "n": 200, "J": 21, "coverage_mode": "local"})
    rep = run_replications(cfg, PsOptions(lam=0.1, C=1))
    assert np.isfinite(rep.row(0.2, "nu")["initial_mean"])


def test_streams_are_keyed():
    a = rng_for(0, 0, 3).random(4)
    b = rng_for(0, 0, 3).random(4)
    c = rng_for(0, 0, 4).random(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_truth_kappa_increases_with_tau():
    cfg = SimConfig(n_oracle=5000)
    t = sim_mod.truth(cfg)
    assert t[(0.05, "kappa")] < t[(0.1, "kappa")] < t[(0.2, "kappa")]
    env = build_envelope(DirectionGrid(cfg.d), oracle_quantiles(cfg, cfg.probe_x, cfg.probe_t, 0.05))
    assert not env.empty
