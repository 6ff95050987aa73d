import math

import numpy as np
import pytest

from multilevel_readout.dynamics import (
    HERMITIAN_TOL, IntegratorError, MultipleMaximaError, POSITIVITY_TOL, TRACE_TOL, cascade_matrix,
    check_state, density, ef_pulse, evolve, evolve_batch, fit_qnd, ge_pulse, jump_operators,
    optimize_amplitude, rate_equation, scan_amplitude,
)
from multilevel_readout.params import SystemParams

LOSSLESS = dict(ancilla_T1_ge=1e300, ancilla_T1_ef=1e300, ancilla_T1_fh=1e300,
                ancilla_T2_ge=1e300, ancilla_T2_gf=1e300, ancilla_thermal_pop=0.0)


def test_ground_state_is_dark(params):
    ev = evolve(density(0), None, params, t_span=2e-9, dt=1e-11)
    np.testing.assert_allclose(ev.final[0], density(0), atol=1e-14)


def test_free_decay_follows_rate_equation(params):
    t = 2e-8
    ev = evolve(density(2), None, params, t_span=t, dt=1e-11)
    np.testing.assert_allclose(ev.final_populations()[0], rate_equation([0, 0, 1], t, params), atol=1e-6)


def test_lossless_pi_pulse():
    p = SystemParams(**LOSSLESS)
    ge = optimize_amplitude(ge_pulse(), p)
    pops = evolve(density(0), ge, p).final_populations()[0]
    assert pops[1] > 0.999


def test_zero_amplitude_is_identity(params):
    ev = evolve(density(0), ge_pulse(0.0), params)
    assert ev.final_populations()[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_invariants_along_pulse(params):
    ev = evolve_batch(density(0), ge_pulse(), params, amplitudes=[0.5, 1.0, 1.5], record_every=25)
    rho = ev.final
    assert np.abs(np.trace(rho, axis1=1, axis2=2) - 1).max() < TRACE_TOL
    assert np.abs(rho - rho.conj().transpose(0, 2, 1)).max() < HERMITIAN_TOL
    assert np.linalg.eigvalsh(rho).min() > -POSITIVITY_TOL
    assert ev.populations.shape[1:] == (3, 3)


def test_check_state_rejects_unphysical():
    bad = density(0)
    bad[1, 1] = -0.1
    with pytest.raises(IntegratorError):
        check_state(bad)


def test_coarse_step_rejected(params):
    with pytest.raises(ValueError):
        evolve(density(0), ge_pulse(), params, dt=1e-9)


def test_multiple_maxima_reported(params):
    with pytest.raises(MultipleMaximaError) as err:
        optimize_amplitude(ge_pulse(), SystemParams(**LOSSLESS), span=2.5, dt=2e-11)
    assert len(err.value.amplitudes) >= 2


def test_four_level_operators(params):
    ops = jump_operators(params, K=4)
    assert any(op[2, 3] != 0 for op in ops)


def test_rate_equation_limits(params):
    np.testing.assert_array_equal(rate_equation([0, 0, 1], 0.0, params), [0, 0, 1])
    np.testing.assert_allclose(rate_equation([0, 0, 1], 1.0, params), [1, 0, 0], atol=1e-12)
    with pytest.raises(ValueError):
        rate_equation([0, 0, 1], -1.0, params)


def test_equal_rate_branch_is_continuous():
    a = 2e4
    exact = rate_equation([0.1, 0.2, 0.7], 3e-5, gamma_ge=a, gamma_ef=a)
    near = rate_equation([0.1, 0.2, 0.7], 3e-5, gamma_ge=a, gamma_ef=a * (1 + 1e-9))
    np.testing.assert_allclose(exact, near, atol=1e-9)
    assert exact[1] == pytest.approx(0.2 * math.exp(-a * 3e-5) + 0.7 * a * 3e-5 * math.exp(-a * 3e-5), rel=1e-12)


def _rk4(M, p, t, steps=2000):
    h = t / steps
    for _ in range(steps):
        k1 = M @ p
        k2 = M @ (p + 0.5 * h * k1)
        k3 = M @ (p + 0.5 * h * k2)
        k4 = M @ (p + h * k3)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


def test_rate_equation_matches_rk4(params, rng):
    M = cascade_matrix(params)
    for _ in range(100):
        p0 = rng.dirichlet(np.ones(3))
        t = rng.uniform(0, 1e-4)
        np.testing.assert_allclose(rate_equation(p0, t, params), _rk4(M, p0, t), atol=1e-10)


def test_fit_qnd_exact_data():
    tau = np.array([2e-6, 5e-6, 1e-5, 3e-5, 1e-4])
    life = 1 / (1 / 1.01e-3 + 2e-4 / tau)
    fit = fit_qnd(tau, life)
    assert fit.tau0 == pytest.approx(1.01e-3, rel=1e-12)
    assert fit.p_d == pytest.approx(2e-4, rel=1e-10)


def test_fit_qnd_no_demolition():
    tau = np.array([2e-6, 5e-6, 1e-5])
    fit = fit_qnd(tau, np.full(3, 1.01e-3))
    assert abs(fit.p_d) < 1e-15


def test_fit_qnd_degenerate():
    with pytest.raises(ValueError):
        fit_qnd([1e-5, 1e-5], [1e-3, 1.1e-3])
