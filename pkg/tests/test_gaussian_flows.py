import math

import numpy as np
import pytest

from tempflow.closed_forms import fr_1d, kl_1d, tempered_fr_1d, tempered_fr_interpolant_1d, tempered_w_1d, w_1d
from tempflow.gaussian_flows import (
    FlowIntegrationError,
    FlowKind,
    integrate_flow,
    kl_along,
    rhs_combined,
    rhs_fr,
    rhs_tempered_fr,
    rhs_tempered_w,
    rhs_w,
)
from tempflow.models import GaussianDist, gaussian_pair, geometric_interpolant, kl_gaussian
from tempflow.schedules import FixedSchedule, beta_value

TARGET1 = gaussian_pair(GaussianDist(0.0, 1.0), GaussianDist(20.0, 0.1))
TARGET2 = gaussian_pair(GaussianDist(0.0, 1.0), GaussianDist(1.0, 5.0))


def random_state(rng, d):
    q = rng.standard_normal((d, d))
    return rng.standard_normal(d), q @ q.T + 0.2 * np.eye(d)


def random_pair(rng, d):
    m0, c0 = random_state(rng, d)
    mp, cp = random_state(rng, d)
    return gaussian_pair(GaussianDist(m0, c0), GaussianDist(mp, cp))


def test_w_rhs_example():
    dm, dc = rhs_w(np.array([0.0]), np.array([[1.0]]), TARGET1.pi_gauss)
    assert dm[0] == pytest.approx(200.0, rel=1e-13)
    assert dc[0, 0] == pytest.approx(-18.0, rel=1e-13)


def test_stationary_at_target(rng):
    for d in (1, 3):
        tp = random_pair(rng, d)
        pi = tp.pi_gauss
        for base in ("W", "FR", "WFR"):
            for tempered in (False, True):
                dm, dc = rhs_combined(pi.mean, pi.cov, tp, 1.0, FlowKind(base, tempered, lambda t: 1.0))
                assert np.max(np.abs(dm)) < 1e-12 and np.max(np.abs(dc)) < 1e-12


def test_tempered_w_lambda_zero_keeps_mu0(rng):
    tp = random_pair(rng, 2)
    dm, dc = rhs_tempered_w(tp.mu0_gauss.mean, tp.mu0_gauss.cov, tp, 0.0)
    assert np.max(np.abs(dm)) < 1e-12 and np.max(np.abs(dc)) < 1e-12


def test_tempered_w_half_way_example():
    tp = gaussian_pair(GaussianDist(0.0, 1.0), GaussianDist(2.0, 1.0))
    dm, _ = rhs_tempered_w(np.array([0.0]), np.array([[1.0]]), tp, 0.5)
    assert dm[0] == pytest.approx(1.0, abs=1e-15)
    dm, _ = rhs_tempered_w(np.array([1.0]), np.array([[1.0]]), tp, 0.5)
    assert dm[0] == pytest.approx(0.0, abs=1e-15)


def test_lambda_one_reductions(rng):
    for _ in range(50):
        d = int(rng.integers(1, 4))
        tp = random_pair(rng, d)
        m, c = random_state(rng, d)
        pi = tp.pi_gauss
        for a, b in [(rhs_tempered_w(m, c, tp, 1.0), rhs_w(m, c, pi)), (rhs_tempered_fr(m, c, tp, 1.0), rhs_fr(m, c, pi))]:
            assert np.max(np.abs(a[0] - b[0])) < 1e-14 and np.max(np.abs(a[1] - b[1])) < 1e-14


def test_combined_is_sum_of_parts(rng):
    for _ in range(20):
        tp = random_pair(rng, 2)
        m, c = random_state(rng, 2)
        dm, dc = rhs_combined(m, c, tp, 1.0, FlowKind("WFR"))
        w, fr = rhs_w(m, c, tp.pi_gauss), rhs_fr(m, c, tp.pi_gauss)
        assert np.allclose(dm, w[0] + fr[0], atol=1e-13) and np.allclose(dc, w[1] + fr[1], atol=1e-13)
    tp = random_pair(rng, 2)
    m, c = random_state(rng, 2)
    dm, dc = rhs_combined(m, c, tp, 0.5, FlowKind("WFR", True, lambda t: 0.5))
    w, fr = rhs_tempered_w(m, c, tp, 0.5), rhs_tempered_fr(m, c, tp, 0.5)
    assert np.allclose(dm, w[0] + fr[0], atol=1e-13) and np.allclose(dc, w[1] + fr[1], atol=1e-13)


def test_cov_derivative_symmetric(rng):
    for _ in range(20):
        tp = random_pair(rng, 3)
        m, c = random_state(rng, 3)
        for kind in (FlowKind("W", True, lambda t: 0.3), FlowKind("FR", True, lambda t: 0.3), FlowKind("WFR")):
            _, dc = rhs_combined(m, c, tp, 0.3 if kind.tempered else 1.0, kind)
            assert np.max(np.abs(dc - dc.T)) < 1e-12


def test_fr_precision_closed_form_satisfies_ode():
    s0, sp = 1.0, 0.1
    h = 1e-6
    for t in (0.1, 1.0, 3.0):
        prec = lambda u: 1 / sp + math.exp(-u) * (1 / s0 - 1 / sp)
        v = 1 / prec(t)
        dv = (1 / prec(t + h) - 1 / prec(t - h)) / (2 * h)
        _, dc = rhs_fr(np.array([0.0]), np.array([[v]]), GaussianDist(0.0, sp))
        assert dc[0, 0] == pytest.approx(dv, rel=1e-7)


def test_fr_mean_shift_mean():
    m = 2.5
    traj = integrate_flow(FlowKind("FR"), gaussian_pair(GaussianDist(0.0, 1.0), GaussianDist(m, 1.0)), 5.0)
    assert np.max(np.abs(traj.means[:, 0] - m * (1 - np.exp(-traj.ts)))) < 1e-10


@pytest.mark.parametrize("tp", [TARGET1, TARGET2], ids=["N(20,0.1)", "N(1,5)"])
def test_untempered_flows_match_closed_forms(tp):
    mp, sp = tp.pi_gauss.mean[0], tp.pi_gauss.cov[0, 0]
    for kind, oracle in [(FlowKind("W"), w_1d), (FlowKind("FR"), fr_1d)]:
        traj = integrate_flow(kind, tp, 10.0, 1e-3)
        mean, var = oracle(traj.ts, 0.0, 1.0, mp, sp)
        assert np.max(np.abs(traj.means[:, 0] - mean)) < 1e-8
        assert np.max(np.abs(traj.covs[:, 0, 0] - var)) < 1e-8


@pytest.mark.parametrize("sched", [FixedSchedule.linear(10.0), FixedSchedule.chehab()], ids=["linear", "chehab"])
def test_tempered_flows_match_closed_forms(sched):
    tp = TARGET2
    mp, sp = 1.0, 5.0
    for kind, oracle in [(FlowKind("W", True, sched), tempered_w_1d), (FlowKind("FR", True, sched), tempered_fr_1d)]:
        traj = integrate_flow(kind, tp, 10.0, 1e-3, record_every=500)
        for t, m, c in zip(traj.ts, traj.means[:, 0], traj.covs[:, 0, 0]):
            want = oracle(float(t), sched, 0.0, 1.0, mp, sp)
            assert abs(m - want[0]) < 1e-6 and abs(c - want[1]) < 1e-6


def test_interpolant_attractor_follows_rho_beta():
    tp = gaussian_pair(GaussianDist(0.0, 1.0), GaussianDist(3.0, 0.5))
    sched = FixedSchedule.linear(5.0)
    traj = integrate_flow(FlowKind("FR", True, sched, "interpolant"), tp, 6.0, 1e-3, record_every=250)
    for t, m, c in zip(traj.ts, traj.means, traj.covs):
        rho = geometric_interpolant(tp, beta_value(sched, float(t)))
        assert np.allclose(m, rho.mean, atol=1e-9) and np.allclose(c, rho.cov, atol=1e-9)
        want = tempered_fr_interpolant_1d(float(t), sched, 0.0, 1.0, 3.0, 0.5)
        assert m[0] == pytest.approx(want[0], abs=1e-9)


def test_target_attractor_diverges_from_rho_beta_on_mean():
    tp = gaussian_pair(GaussianDist(0.0, 1.0), GaussianDist(3.0, 1.0))
    sched = FixedSchedule.linear(5.0)
    traj = integrate_flow(FlowKind("FR", True, sched), tp, 2.0, 1e-3)
    assert np.max(np.abs(traj.means[:, 0] - 3.0 * (1 - np.exp(-traj.ts)))) < 1e-10
    assert traj.means[-1, 0] - 3.0 * beta_value(sched, 2.0) > 1.0


def test_matrix_path_matches_scalar_path():
    sched = FixedSchedule.exponential(0.5)
    for base in ("W", "FR", "WFR"):
        a = integrate_flow(FlowKind(base, True, sched), TARGET2, 2.0)
        b = integrate_flow(FlowKind(base, True, lambda t: sched(t)), TARGET2, 2.0)
        assert np.max(np.abs(a.means - b.means)) < 1e-13 and np.max(np.abs(a.covs - b.covs)) < 1e-13


def test_multivariate_w_matches_ou_solution(rng):
    tp = random_pair(rng, 3)
    pi, mu0 = tp.pi_gauss, tp.mu0_gauss
    traj = integrate_flow(FlowKind("W"), tp, 1.0, 1e-3)
    w, v = np.linalg.eigh(pi.precision)
    e = v @ np.diag(np.exp(-w)) @ v.T
    mean = pi.mean + e @ (mu0.mean - pi.mean)
    cov = pi.cov + e @ (mu0.cov - pi.cov) @ e.T
    assert np.allclose(traj.means[-1], mean, atol=1e-9) and np.allclose(traj.covs[-1], cov, atol=1e-9)


def test_trajectory_records_and_kl():
    traj = integrate_flow(FlowKind("W"), TARGET1, 1.0, 1e-3, record_every=100)
    assert len(traj) == 11 and np.all(np.diff(traj.ts) > 0)
    assert traj.state(0).as_gaussian().allclose(TARGET1.mu0_gauss)
    ts, kl = kl_along(traj, TARGET1.pi_gauss)
    assert kl[0] == pytest.approx(kl_gaussian(TARGET1.mu0_gauss, TARGET1.pi_gauss), rel=1e-14)
    assert kl[0] == pytest.approx(0.5 * (10 + 4000 - 1 + math.log(0.1)), rel=1e-14)
    assert np.allclose(kl, kl_1d(traj.means[:, 0], traj.covs[:, 0, 0], 20.0, 0.1), rtol=1e-10)


@pytest.mark.parametrize("base", ["W", "FR", "WFR"])
def test_untempered_kl_non_increasing(base):
    for tp in (TARGET1, TARGET2):
        _, kl = kl_along(integrate_flow(FlowKind(base), tp, 10.0, 1e-3), tp.pi_gauss)
        assert np.all(np.diff(kl) <= 1e-12)


def test_w_faster_on_narrow_target_fr_faster_on_wide_target():
    def kl_at(kind, tp, t):
        traj = integrate_flow(kind, tp, t, 1e-3)
        return kl_along(traj, tp.pi_gauss)[1][-1]

    for t in (5.0, 10.0):
        assert kl_at(FlowKind("W"), TARGET1, t) < kl_at(FlowKind("FR"), TARGET1, t)
        assert kl_at(FlowKind("FR"), TARGET2, t) < kl_at(FlowKind("W"), TARGET2, t)


def test_stiff_step_is_rescued_by_halving():
    tp = gaussian_pair(GaussianDist(0.0, 1.0), GaussianDist(0.0, 1e-4))
    traj = integrate_flow(FlowKind("W"), tp, 1.0, 0.5)
    assert np.all(traj.covs[:, 0, 0] > 0)


def test_pd_loss_raises():
    with pytest.raises(FlowIntegrationError) as err:
        integrate_flow(FlowKind("W", True, lambda t: float("nan")), TARGET2, 1.0, 0.1)
    assert err.value.t == 0.0


def test_flow_kind_validation():
    with pytest.raises(ValueError):
        FlowKind("XY")
    with pytest.raises(ValueError):
        FlowKind("W", tempered=True)
    assert FlowKind("WFR", True, lambda t: 0.5).name == "T-WFR"
