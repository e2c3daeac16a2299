import math

import numpy as np
import pytest

from dsgp4kit import (FitState, FreeParamSet, Observation, fit_tle, initialize,
                      initial_guess_from_tles, normal_step, parse_tle,
                      propagate, pseudo_observations, residuals,
                      solve_normal_equations, state_to_tle, to_elements)
from dsgp4kit.gradients import PARAM_FIELDS
from dsgp4kit.orbit_determination import (POS_SCALE, HyperbolicState,
                                          NonConvergence,
                                          SingularNormalMatrix)
from dsgp4kit.propagator import WGS72


def truth_elements(clean_cases, index=2):
    case = clean_cases[index]
    return to_elements(parse_tle(case["line1"], case["line2"]))


def observations_from(els, times, rng=None, sigma_pos=0.0, sigma_vel=0.0):
    model = initialize(els)
    out = []
    for t in times:
        vec = np.array(propagate(model, t).vector())
        if rng is not None:
            vec[:3] += rng.normal(0.0, sigma_pos, 3)
            vec[3:] += rng.normal(0.0, sigma_vel, 3)
        out.append(Observation(state=tuple(vec), epoch_jd=els.epoch_jd,
                               epoch_fr=els.epoch_fr + t / 1440.0))
    return out


def test_residuals_vanish_on_exact_observations(clean_cases):
    els = truth_elements(clean_cases)
    obs = observations_from(els, [0.0, 360.0, 720.0])
    bs, norms, total = residuals(FitState(els), obs)
    assert all(np.all(b == 0.0) for b in bs)
    assert norms == [0.0, 0.0, 0.0]
    assert total == 0.0


def test_residual_of_displaced_observation(clean_cases):
    els = truth_elements(clean_cases)
    ob = observations_from(els, [0.0])[0]
    shifted = Observation(state=(ob.state[0] - 1.0,) + ob.state[1:],
                          epoch_jd=ob.epoch_jd, epoch_fr=ob.epoch_fr)
    bs, norms, total = residuals(FitState(els), [shifted])
    expected = np.zeros(6)
    expected[0] = 1.0 / POS_SCALE
    assert np.array_equal(bs[0], expected)
    assert total == norms[0] == 1.0 / POS_SCALE


def test_residual_total_uses_weights(clean_cases):
    els = truth_elements(clean_cases)
    ob = observations_from(els, [0.0])[0]
    shifted = Observation(state=(ob.state[0] - 1.0,) + ob.state[1:],
                          epoch_jd=ob.epoch_jd, epoch_fr=ob.epoch_fr,
                          weight=4.0)
    _, _, total = residuals(FitState(els), [shifted])
    assert total == pytest.approx(2.0 / POS_SCALE, rel=1e-15)


def test_observation_validation():
    with pytest.raises(ValueError):
        Observation(state=(1.0, 2.0, 3.0), epoch_jd=2460000.5)
    with pytest.raises(ValueError):
        Observation(state=(math.nan,) * 6, epoch_jd=2460000.5)
    with pytest.raises(ValueError):
        Observation(state=(1.0,) * 6, epoch_jd=2460000.5, weight=-1.0)


def test_normal_step_exact_on_affine_model():
    # Gauss-Newton is exact in one step when the model is affine, so
    # the step must land on the least-squares optimum to solver noise
    rng = np.random.default_rng(7)
    A = rng.standard_normal((30, 5))
    y = A @ rng.standard_normal(5) + 0.01 * rng.standard_normal(30)
    x0 = rng.standard_normal(5)
    b = A @ x0 - y
    dx = solve_normal_equations(A, b)
    x_opt, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert np.abs((x0 + dx) - x_opt).max() < 1e-12


def test_normal_step_exact_on_weighted_affine_model():
    rng = np.random.default_rng(8)
    A = rng.standard_normal((24, 4))
    y = A @ rng.standard_normal(4) + 0.1 * rng.standard_normal(24)
    w = rng.uniform(0.1, 3.0, 24)
    x0 = rng.standard_normal(4)
    dx = solve_normal_equations(A, A @ x0 - y, w)
    N = A.T @ (w[:, None] * A)
    x_opt = np.linalg.solve(N, A.T @ (w * y))
    assert np.abs((x0 + dx) - x_opt).max() < 1e-12


def test_zero_residuals_give_zero_step(clean_cases):
    els = truth_elements(clean_cases)
    obs = observations_from(els, [0.0, 360.0, 720.0])
    dx = normal_step(FitState(els), obs)
    assert np.all(dx == 0.0)


def test_singular_system_without_damping_raises():
    A = np.zeros((12, 3))
    A[:, 0] = 1.0  # two dead columns
    with pytest.raises(SingularNormalMatrix):
        solve_normal_equations(A, np.ones(12))


def test_step_equivariant_under_observation_reordering(clean_cases):
    # observations are stacked in a canonical time order internally, so
    # the step is bitwise independent of the caller's list order
    els = truth_elements(clean_cases)
    obs = observations_from(els, [0.0, 240.0, 480.0, 720.0, 960.0])
    guess = FitState(els.replace(mo=els.mo + 0.01))
    dx = normal_step(guess, obs)
    shuffled = [obs[3], obs[0], obs[4], obs[2], obs[1]]
    dx2 = normal_step(guess, shuffled)
    assert np.array_equal(dx2, dx)


def test_zero_weight_observation_is_ignored(clean_cases):
    els = truth_elements(clean_cases)
    obs = observations_from(els, [0.0, 360.0, 720.0])
    junk = Observation(state=tuple(c + 50.0 for c in obs[0].state),
                       epoch_jd=obs[0].epoch_jd, epoch_fr=obs[0].epoch_fr,
                       weight=0.0)
    guess = FitState(els.replace(mo=els.mo + 0.01))
    dx_with = normal_step(guess, obs + [junk])
    dx_without = normal_step(guess, obs)
    assert np.allclose(dx_with, dx_without, rtol=1e-12, atol=0)


def test_noiseless_fit_recovers_truth(clean_cases):
    truth = truth_elements(clean_cases)
    obs = observations_from(truth, [k * 360.0 for k in range(9)])
    guess = FitState(truth.replace(ecco=truth.ecco + 1e-4,
                                   mo=truth.mo + 0.01))
    fit, report = fit_tle(obs, guess)
    assert report.converged
    tv = np.array([getattr(truth, PARAM_FIELDS[n]) for n in fit.free])
    rel = np.abs(fit.vector() - tv) / np.maximum(np.abs(tv), 1e-30)
    assert rel.max() < 1e-8
    _, _, total = residuals(fit, obs)
    assert total < 1e-9


def test_noisy_fit_descends_monotonically(clean_cases):
    truth = truth_elements(clean_cases)
    rng = np.random.default_rng(11)
    obs = observations_from(truth, [k * 360.0 for k in range(9)],
                            rng=rng, sigma_pos=1.0, sigma_vel=1e-3)
    guess = FitState(truth.replace(ecco=truth.ecco + 3e-4,
                                   mo=truth.mo + 0.05,
                                   nodeo=truth.nodeo + 0.01))
    fit, report = fit_tle(obs, guess)
    assert report.converged
    norms = report.residual_norms
    assert all(b <= a for a, b in zip(norms, norms[1:]))
    assert norms[0] / norms[-1] > 100.0
    assert all(it.accepted for it in report.iterations)


def test_already_optimal_guess_converges_in_one_iteration(clean_cases):
    truth = truth_elements(clean_cases)
    obs = observations_from(truth, [0.0, 360.0, 720.0])
    fit, report = fit_tle(obs, FitState(truth))
    assert report.converged
    assert len(report.iterations) == 1
    assert report.iterations[0].step_norm == 0.0
    assert fit.elements == truth


def test_fit_requires_observations(clean_cases):
    with pytest.raises(ValueError):
        fit_tle([], FitState(truth_elements(clean_cases)))


def test_single_observation_six_element_fit(clean_cases):
    truth = truth_elements(clean_cases)
    obs = observations_from(truth, [0.0])
    guess = FitState(truth.replace(mo=truth.mo + 1e-3),
                     free=FreeParamSet.elements6())
    fit, report = fit_tle(obs, guess)
    assert report.converged
    assert abs(fit.elements.mo - truth.mo) < 1e-10


def test_single_observation_with_bstar_free_is_unobservable(clean_cases):
    # drag sensitivity at tsince 0 is identically zero, so the bstar
    # column is dead and no amount of diagonal damping can fix it
    truth = truth_elements(clean_cases)
    obs = observations_from(truth, [0.0])
    guess = FitState(truth.replace(mo=truth.mo + 1e-3))
    with pytest.raises(NonConvergence) as exc_info:
        fit_tle(obs, guess)
    exc = exc_info.value
    assert isinstance(exc.best, FitState)
    assert exc.report.reason == "damping_exhausted"
    assert len(exc.report.iterations) >= 1


def test_state_to_tle_fixed_point(clean_cases):
    truth = truth_elements(clean_cases)
    st = propagate(initialize(truth), 0.0)
    fs = state_to_tle(st, truth.epoch_jd, truth.epoch_fr)
    names = FreeParamSet.elements6()
    tv = np.array([getattr(truth, PARAM_FIELDS[n]) for n in names])
    fv = np.array([getattr(fs.elements, PARAM_FIELDS[n]) for n in names])
    assert (np.abs(fv - tv) / np.maximum(np.abs(tv), 1e-30)).max() < 1e-9


def test_state_to_tle_round_trip_after_a_day(clean_cases):
    truth = truth_elements(clean_cases)
    st = propagate(initialize(truth), 1440.0)
    fs = state_to_tle(st, truth.epoch_jd, truth.epoch_fr + 1.0)
    back = propagate(initialize(fs.elements), 0.0)
    assert np.abs(np.array(back.r) - np.array(st.r)).max() < 1e-9
    assert np.abs(np.array(back.v) - np.array(st.v)).max() < 1e-12


def test_state_to_tle_circular_equatorial():
    # argp and ma are individually meaningless here; least squares
    # settles on one representative and the state must still match
    r0 = 7000.0
    vc = math.sqrt(WGS72.mu / r0)
    fs = state_to_tle((r0, 0.0, 0.0, 0.0, vc, 0.0), 2460000.5)
    back = propagate(initialize(fs.elements), 0.0)
    assert np.abs(np.array(back.r) - np.array([r0, 0.0, 0.0])).max() < 1e-9
    assert np.abs(np.array(back.v) - np.array([0.0, vc, 0.0])).max() < 1e-12


def test_state_to_tle_rejects_hyperbolic_state():
    r0 = 7000.0
    v_escape = math.sqrt(2.0 * WGS72.mu / r0)
    with pytest.raises(HyperbolicState):
        state_to_tle((r0, 0.0, 0.0, 0.0, 1.1 * v_escape, 0.0), 2460000.5)


def test_state_to_tle_nonconvergence_carries_best(clean_cases):
    truth = truth_elements(clean_cases)
    st = propagate(initialize(truth), 0.0)
    with pytest.raises(NonConvergence) as exc_info:
        state_to_tle(st, truth.epoch_jd, truth.epoch_fr, max_iter=0)
    assert isinstance(exc_info.value.best, FitState)


def test_initial_guess_from_single_tle(clean_cases):
    case = clean_cases[2]
    rec = parse_tle(case["line1"], case["line2"])
    els = to_elements(rec)
    guess = initial_guess_from_tles([rec], els.epoch_jd, els.epoch_fr + 0.5)
    target = propagate(initialize(els), 720.0)
    got = propagate(initialize(guess.elements), 0.0)
    dev = np.abs(np.array(got.vector()) - np.array(target.vector())).max()
    assert dev < 1e-8
    assert guess.template is rec


def test_initial_guess_duplicate_tles_matches_single(clean_cases):
    case = clean_cases[2]
    rec = parse_tle(case["line1"], case["line2"])
    els = to_elements(rec)
    one = initial_guess_from_tles([rec], els.epoch_jd, els.epoch_fr + 0.5)
    two = initial_guess_from_tles([rec, rec], els.epoch_jd, els.epoch_fr + 0.5)
    assert one.elements == two.elements


def test_initial_guess_requires_tles():
    with pytest.raises(ValueError):
        initial_guess_from_tles([], 2460000.5)


def test_pseudo_observations(clean_cases):
    case = clean_cases[2]
    rec = parse_tle(case["line1"], case["line2"])
    els = to_elements(rec)
    obs = pseudo_observations([rec], weight=2.5)
    assert len(obs) == 1
    st = propagate(initialize(els), 0.0)
    assert obs[0].state == tuple(st.vector())
    assert obs[0].epoch_jd == els.epoch_jd
    assert obs[0].epoch_fr == els.epoch_fr
    assert obs[0].weight == 2.5
