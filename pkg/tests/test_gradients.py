import numpy as np
import pytest

from dsgp4kit import (FreeParamSet, fd_check, fd_jacobian, jacobian, jvp,
                      parse_tle, stm_tle, to_elements)
from dsgp4kit.gradients import DEFAULT_FD_STEPS, PARAM_NAMES, suggest_fd_steps


def elements_for(case):
    return to_elements(parse_tle(case["line1"], case["line2"]))


def test_param_names_order():
    assert PARAM_NAMES == ("n", "e", "i", "raan", "argp", "ma", "bstar",
                           "ndot", "nddot")
    assert tuple(FreeParamSet.standard7()) == PARAM_NAMES[:7]


def test_jacobian_shape_and_anchor(clean_cases):
    els = elements_for(clean_cases[0])
    J = jacobian(els, tsince=720.0)
    assert np.asarray(J.matrix).shape == (6, 7)
    assert J.tsince == 720.0
    # anchor state equals the plain propagation
    from dsgp4kit import initialize, propagate
    st = propagate(initialize(els), 720.0)
    assert tuple(J.state) == (*st.r, *st.v)


def test_jacobian_against_finite_differences_grid(clean_cases):
    # the acceptance run covers every case; here a spread is enough
    for case in clean_cases[:5]:
        els = elements_for(case)
        steps = suggest_fd_steps(els)
        for t in (0.0, 720.0, 4320.0):
            report = fd_check(els, tsince=t, steps=steps)
            assert report["max_dev"] < 1e-5, (case["name"], t, report)


def test_near_clamp_eccentricity_needs_smaller_step(clean_cases):
    # fd truncation straddling the e clamp is visible with the default
    # step and gone with the suggested one; the jet column needs neither
    case = next(c for c in clean_cases
                if to_elements(parse_tle(c["line1"], c["line2"])).ecco < 1.3e-6)
    els = elements_for(case)
    coarse = fd_check(els, tsince=720.0)
    tuned = fd_check(els, tsince=720.0, steps=suggest_fd_steps(els))
    assert coarse["max_dev"] > 1e-4
    assert coarse["worst_param"] == "e"
    assert tuned["max_dev"] < 1e-5


def test_full9_jacobian_inert_columns(clean_cases):
    els = elements_for(clean_cases[0])
    J = jacobian(els, params=FreeParamSet.full9(), tsince=1440.0)
    m = np.asarray(J.matrix)
    assert m.shape == (6, 9)
    # the near-earth model never reads ndot or nddot
    assert np.all(m[:, 7] == 0.0)
    assert np.all(m[:, 8] == 0.0)


def test_jvp_matches_jacobian_column(clean_cases):
    els = elements_for(clean_cases[1])
    J = np.asarray(jacobian(els, tsince=251.2).matrix)
    names = tuple(FreeParamSet.standard7())
    for k, name in enumerate(names):
        v = jvp(els, {name: 1.0}, tsince=251.2)
        assert np.allclose(v, J[:, k], rtol=1e-13, atol=0.0)
    # a mixed direction is the matching linear combination
    direction = {"n": 0.5, "e": -2.0, "ma": 1.0}
    v = jvp(els, direction, tsince=251.2)
    expect = 0.5 * J[:, 0] - 2.0 * J[:, 1] + 1.0 * J[:, 5]
    assert np.allclose(v, expect, rtol=1e-12)


def test_empty_param_set(clean_cases):
    els = elements_for(clean_cases[0])
    J = jacobian(els, params=FreeParamSet(()), tsince=10.0)
    assert np.asarray(J.matrix).shape == (6, 0)


def test_stm_is_elements6_restriction(clean_cases):
    els = elements_for(clean_cases[2])
    stm = stm_tle(els, 1440.0)
    J = jacobian(els, params=FreeParamSet.elements6(), tsince=1440.0)
    assert np.array_equal(np.asarray(stm.matrix), np.asarray(J.matrix))
    assert np.asarray(stm.matrix).shape == (6, 6)


def test_low_perigee_bstar_needs_smaller_step(clean_cases):
    # deep in the drag regime the state is nonlinear enough in bstar
    # over 3 days that the default central step shows pure truncation
    case = next(c for c in clean_cases if c["name"] == "perigee-96")
    els = elements_for(case)
    coarse = fd_check(els, tsince=4320.0)
    tuned = fd_check(els, tsince=4320.0, steps=suggest_fd_steps(els))
    assert coarse["max_dev"] > 1e-5
    assert coarse["worst_param"] == "bstar"
    assert tuned["max_dev"] < 1e-5


def test_fd_jacobian_respects_custom_steps(clean_cases):
    els = elements_for(clean_cases[0])
    a = fd_jacobian(els, tsince=100.0)
    b = fd_jacobian(els, tsince=100.0,
                    steps={n: 2.0 * s for n, s in DEFAULT_FD_STEPS.items()})
    assert not np.array_equal(a, b)
    # agreement judged against column scale, as entries whose true value
    # is zero hold nothing but cancellation noise
    col = np.maximum(np.abs(a).max(axis=0), 1e-9)
    dev = np.abs(a - b) / np.maximum(np.abs(a), col[None, :])
    assert dev.max() < 1e-3


def test_unknown_param_rejected():
    with pytest.raises(ValueError):
        FreeParamSet.parse("n,borked")


def test_index_lookup():
    ps = FreeParamSet.standard7()
    assert ps.index("n") == 0
    assert ps.index("bstar") == 6
