import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tagrevise import compiler as C
from tagrevise import expr as E
from tagrevise import process as P

c = P.prior_means()


def test_light_peaks_at_best_light():
    assert P.eval_subprocess_f(c["C_BL"], c["C_BL"]) == 1.0
    assert P.eval_subprocess_f(10.0, c["C_BL"]) < P.eval_subprocess_f(20.0, c["C_BL"]) < 1.0


def test_temperature_optima():
    assert P.eval_subprocess_h(c["C_BTP1"], c["C_PT"], c["C_BTP1"], c["C_BTP2"]) == 1.0
    assert P.eval_subprocess_h(c["C_BTP2"], c["C_PT"], c["C_BTP1"], c["C_BTP2"]) == 1.0


def test_food_threshold():
    assert P.eval_lambda(c["C_Fmin"], c["C_Fmin"], c["C_FS"]) == 0.0
    assert P.eval_lambda(0.0, c["C_Fmin"], c["C_FS"]) == 0.0
    assert 0.0 < P.eval_lambda(10.0, c["C_Fmin"], c["C_FS"]) < 1.0


def test_nutrients_at_half_saturation():
    g = P.eval_subprocess_g(c["C_N"], c["C_P"], c["C_SI"], c["C_N"], c["C_P"], c["C_SI"])
    assert abs(g - 0.5) <= 1e-12


def test_expression_form_matches_functions():
    prog = C.compile_system(P.manual_defs())
    env = {"V_lgt": c["C_BL"], "V_tmp": c["C_BTP2"], "V_n": c["C_N"], "V_p": c["C_P"],
           "V_si": c["C_SI"], "B_Phy": c["C_Fmin"], "B_Zoo": 1.0}
    out = C.eval_program_all(prog, E.Environment(env, c))
    assert out["f"] == 1.0
    assert out["h"] == 1.0
    assert abs(out["g"] - 0.5) <= 1e-12
    assert out["lambda_Phy"] == 0.0


def test_prior_table():
    assert len(P.PRIORS) == 16
    assert P.PRIOR_MAP["C_FS"].sigma0 == 1.25
    assert P.PRIOR_MAP["C_UA"].clamp(5.2) == 4.0
    assert P.PRIOR_MAP["C_UA"].clamp(-1.0) == 0.1
    for p in P.PRIORS:
        assert p.min <= p.mean <= p.max
    with pytest.raises(ValueError):
        P.ParameterPrior("bad", 5.0, 0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(b_phy=st.floats(0, 50), b_zoo=st.floats(0, 10), seed=st.integers(0, 2**31))
def test_compiled_derivatives_match_functions(b_phy, b_zoo, seed):
    rng = np.random.default_rng(seed)
    env = {v.id: float(rng.uniform(v.low, v.high)) for v in P.VARIABLES}
    prog = C.compile_system(P.manual_defs(), outputs=["dB_Phy", "dB_Zoo"])
    out = C.eval_program_all(prog, E.Environment(dict(env, B_Phy=b_phy, B_Zoo=b_zoo), c))
    d_phy, d_zoo = P.manual_derivatives(b_phy, b_zoo, env, c)
    assert out["dB_Phy"] == pytest.approx(d_phy, rel=1e-12, abs=1e-12)
    assert out["dB_Zoo"] == pytest.approx(d_zoo, rel=1e-12, abs=1e-12)


def _env(n, seed=0):
    from tagrevise.hydrology import seasonal_variables
    return seasonal_variables(n, np.random.default_rng(seed))


def test_simulation_matches_reference():
    params = dict(c, C_UA=0.75, C_BRA=0.13, C_MFR=0.23, C_UZ=0.27, C_DZ=0.015, C_BRZ=0.014)
    env = _env(200)
    model = P.CompiledModel.from_defs(P.manual_defs(), params)
    sim = P.simulate(model, [5.0, 3.7], env, 200)
    ref = P.simulate_reference(params, [5.0, 3.7], env, 200)
    np.testing.assert_allclose(sim.trajectory, ref, rtol=1e-10, atol=1e-12)


def test_step_agrees_with_simulate():
    params = dict(c, C_UA=0.75, C_BRA=0.13)
    env = _env(5)
    model = P.CompiledModel.from_defs(P.manual_defs(), params)
    s = P.BioState(5.0, 1.0)
    traj = [s.B_Phy]
    for t in range(4):
        s = P.step(s, {k: v[t] for k, v in env.items()}, model)
        traj.append(s.B_Phy)
    assert np.allclose(traj, P.simulate(model, [5.0, 1.0], env, 5).trajectory, rtol=1e-12)
    assert s.t == 4 and not s.invalid


def test_horizon_longer_than_data():
    model = P.CompiledModel.from_defs(P.manual_defs(), c)
    with pytest.raises(ValueError):
        P.simulate(model, [1.0, 1.0], _env(10), 20)
