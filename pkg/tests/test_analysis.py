import dataclasses

import numpy as np
import pytest

from tagrevise import analysis as A
from tagrevise import knowledge as K
from tagrevise import process as P


@pytest.fixture(scope="module")
def baseline(grammar):
    return K.model_sexprs(K.initial_derivation(grammar), grammar)


def revised(baseline, gamma):
    eqs = dict(baseline, gamma_Phy=gamma)
    return {"equations": eqs, "parameters": P.prior_means()}


@pytest.fixture(scope="module")
def four_models(baseline):
    return [revised(baseline, g) for g in
            ("(* C_BRA V_ph)", "(* C_BRA (+ V_ph V_n))", "(* C_BRA V_tmp)", "(/ C_BRA V_ph)")]


def test_selectivity_fixture(four_models, baseline):
    sel = A.selectivity(four_models, K=4, baseline=baseline)
    assert sel["V_ph"] == 75.0
    assert sel["V_n"] == 25.0
    assert sel["V_tmp"] == 25.0
    assert sel["V_lgt"] == 0.0


def test_selectivity_without_baseline_counts_all_uses(four_models):
    sel = A.selectivity(four_models, K=4)
    # the unrevised growth term already reads temperature, light and nutrients
    assert sel["V_tmp"] == sel["V_lgt"] == sel["V_n"] == 100.0
    assert sel["V_ph"] == 75.0


def test_selectivity_needs_k_models(four_models):
    with pytest.raises(A.AnalysisError):
        A.selectivity(four_models, K=5)
    with pytest.raises(A.AnalysisError):
        A.selectivity(four_models, K=0)
    assert A.selectivity(four_models, K=2, baseline=dict())["V_ph"] == 100.0


def test_model_without_equations_rejected():
    with pytest.raises(A.AnalysisError):
        A.referenced_variables({"parameters": {}})


@pytest.fixture(scope="module")
def dim_data(small_data):
    """Light kept well below the optimum so more light means more growth."""
    env = small_data.env.copy()
    col = small_data.columns["V_lgt"]
    env[:, col] = np.minimum(env[:, col], 18.0)
    return dataclasses.replace(small_data, env=env)


def test_perturbation_direction(baseline, dim_data):
    manual = revised(baseline, baseline["gamma_Phy"])
    assert A.perturb_correlation(manual, dim_data, "V_lgt", 0.1) > 0
    assert A.perturb_correlation(manual, dim_data, "V_lgt", 0.0) == 0.0
    # the unrevised model does not read pH
    assert A.perturb_correlation(manual, dim_data, "V_ph", 0.1) == 0.0
    with pytest.raises(A.AnalysisError):
        A.perturb_correlation(manual, dim_data, "V_xyz")


def test_report(four_models, baseline, dim_data):
    rep = A.selectivity_report(four_models, dim_data, K=4, baseline=baseline)
    assert rep["V_ph"]["selectivity"] == 75.0
    assert rep["V_ph"]["sign"] in (-1, 0, 1)
    assert rep["V_lgt"]["sign"] == 1
    assert "perturbation" not in A.selectivity_report(four_models, None, K=4)["V_ph"]


def test_simulate_model_matches_reference(baseline, small_data):
    manual = revised(baseline, baseline["gamma_Phy"])
    traj = A.simulate_model(manual, small_data.env, small_data.columns, small_data.state0)
    assert traj.shape == (small_data.n_rows,)
    assert np.all(np.isfinite(traj)) and np.all(traj >= 0)
