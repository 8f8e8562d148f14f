import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wws import plant
from wws.integrators import IntegratorConfig
from wws.plant import (
    DivergenceError,
    PlantModel,
    jacobian_x,
    output,
    read_trajectory_csv,
    simulate,
    step,
    vector_field,
    write_trajectory_csv,
)

LSODA = IntegratorConfig(method="lsoda", atol=1e-10, rtol=1e-10)
TRAP = IntegratorConfig(method="trapezoid", atol=1e-10)

# the published nominal coefficient values, restated independently here so a
# data-file regression cannot go unnoticed
NOMINAL_COEFFS = (
    -9.8e-2, 4.0e-2, 9.8e-2, 3.8, -2.4e2, 2.4e2, 3.0e-2, -3.0e3, 1.1, -1.7e-3,
    1.7e-3, -6.0e-6, 6.0e-6, -3.0e-6, 3.0e-6, 3.0e3, 1.1, -2.0e3, 1.1, 1.7e-3,
    -3.4e-3, 1.7e-3, 6.0e-6, -6.0e-6, -6.0e-6, 6.0e-6, 3.0e-6, -6.0e-6, 3.0e-6,
    2.0e3, 1.1, -3.0e3, 1.7e-3, -1.7e-3, 6.0e-6, -6.0e-6, 3.0e-6, -3.0e-6,
    3.0e3, 3.8, -2.4e2, 2.4e2,
)

# regression anchor for step(ones, 0, 0, 60) with the default integrator,
# confirmed by substep halving (see test_rk45_anchor_and_substep_halving)
RK45_ANCHOR = np.array([
    2.795251853426e-03, 4.427623380804e-05, 4.427768914233e-10,
    2.435392728227e-13, 8.930065052291e-17, 1.414504555973e-18,
])


def test_nominal_coefficients_bit_equal(nominal_model):
    assert nominal_model.a == NOMINAL_COEFFS
    assert nominal_model.output_index == 5


def test_vector_field_zero_state(nominal_model):
    assert np.array_equal(vector_field(nominal_model, np.zeros(6), 0.0, 0.0),
                          np.zeros(6))


def test_vector_field_all_ones(nominal_model):
    # hand sums of the table rows at the all-ones point
    expected = np.array([-0.058, -236.2, -2998.87, -1997.8, -2998.9, -236.2])
    got = vector_field(nominal_model, np.ones(6), 0.0, 0.0)
    assert np.allclose(got, expected, rtol=1e-12, atol=1e-12)


def test_vector_field_input_enters_first_component_only(nominal_model):
    base = vector_field(nominal_model, np.ones(6), 0.0, 0.0)
    with_u = vector_field(nominal_model, np.ones(6), 1.0, 0.0)
    assert with_u[0] == pytest.approx(0.04, abs=1e-15)
    assert np.array_equal(with_u[1:], base[1:])


def test_vector_field_rejects_non_finite(nominal_model):
    with pytest.raises(ValueError, match="non-finite state"):
        vector_field(nominal_model, [np.nan, 0, 0, 0, 0, 0], 0.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-40, 80), min_size=6, max_size=6),
       st.floats(0, 26.5), st.floats(-20, 40))
def test_vector_field_linear_in_u_and_w(x, u, w):
    model = PlantModel.nominal()
    x = np.array(x)
    f00 = vector_field(model, x, 0.0, 0.0)
    fu = vector_field(model, x, 1.0, 0.0) - f00
    fw = vector_field(model, x, 0.0, 1.0) - f00
    combined = f00 + u * fu + w * fw
    direct = vector_field(model, x, u, w)
    assert np.allclose(direct, combined, rtol=1e-9, atol=1e-9)


def test_jacobian_matches_central_differences(nominal_model):
    rng = np.random.default_rng(11)
    delta = 1e-5
    for _ in range(10):
        x = rng.uniform(5.0, 45.0, size=6)
        J = jacobian_x(nominal_model, x)
        Jfd = np.zeros((6, 6))
        for j in range(6):
            xp, xm = x.copy(), x.copy()
            xp[j] += delta
            xm[j] -= delta
            Jfd[:, j] = (vector_field(nominal_model, xp, 3.0, 10.0)
                         - vector_field(nominal_model, xm, 3.0, 10.0)) / (2 * delta)
        scale = max(1.0, np.max(np.abs(Jfd)))
        assert np.max(np.abs(J - Jfd)) / scale < 1e-6


def test_step_rejects_empty_interval(nominal_model):
    with pytest.raises(ValueError, match="positive"):
        step(nominal_model, np.ones(6), 0.0, 0.0, 0.0)


@pytest.mark.slow
def test_rk45_anchor_and_substep_halving(nominal_model):
    full = step(nominal_model, np.ones(6), 0.0, 0.0, 60.0)
    half = step(nominal_model, np.ones(6), 0.0, 0.0, 60.0,
                IntegratorConfig(max_substep=1e-4))
    assert np.max(np.abs(full - half)) < 1e-6
    assert np.allclose(full, RK45_ANCHOR, atol=1e-9)


@pytest.mark.slow
def test_rk45_substep_halving_at_operating_conditions(nominal_model):
    x = np.full(6, 15.0)
    full = step(nominal_model, x, 24.0, 10.0, 6.0)
    half = step(nominal_model, x, 24.0, 10.0, 6.0, IntegratorConfig(max_substep=1e-4))
    assert np.max(np.abs(full - half)) < 1e-6


def test_implicit_engines_agree_with_rk45_anchor(nominal_model):
    trap = step(nominal_model, np.ones(6), 0.0, 0.0, 60.0, TRAP)
    lsoda = step(nominal_model, np.ones(6), 0.0, 0.0, 60.0, LSODA)
    assert np.max(np.abs(trap - RK45_ANCHOR)) < 5e-8
    assert np.max(np.abs(lsoda - RK45_ANCHOR)) < 5e-8


def test_step_holds_equilibrium(nominal_model):
    from wws.predictor import find_equilibrium
    rest = simulate(nominal_model, np.full(6, 10.0), [12.0] * 50, [10.0] * 50,
                    60.0, LSODA)[-1]
    eq = find_equilibrium(nominal_model, 10.0, output(rest), x_guess=rest,
                          u_guess=12.0)
    after = step(nominal_model, eq.x, eq.u, 10.0, 60.0, LSODA)
    assert np.max(np.abs(after - eq.x)) < 1e-6


def test_simulate_single_step_equals_step(nominal_model):
    x0 = np.full(6, 12.0)
    via_sim = simulate(nominal_model, x0, [5.0], [10.0], 60.0, LSODA)
    direct = step(nominal_model, x0, 5.0, 10.0, 60.0, LSODA)
    assert np.array_equal(via_sim[1], direct)
    assert np.array_equal(via_sim[0], x0)


def test_simulate_chaining_is_exact(nominal_model):
    x0 = np.full(6, 12.0)
    u = [5.0, 6, 7, 8, 9, 10, 11, 12, 13, 14]
    w = [10.0] * 10
    whole = simulate(nominal_model, x0, u, w, 60.0, LSODA)
    first = simulate(nominal_model, x0, u[:5], w[:5], 60.0, LSODA)
    second = simulate(nominal_model, first[-1], u[5:], w[5:], 60.0, LSODA)
    assert np.array_equal(whole, np.vstack([first, second[1:]]))


def test_simulate_constant_at_equilibrium(nominal_model):
    from wws.predictor import find_equilibrium
    rest = simulate(nominal_model, np.full(6, 10.0), [12.0] * 50, [10.0] * 50,
                    60.0, LSODA)[-1]
    eq = find_equilibrium(nominal_model, 10.0, output(rest), x_guess=rest,
                          u_guess=12.0)
    traj = simulate(nominal_model, eq.x, [eq.u] * 10, [10.0] * 10, 60.0, LSODA)
    assert np.max(np.abs(traj - eq.x[None, :])) < 1e-5


def test_simulate_length_mismatch(nominal_model):
    with pytest.raises(ValueError, match="equal length"):
        simulate(nominal_model, np.ones(6), [1.0, 2.0], [10.0], 60.0, LSODA)


def test_divergence_is_flagged_with_step_index(nominal_model):
    # an ambient excursion far above the physical band drives the pipe
    # states out of range within the third hold interval
    with pytest.raises(DivergenceError) as err:
        simulate(nominal_model, np.full(6, 15.0), [0.0] * 5, [400.0] * 5,
                 60.0, LSODA)
    assert err.value.step_index == 0
    assert "step 0" in str(err.value)


def test_determinism_bit_identical(nominal_model):
    for config in (LSODA, TRAP, IntegratorConfig(max_substep=2e-2)):
        a = step(nominal_model, np.full(6, 14.0), 8.0, 10.0, 0.5, config)
        b = step(nominal_model, np.full(6, 14.0), 8.0, 10.0, 0.5, config)
        assert np.array_equal(a, b)


def test_output_projection():
    assert output(np.array([1.0, 2, 3, 4, 5, 6])) == 5.0
    assert output(np.zeros(6)) == 0.0
    x = np.zeros(6)
    x[4] = 40.0
    assert output(x) == 40.0


def test_plant_json_roundtrip(tmp_path, nominal_model):
    path = tmp_path / "plant.json"
    nominal_model.to_json(path)
    again = PlantModel.from_json(path)
    assert again == nominal_model
    doc = json.loads(path.read_text())
    assert len(doc["a"]) == 42 and doc["output_index"] == 5


def test_plant_validation():
    with pytest.raises(ValueError, match="42"):
        PlantModel(a=(1.0,) * 41)
    with pytest.raises(ValueError, match="output_index"):
        PlantModel(a=(1.0,) * 42, output_index=7)
    with pytest.raises(ValueError, match="finite"):
        PlantModel(a=(float("nan"),) + (1.0,) * 41)


def test_trajectory_csv_roundtrip(tmp_path, demo_model):
    states = simulate(demo_model, np.full(6, 15.0), [22.0, 23.0], [10.0] * 2,
                      60.0, LSODA)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, 60.0, states, [22.0, 23.0], [10.0, 10.0])
    cols = read_trajectory_csv(path)
    assert list(cols) == plant.TRAJECTORY_HEADER
    assert np.array_equal(cols["x5"], states[:, 4])
    assert np.array_equal(cols["y"], states[:, 4])
    assert cols["t"][2] == 120.0
    assert np.isnan(cols["u"][2])
