import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gustrom.exceptions import ContractError, DivergenceError
from gustrom.gust import DiscreteGustSpec, GustSignal
from gustrom.model import duffing_model, linear_model
from gustrom.nmor import BasisSelection, build_rom
from gustrom.sim import (TimeHistory, extract_metrics, integrate,
                         integrate_rom_batch, n_steps_for, richardson_ratio,
                         simulation_duration)
from test_nmor import SHIPPED, random_stable_matrix

WORST = DiscreteGustSpec(0.14, 84.70868266557402)


@pytest.fixture(scope="module")
def rom3(aerofoil):
    return build_rom(aerofoil, np.zeros(14), 6, order=3, criteria=SHIPPED)


def test_duration_rule():
    g = DiscreteGustSpec(0.1, 20.0, t0=5.0)
    assert simulation_duration(g, 5.0) == 5.0 + 20.0 + 100.0
    assert simulation_duration(g, 5.0, min_margin=150.0) == 5.0 + 20.0 + 150.0


def test_step_count():
    assert n_steps_for(0.01, 1.0) == 100
    assert n_steps_for(0.3, 1.0) == 4
    with pytest.raises(ContractError):
        n_steps_for(0.0, 1.0)


def test_zero_gust_from_equilibrium_is_constant(aerofoil, rom3):
    for system in (aerofoil, rom3):
        h = integrate(system, DiscreteGustSpec(0.0, 10.0), 0.05, 20.0)
        assert np.all(h.states == h.states[0])


def test_linear_full_basis_rom_matches_full_model():
    rng = np.random.default_rng(11)
    A = random_stable_matrix(rng, 14)
    model = linear_model(A, rng.normal(size=(14, 1)))
    rom = build_rom(model, np.zeros(14), 14, order=1)
    g = DiscreteGustSpec(0.5, 15.0)
    fom = integrate(model, g, 0.01, 60.0).states
    red = integrate(rom, g, 0.01, 60.0)
    labels = red.state_labels
    err = np.linalg.norm(red.channels(labels) - fom) / np.linalg.norm(fom)
    assert err <= 1e-8


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0))
def test_linear_rom_response_scales_with_gust(c):
    rng = np.random.default_rng(5)
    model = linear_model(random_stable_matrix(rng, 4), rng.normal(size=(4, 1)))
    rom = build_rom(model, np.zeros(4), 4)
    a = integrate(rom, DiscreteGustSpec(0.2, 8.0), 0.05, 30.0).states
    b = integrate(rom, DiscreteGustSpec(0.2 * c, 8.0), 0.05, 30.0).states
    assert np.allclose(b, c * a, rtol=1e-12, atol=1e-15 * np.max(np.abs(b)))


def test_rk4_self_convergence_on_worst_case(aerofoil):
    ratio, err = richardson_ratio(aerofoil, WORST, 0.04, 510.0, "xi")
    assert ratio == pytest.approx(16.0, rel=0.3)
    assert err <= 1e-10


def test_metrics_of_zero_history(rom3):
    h = integrate(rom3, None, 0.1, 5.0)
    m = extract_metrics(h, ["xi", "alpha"])
    assert m.peak_abs == (0.0, 0.0)
    assert m.time_of_peak == (0.0, 0.0)


def test_metrics_of_sinusoid_history():
    model = linear_model(np.array([[0.0, 1.0], [-1.0, 0.0]]), labels=("x", "v"))
    dt = 0.01
    t = np.arange(0, 20.0 + dt / 2, dt)
    states = np.column_stack([2.0 * np.sin(t), 2.0 * np.cos(t)])
    h = TimeHistory(t, states, model, dt)
    m = extract_metrics(h, ["x"])
    assert 2.0 * np.cos(dt / 2) <= m.peak("x") <= 2.0
    assert m.time_of_peak[0] == pytest.approx(np.pi / 2, abs=dt)


def test_ties_go_to_earliest_time():
    model = linear_model(np.zeros((1, 1)), labels=("x",))
    t = np.arange(5.0)
    h = TimeHistory(t, np.array([[0.0], [3.0], [-3.0], [3.0], [1.0]]), model, 1.0)
    assert extract_metrics(h, ["x"]).time_of_peak == (1.0,)


def test_metrics_agree_with_brute_force_scan(aerofoil):
    h = integrate(aerofoil, DiscreteGustSpec(0.14, 55.0), 0.02, 300.0)
    m = extract_metrics(h, ["xi", "alpha", "delta"])
    for j, lab in enumerate(["xi", "alpha", "delta"]):
        col = h.states[:, j]
        best, when = 0.0, 0.0
        for k in range(col.size):
            if abs(col[k]) > best:
                best, when = abs(col[k]), h.times[k]
        assert m.peak_abs[j] == best
        assert m.time_of_peak[j] == when


def test_unknown_channel_rejected(rom3):
    h = integrate(rom3, None, 0.1, 1.0)
    with pytest.raises(ContractError):
        extract_metrics(h, ["lift"])


def test_histories_are_deterministic(aerofoil, rom3):
    g = DiscreteGustSpec(0.14, 40.0)
    for system in (aerofoil, rom3):
        a = integrate(system, g, 0.02, 150.0)
        b = integrate(system, g, 0.02, 150.0)
        assert np.array_equal(a.states, b.states)


def test_rom_is_faster_than_full_model(aerofoil, rom3):
    g = DiscreteGustSpec(0.14, 55.0)
    fom = min(integrate(aerofoil, g, 0.01, 200.0).wall_clock for _ in range(3))
    rom = min(integrate(rom3, g, 0.01, 200.0).wall_clock for _ in range(3))
    assert rom < fom


def test_batch_agrees_with_scalar_integration(rom3):
    gusts = [DiscreteGustSpec(0.14, H) for H in (0.5, 7.0, 55.0, 90.0)]
    durations = [simulation_duration(g, 5.0, 150.0) for g in gusts]
    batch = integrate_rom_batch(rom3, gusts, 0.01, durations, ["xi", "alpha"])
    for g, d, m in zip(gusts, durations, batch.metrics):
        ref = extract_metrics(integrate(rom3, g, 0.01, d), ["xi", "alpha"])
        assert np.allclose(m.peak_abs, ref.peak_abs, rtol=1e-10, atol=0)
        assert m.time_of_peak == ref.time_of_peak
        assert m.settled == ref.settled


def test_divergence_reports_time_and_last_state():
    # softening Duffing pushed over its potential barrier escapes to infinity
    model = duffing_model(stiffness=1.0, cubic=-1.0)
    with pytest.raises(DivergenceError) as info:
        integrate(model, DiscreteGustSpec(2.0, 5.0), 0.01, 50.0)
    err = info.value
    assert 0 < err.time <= 50.0
    assert np.all(np.isfinite(err.last_state))


def test_batch_flags_divergent_rows():
    model = duffing_model(stiffness=1.0, cubic=-1.0, damping=0.2)
    rom = build_rom(model, np.zeros(2), 2, order=3)
    gusts = [DiscreteGustSpec(0.05, 5.0), DiscreteGustSpec(3.0, 5.0)]
    out = integrate_rom_batch(rom, gusts, 0.01, [60.0, 60.0], ["x"])
    assert out.metrics[0] is not None and out.divergence[0] is None
    assert out.metrics[1] is None and out.divergence[1] > 0


def test_signal_gust_drives_model(rom3):
    t = np.linspace(0.0, 10.0, 11)
    sig = GustSignal(t, np.full(11, 0.01))
    h = integrate(rom3, sig, 0.05, 20.0)
    assert extract_metrics(h, ["xi"]).peak("xi") > 0


def test_table_export_round_trip(tmp_path, rom3):
    h = integrate(rom3, DiscreteGustSpec(0.14, 10.0), 0.1, 20.0)
    h.to_table(tmp_path / "h.csv", ["xi", "alpha"])
    data = np.loadtxt(tmp_path / "h.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 0], h.times)
    assert np.array_equal(data[:, 1:], h.channels(["xi", "alpha"]))
