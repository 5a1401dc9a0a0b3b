"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line (visible with ``-s``); the
same lines are collected into the terminal summary by ``conftest.py``.
"""

import dataclasses
import warnings

import numpy as np
import pytest
from scipy import integrate as quad_int
from scipy import signal as sps

from gustrom.aerofoil import AerofoilParams, flutter_trace, max_real_eigenvalue
from gustrom.config import default_config
from gustrom.gust import (FILTER_VALID_BAND, DiscreteGustSpec, TurbulenceSpec,
                          one_minus_cosine, von_karman_psd,
                          von_karman_realization)
from gustrom.model import duffing_model, linear_model, quadratic_model
from gustrom.nmor import (build_rom, compute_bilinear_coefficients,
                          compute_jacobian, compute_trilinear_coefficients,
                          load_rom, save_rom, select_basis)
from gustrom.sim import extract_metrics, integrate
from gustrom.sweep import benchmark, fom_subset_argmax, prepare_rom, run_search
from test_nmor import random_stable_matrix

# reference values quoted for the published parameter set; they are only
# reported, because the shipped structural constants are a placeholder set
PUBLISHED_FLUTTER_SPEED = 6.37
PUBLISHED_WORST_DURATION = 55.0


def report(num, ok, detail):
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


@pytest.fixture(scope="module")
def config():
    return default_config()


@pytest.fixture(scope="module")
def full_sweep(aerofoil, config):
    return run_search(aerofoil, config.sweep, workers=1)


def test_criterion_01_gust_formula():
    g = DiscreteGustSpec(w0=0.14, H_g=55.0, t0=2.0, U_inf=1.0)
    T = g.duration
    landmarks = [(2.0, 0.0), (2.0 + T, 0.0), (2.0 + T / 2, 0.14),
                 (2.0 + T / 4, 0.07)]
    worst = max(abs(one_minus_cosine(g, t) - v) for t, v in landmarks)
    area, _ = quad_int.quad(lambda t: one_minus_cosine(g, t), 2.0, 2.0 + T,
                            epsabs=0, epsrel=1e-13)
    rel = abs(area - 0.14 * 55.0 / 2.0) / (0.14 * 55.0 / 2.0)
    report(1, worst <= 1e-12 and rel <= 1e-8,
           f"landmark error {worst:.1e}, impulse error {rel:.1e}")


def test_criterion_02_von_karman_spectrum():
    spec = TurbulenceSpec(sigma_w=1.0, L_w=1.0, U_inf=1.0, seed=2024,
                          sample_rate=100.0, duration=40000.0)
    sig = von_karman_realization(spec)
    f, p = sps.welch(sig.values, fs=spec.sample_rate, nperseg=2**14)
    Om = 2 * np.pi * f / spec.U_inf
    band = (Om * spec.L_w >= 0.05) & (Om * spec.L_w <= FILTER_VALID_BAND)
    db = 10 * np.log10(p[band] * spec.U_inf / (2 * np.pi)
                       / von_karman_psd(spec, Om[band]))
    var_err = abs(np.var(sig.values) - 1.0)
    tail = np.geomspace(1e3, 1e4, 50)
    slope = np.polyfit(np.log(tail), np.log(von_karman_psd(spec, tail)), 1)[0]
    ok = np.max(np.abs(db)) <= 2.0 and var_err <= 0.03 and abs(slope + 5 / 3) <= 0.05
    report(2, ok, f"max |dB| {np.max(np.abs(db)):.2f}, variance error "
           f"{var_err:.3%}, tail slope {slope:.4f}")


def test_criterion_03_linear_reduction_is_exact():
    rng = np.random.default_rng(314)
    A = random_stable_matrix(rng, 14)
    model = linear_model(A, rng.normal(size=(14, 1)))
    rom = build_rom(model, np.zeros(14), 14, order=3)
    g = DiscreteGustSpec(0.3, 12.0)
    fom = integrate(model, g, 0.01, 80.0).states
    red = integrate(rom.with_order(1), g, 0.01, 80.0)
    err = np.linalg.norm(red.channels(red.state_labels) - fom) / np.linalg.norm(fom)
    tensors = max(np.max(np.abs(rom.D)), np.max(np.abs(rom.E)))
    report(3, err <= 1e-8 and tensors <= 1e-6,
           f"relative L2 error {err:.1e}, max |D|,|E| {tensors:.1e}")


def test_criterion_04_tensor_oracles():
    A = np.array([[-0.1, 1.0, 0.0], [-1.0, -0.1, 0.0], [0.5, 0.0, -2.0]])
    basis = select_basis(A, 3)
    D = compute_bilinear_coefficients(quadratic_model(A), basis, np.zeros(3))
    Phi, Psi = basis.Phi, basis.Psi
    d_err = np.max(np.abs(D - np.einsum("k,i,j->kij", Psi[0].conj(), Phi[0], Phi[0])))

    g = 0.7
    duff = duffing_model(cubic=g, damping=0.1)
    basis = select_basis(compute_jacobian(duff, np.zeros(2)), 2)
    E = compute_trilinear_coefficients(duff, basis, np.zeros(2))
    Phi, Psi = basis.Phi, basis.Psi
    e_err = np.max(np.abs(E + g * np.einsum("k,i,j,l->kijl", Psi[1].conj(),
                                            Phi[0], Phi[0], Phi[0])))
    report(4, d_err <= 1e-4 and e_err <= 1e-4,
           f"D error {d_err:.1e}, E error {e_err:.1e}")


def test_criterion_05_state_budget_and_symmetry(aerofoil):
    rng = np.random.default_rng(5)
    sym = 0.0
    for _ in range(100):
        w = rng.normal(size=14)
        r = aerofoil.fun(w, np.zeros(1), np.zeros(0))
        sym = max(sym, np.max(np.abs(r + aerofoil.fun(-w, np.zeros(1), np.zeros(0)))))
    report(5, aerofoil.n_states == 14 and sym <= 1e-12,
           f"{aerofoil.n_states} states, max |R(w)+R(-w)| {sym:.1e}")


def test_criterion_06_flutter_boundary(config):
    trace = flutter_trace(config.params, config.flutter.grid(), xtol=1e-4)
    ok = trace.has_flutter
    if ok:
        lo, hi = trace.bracket
        ok = (hi - lo <= 1e-4
              and max_real_eigenvalue(config.params.with_(U_star=lo)) < 0
              and max_real_eigenvalue(config.params.with_(U_star=hi)) >= 0)
        dev = trace.flutter_speed / PUBLISHED_FLUTTER_SPEED - 1
        print(f"criterion 6 (conditional, not asserted): placeholder set gives "
              f"U_L* = {trace.flutter_speed:.4f}, {dev:+.1%} from "
              f"{PUBLISHED_FLUTTER_SPEED}")
    report(6, ok, f"crossing {trace.flutter_speed}, bracket {trace.bracket}")


def test_criterion_07_worst_case_search(aerofoil, config, full_sweep):
    res = full_sweep
    n = len(res.records)
    interior = 0 < res.worst_index < n - 1
    subset = sorted(set(np.linspace(0, n - 1, 9).round().astype(int))
                    | {res.worst_index})
    fom_best, _ = fom_subset_argmax(aerofoil, config.sweep, subset)
    errors = [v.rel_error for v in res.validation]
    ok = (n == 1000 and interior and fom_best == res.worst_index
          and max(errors) <= 0.05)
    print(f"criterion 7 (conditional, not asserted): worst H_g* = "
          f"{res.worst_H:.2f} semichords vs {PUBLISHED_WORST_DURATION} +- 15%")
    report(7, ok, f"worst index {res.worst_index}, FOM subset argmax "
           f"{fom_best}, top-{len(errors)} errors {max(errors):.2%}")


def test_criterion_08_order_hierarchy(aerofoil, config, full_sweep):
    spec = config.sweep
    rom, _ = prepare_rom(aerofoil, spec)
    g = spec.gust(full_sweep.worst_H)
    dur = spec.duration(g)
    fom = extract_metrics(integrate(aerofoil, g, spec.step, dur), ["xi"]).peak("xi")
    err = {}
    for order in (1, 2, 3):
        h = integrate(rom.with_order(order), g, spec.step, dur)
        err[order] = abs(extract_metrics(h, ["xi"]).peak("xi") - fom) / fom
    # the quadratic tensor is pure finite-difference noise for an odd system
    ok = err[3] < err[1] and abs(err[2] - err[1]) <= 1e-6
    report(8, ok, ", ".join(f"order {k}: {v:.3%}" for k, v in err.items()))


def test_criterion_09_speedup(aerofoil, config, full_sweep):
    rep = benchmark(aerofoil, config.sweep, fom_runs=3, result=full_sweep)
    identity = (rep.rom_total_time == full_sweep.rom_build_time
                + full_sweep.total_rom_time
                and rep.extrapolated_fom_time
                == rep.fom_seconds_per_step * rep.total_site_steps)
    report(9, identity and rep.n_sites == 1000 and rep.ratio > 1,
           f"ratio {rep.ratio:.2f} (FOM {rep.extrapolated_fom_time:.0f} s vs "
           f"ROM {rep.rom_total_time:.1f} s)")


def test_criterion_10_determinism_and_round_trip(tmp_path, aerofoil, config):
    spec = dataclasses.replace(config.sweep, n_sites=200, validate_top_k=1)
    first = run_search(aerofoil, spec)
    second = run_search(aerofoil, spec, workers=2)
    rom, secs = prepare_rom(aerofoil, spec)
    save_rom(rom, tmp_path / "rom.bin", build_seconds=secs)
    loaded = run_search(aerofoil, spec, rom=load_rom(tmp_path / "rom.bin"))
    spectrum = TurbulenceSpec(0.1, 10.0, seed=9, duration=500.0)
    turb = [von_karman_realization(spectrum).values for _ in range(2)]
    ok = (first.comparable() == second.comparable() == loaded.comparable()
          and np.array_equal(*turb))
    report(10, ok, "repeat, multi-worker and reloaded-ROM sweeps compared")
