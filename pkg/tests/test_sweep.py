import dataclasses
import math

import numpy as np
import pytest

from gustrom.exceptions import ConfigError, ContractError
from gustrom.gust import DiscreteGustSpec
from gustrom.model import duffing_model
from gustrom.nmor import BasisSelection, load_rom, save_rom
from gustrom.sweep import (SweepSpec, VelocityLaw, benchmark,
                           design_gust_velocity, prepare_rom, ranked_sites,
                           read_sweep_csv, run_search)

SMALL = SweepSpec(Hg_min=1.0, Hg_max=100.0, n_sites=24, rom_modes=6,
                  metric_channels=("xi", "alpha"), batch_size=5,
                  basis=BasisSelection(origin_radius=0.15, light_damping=0.25,
                                       pair_order="frequency",
                                       skip_repeated=True),
                  step=0.02, min_margin=150.0)


def test_constant_law():
    law = VelocityLaw(fraction=0.14, U_inf=2.0)
    assert design_gust_velocity(law, 3.0) == pytest.approx(0.28)


def test_power_law_examples():
    law = VelocityLaw(kind="power", U_ref=2.0, H_ref=10.0)
    assert design_gust_velocity(law, 10.0) == 2.0
    assert design_gust_velocity(law, 640.0) == pytest.approx(4.0, rel=1e-15)
    clipped = VelocityLaw(kind="power", U_ref=2.0, H_ref=10.0, w_max=3.0)
    assert design_gust_velocity(clipped, 640.0) == 3.0


def test_unknown_law_is_config_error():
    with pytest.raises(ConfigError) as info:
        VelocityLaw(kind="tabulated")
    assert info.value.field == "velocity_law"


@pytest.mark.parametrize("kw", [{"Hg_min": 0.0}, {"Hg_min": 5.0, "Hg_max": 1.0},
                                {"n_sites": 1}, {"spacing": "random"},
                                {"rom_order": 4}, {"validate_top_k": 0}])
def test_invalid_sweep_settings(kw):
    with pytest.raises(ConfigError):
        SweepSpec(**kw)


def test_grid_spacing():
    log = SweepSpec(Hg_min=1.0, Hg_max=100.0, n_sites=3).grid()
    assert np.allclose(log, [1.0, 10.0, 100.0])
    lin = SweepSpec(Hg_min=1.0, Hg_max=3.0, n_sites=3, spacing="linear").grid()
    assert np.array_equal(lin, [1.0, 2.0, 3.0])


def test_ranking_skips_divergent_and_breaks_ties_by_smaller_H():
    values = np.array([1.0, 3.0, np.nan, 3.0, 2.0])
    H = np.array([1.0, 4.0, 5.0, 2.0, 3.0])
    assert ranked_sites(values, H) == [3, 1, 4, 0]


@dataclasses.dataclass(frozen=True)
class _FirstSiteCalm(SweepSpec):
    def gust(self, H_g):
        g = super().gust(H_g)
        if H_g == self.Hg_min:
            return dataclasses.replace(g, w0=0.0)
        return g


def test_zero_velocity_site_never_wins(aerofoil):
    spec = _FirstSiteCalm(**{f.name: getattr(SMALL, f.name)
                             for f in dataclasses.fields(SMALL)})
    spec = dataclasses.replace(spec, n_sites=2, Hg_min=20.0, Hg_max=40.0)
    res = run_search(aerofoil, spec)
    assert res.records[0].metrics.peak("xi") == 0.0
    assert res.worst_index == 1


@pytest.fixture(scope="module")
def small_result(aerofoil):
    return run_search(aerofoil, dataclasses.replace(SMALL, validate_top_k=2))


def test_csv_certifies_argmax(tmp_path, small_result):
    small_result.write_csv(tmp_path / "sweep.csv")
    rows = read_sweep_csv(tmp_path / "sweep.csv")
    assert len(rows) == SMALL.n_sites
    best = max(rows, key=lambda r: (r["peak_xi"], -r["H_g"]))
    assert best["index"] == small_result.worst_index
    assert best["H_g"] == small_result.worst_H


def test_validation_file_is_consistent(tmp_path, small_result):
    small_result.write_validation_csv(tmp_path / "v.csv")
    import csv
    rows = list(csv.DictReader(open(tmp_path / "v.csv")))
    assert len(rows) == 2
    for r in rows:
        rom, fom = float(r["rom_value"]), float(r["fom_value"])
        assert float(r["rel_error"]) == abs(rom - fom) / abs(fom)
        assert float(r["rel_error"]) <= 0.05


def test_summary_names_worst_case(small_result):
    text = small_result.summary()
    assert f"H_g* = {small_result.worst_H!r}" in text
    assert "divergent sites: 0" in text


def test_worker_count_does_not_change_results(aerofoil, small_result):
    spec = dataclasses.replace(SMALL, validate_top_k=2)
    rom, _ = prepare_rom(aerofoil, spec)
    again = run_search(aerofoil, spec, rom=rom, workers=3)
    assert again.comparable() == small_result.comparable()


def test_saved_rom_reproduces_sweep(tmp_path, aerofoil, small_result):
    rom, secs = prepare_rom(aerofoil, SMALL)
    save_rom(rom, tmp_path / "rom.bin", build_seconds=secs)
    res = run_search(aerofoil, dataclasses.replace(SMALL, validate_top_k=2),
                     rom=load_rom(tmp_path / "rom.bin"), rom_build_time=secs)
    assert res.comparable() == small_result.comparable()


def test_prebuilt_rom_of_lower_order_is_refused(aerofoil):
    rom, _ = prepare_rom(aerofoil, dataclasses.replace(SMALL, rom_order=1))
    with pytest.raises(ContractError):
        run_search(aerofoil, SMALL, rom=rom)


def test_build_cost_is_counted_once(small_result):
    r = small_result
    expected = r.fom_case_time * len(r.records) / (r.rom_build_time + r.total_rom_time)
    assert r.speedup == expected


def test_benchmark_cost_model(aerofoil, small_result):
    rep = benchmark(aerofoil, SMALL, fom_runs=2, result=small_result)
    assert rep.rom_total_time == small_result.rom_build_time + small_result.total_rom_time
    assert rep.extrapolated_fom_time == rep.fom_seconds_per_step * rep.total_site_steps
    assert rep.ratio == rep.extrapolated_fom_time / rep.rom_total_time
    doubled = dataclasses.replace(SMALL, n_sites=2 * SMALL.n_sites)
    rep2 = benchmark(aerofoil, doubled, fom_runs=2, result=small_result)
    assert rep2.total_site_steps / rep.total_site_steps == pytest.approx(2.0, rel=0.1)


def test_divergent_sites_are_flagged_and_excluded(tmp_path):
    # a softening oscillator escapes its well for the longer, stronger gusts
    model = duffing_model(stiffness=1.0, cubic=-1.0, damping=0.2)
    spec = SweepSpec(Hg_min=0.5, Hg_max=20.0, n_sites=12, metric_channels=("x",),
                     rom_modes=2, rom_order=3, step=0.01, min_margin=40.0,
                     velocity_law=VelocityLaw(kind="power", U_ref=0.4, H_ref=1.0,
                                              exponent=0.5))
    res = run_search(model, spec)
    bad = res.diverged_indices
    assert bad and len(bad) < spec.n_sites
    assert res.worst_index not in bad
    assert math.isnan(res.metric_values[bad[0]])
    assert f"divergent sites: {len(bad)}" in res.summary()
    res.write_csv(tmp_path / "s.csv")
    rows = read_sweep_csv(tmp_path / "s.csv")
    assert [r["index"] for r in rows if r["diverged"] == 1] == bad
