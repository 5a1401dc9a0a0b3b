"""Worst-case discrete-gust search: build a ROM once, sweep gradient
distances with it, confirm the leaders with the full-order model."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigError, ContractError, DivergenceError, SolverError
from .gust import DiscreteGustSpec
from .model import Model, find_equilibrium
from .nmor import BasisSelection, RomModel, build_rom
from .sim import (ResponseMetrics, extract_metrics, integrate,
                  integrate_rom_batch, n_steps_for, simulation_duration)


@dataclass(frozen=True)
class VelocityLaw:
    """Peak gust velocity as a function of gradient distance.

    ``kind="constant"``: ``w0 = fraction * U_inf``.
    ``kind="power"``: ``w0 = U_ref * (H_g / H_ref) ** exponent`` clipped to
    ``[w_min, w_max]``.
    """

    kind: str = "constant"
    fraction: float = 0.14
    U_inf: float = 1.0
    U_ref: float = 1.0
    H_ref: float = 1.0
    exponent: float = 1.0 / 6.0
    w_min: float = 0.0
    w_max: float = math.inf

    def __post_init__(self):
        if self.kind not in ("constant", "power"):
            raise ConfigError(f"unknown velocity law '{self.kind}'",
                              field="velocity_law")
        if self.kind == "power" and not (self.H_ref > 0 and self.U_ref >= 0):
            raise ConfigError("power law needs H_ref > 0 and U_ref >= 0",
                              field="H_ref")
        if self.w_min > self.w_max:
            raise ConfigError("w_min exceeds w_max", field="w_min")


def design_gust_velocity(law: VelocityLaw, H_g: float) -> float:
    """Design peak gust velocity for gradient distance ``H_g``."""
    if not H_g > 0:
        raise ContractError("gradient distance must be positive")
    if law.kind == "constant":
        return law.fraction * law.U_inf
    if law.kind == "power":
        w = law.U_ref * (H_g / law.H_ref) ** law.exponent
        return float(min(max(w, law.w_min), law.w_max))
    raise ConfigError(f"unknown velocity law '{law.kind}'", field="velocity_law")


@dataclass(frozen=True)
class SweepSpec:
    """Search range, metric, ROM and integration settings.

    The search metric is the peak of the first entry of ``metric_channels``.
    Sites are integrated in fixed batches of ``batch_size`` consecutive
    indices; the batch composition never depends on the worker count.
    """

    Hg_min: float = 0.1
    Hg_max: float = 100.0
    n_sites: int = 1000
    spacing: str = "log"
    velocity_law: VelocityLaw = field(default_factory=VelocityLaw)
    metric_channels: tuple = ("xi",)
    rom_order: int = 3
    rom_modes: int = 4
    validate_top_k: int = 1
    basis: BasisSelection = field(default_factory=BasisSelection)
    step: float = 0.01
    decay_factor: float = 5.0
    min_margin: float = 0.0
    t0: float = 0.0
    batch_size: int = 64

    def __post_init__(self):
        if not (0 < self.Hg_min < self.Hg_max):
            raise ConfigError("need 0 < Hg_min < Hg_max", field="Hg_min")
        if self.n_sites < 2:
            raise ConfigError("n_sites must be at least 2", field="n_sites")
        if self.spacing not in ("log", "linear"):
            raise ConfigError("spacing must be 'log' or 'linear'",
                              field="spacing")
        if self.validate_top_k < 1:
            raise ConfigError("validate_top_k must be at least 1",
                              field="validate_top_k")
        if self.rom_order not in (1, 2, 3):
            raise ConfigError("rom_order must be 1, 2 or 3", field="rom_order")
        if self.rom_modes < 1:
            raise ConfigError("rom_modes must be positive", field="rom_modes")
        if not self.metric_channels:
            raise ConfigError("at least one metric channel is required",
                              field="metric_channels")
        if not self.step > 0:
            raise ConfigError("step must be positive", field="step")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive", field="batch_size")
        object.__setattr__(self, "metric_channels", tuple(self.metric_channels))

    @property
    def metric(self) -> str:
        return self.metric_channels[0]

    def grid(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.Hg_min, self.Hg_max, self.n_sites)
        return np.linspace(self.Hg_min, self.Hg_max, self.n_sites)

    def gust(self, H_g: float) -> DiscreteGustSpec:
        w0 = design_gust_velocity(self.velocity_law, H_g)
        return DiscreteGustSpec(w0=w0, H_g=float(H_g), t0=self.t0,
                                U_inf=self.velocity_law.U_inf)

    def duration(self, gust: DiscreteGustSpec) -> float:
        return simulation_duration(gust, self.decay_factor, self.min_margin)


@dataclass(frozen=True)
class SiteRecord:
    index: int
    H_g: float
    w0: float
    metrics: ResponseMetrics | None
    divergence_time: float | None = None
    wall_clock: float = 0.0

    @property
    def diverged(self) -> bool:
        return self.metrics is None


@dataclass(frozen=True)
class Validation:
    index: int
    H_g: float
    rom_value: float
    fom_value: float
    fom_metrics: ResponseMetrics | None
    wall_clock: float = 0.0

    @property
    def rel_error(self) -> float:
        if self.fom_metrics is None:
            return math.nan
        return abs(self.rom_value - self.fom_value) / abs(self.fom_value)


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    records: tuple
    worst_index: int
    rom_build_time: float
    total_rom_time: float
    validation: tuple
    rom_hash: str = ""
    fom_case_time: float = math.nan

    @property
    def worst_H(self) -> float:
        return self.records[self.worst_index].H_g

    @property
    def metric_values(self) -> np.ndarray:
        return np.array([np.nan if r.diverged else r.metrics.peak(self.spec.metric)
                         for r in self.records])

    @property
    def diverged_indices(self) -> list:
        return [r.index for r in self.records if r.diverged]

    @property
    def speedup(self) -> float:
        """FOM time per case times the site count over the ROM pipeline cost."""
        rom = self.rom_build_time + self.total_rom_time
        return self.fom_case_time * len(self.records) / rom

    def comparable(self) -> dict:
        """Everything except wall-clock measurements."""
        return {
            "sites": [(r.index, r.H_g, r.w0,
                       None if r.diverged else (r.metrics.peak_abs,
                                                r.metrics.time_of_peak,
                                                r.metrics.settled),
                       r.divergence_time) for r in self.records],
            "worst": self.worst_index,
            "validation": [(v.index, v.H_g, v.rom_value, v.fom_value,
                            None if v.fom_metrics is None
                            else v.fom_metrics.peak_abs)
                           for v in self.validation],
            "rom_hash": self.rom_hash,
        }

    def write_csv(self, path):
        chans = self.spec.metric_channels
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "H_g", "w0"]
                       + [f"peak_{c}" for c in chans]
                       + [f"time_{c}" for c in chans]
                       + ["settled", "diverged", "divergence_time",
                          "wall_clock"])
            for r in self.records:
                if r.diverged:
                    vals = ["nan"] * (2 * len(chans)) + ["", 1,
                                                         repr(r.divergence_time)]
                else:
                    m = r.metrics
                    vals = ([repr(v) for v in m.peak_abs]
                            + [repr(v) for v in m.time_of_peak]
                            + [int(m.settled), 0, ""])
                w.writerow([r.index, repr(r.H_g), repr(r.w0)] + vals
                           + [repr(r.wall_clock)])

    def write_validation_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "H_g", "rom_value", "fom_value", "rel_error",
                        "wall_clock"])
            for v in self.validation:
                w.writerow([v.index, repr(v.H_g), repr(v.rom_value),
                            repr(v.fom_value), repr(v.rel_error),
                            repr(v.wall_clock)])

    def summary(self) -> str:
        s = self.spec
        worst = self.records[self.worst_index]
        lines = [
            "worst-case gust search",
            f"sites: {len(self.records)} ({s.spacing} spacing, "
            f"H_g in [{s.Hg_min!r}, {s.Hg_max!r}])",
            f"metric: peak |{s.metric}|",
            f"ROM: m={s.rom_modes}, order={s.rom_order}, hash {self.rom_hash}",
            f"worst site: index {worst.index}, H_g* = {worst.H_g!r}, "
            f"w0 = {worst.w0!r}, peak = {worst.metrics.peak(s.metric)!r} at "
            f"t = {worst.metrics.time_of_peak[0]!r}",
            f"divergent sites: {len(self.diverged_indices)}"
            + (f" {self.diverged_indices}" if self.diverged_indices else ""),
            "full-order validation:",
        ]
        for v in self.validation:
            lines.append(
                f"  index {v.index} H_g={v.H_g!r}: ROM {v.rom_value!r}, "
                f"FOM {v.fom_value!r}, relative error {v.rel_error:.3e}")
        lines += [
            f"ROM build time: {self.rom_build_time:.3f} s",
            f"ROM sweep time: {self.total_rom_time:.3f} s",
            f"FOM time per case: {self.fom_case_time:.3f} s",
            f"speedup (FOM per case x sites / ROM total): {self.speedup:.2f}",
        ]
        return "\n".join(lines) + "\n"


def read_sweep_csv(path) -> list:
    """Rows of ``sweep.csv`` as dicts with floats parsed."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k in ("index", "diverged", "settled"):
                r[k] = int(v) if v != "" else None
            else:
                r[k] = float(v) if v != "" else None
    return rows


def prepare_rom(model: Model, spec: SweepSpec):
    """Step 1: trim, then the one-time ROM construction. Returns
    ``(rom, seconds)``."""
    t = time.perf_counter()
    eq = find_equilibrium(model)
    if not eq.converged:
        raise SolverError(
            f"trim did not converge (residual {eq.residual_norm:.3e})",
            iteration=eq.iterations)
    rom = build_rom(model, eq.w0, spec.rom_modes, order=spec.rom_order,
                    criteria=spec.basis)
    return rom, time.perf_counter() - t


def _argmax_smaller_H(values, H) -> int:
    best = None
    for i, (v, h) in enumerate(zip(values, H)):
        if not np.isfinite(v):
            continue
        if best is None or v > values[best] or (v == values[best] and h < H[best]):
            best = i
    if best is None:
        raise DivergenceError("every site diverged; no worst case exists")
    return best


def ranked_sites(values, H) -> list:
    """Indices by descending metric, ties to the smaller ``H_g``; divergent
    sites excluded."""
    idx = [i for i in range(len(values)) if np.isfinite(values[i])]
    return sorted(idx, key=lambda i: (-values[i], H[i]))


def run_search(model: Model, spec: SweepSpec, rom: RomModel | None = None,
               workers: int = 1, rom_build_time: float | None = None
               ) -> SweepResult:
    """Four-step worst-case search.

    1. trim and build the ROM (skipped when ``rom`` is given),
    2. integrate the ROM at every site and extract metrics,
    3. take the argmax (ties to the smaller ``H_g``, divergent sites
       excluded),
    4. rerun the top ``validate_top_k`` sites with the full-order model.
    """
    from .nmor import content_hash

    if rom is None:
        rom, build = prepare_rom(model, spec)
    else:
        if rom.n_states != model.n_states:
            raise ContractError("ROM was built for a different model size")
        if rom.order < spec.rom_order:
            raise ContractError(
                f"ROM has order {rom.order}, sweep asks for {spec.rom_order}")
        rom = rom.with_order(spec.rom_order) if rom.order > spec.rom_order else rom
        build = 0.0 if rom_build_time is None else rom_build_time
    H = spec.grid()
    gusts = [spec.gust(h) for h in H]
    durations = [spec.duration(g) for g in gusts]
    chunks = [list(range(a, min(a + spec.batch_size, len(H))))
              for a in range(0, len(H), spec.batch_size)]

    def run_chunk(ix):
        return integrate_rom_batch(rom, [gusts[i] for i in ix], spec.step,
                                   [durations[i] for i in ix],
                                   spec.metric_channels)

    t = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_chunk, chunks))
    else:
        outcomes = [run_chunk(ix) for ix in chunks]
    rom_time = time.perf_counter() - t

    records = []
    for ix, out in zip(chunks, outcomes):
        steps = np.array([n_steps_for(spec.step, durations[i]) for i in ix],
                         dtype=float)
        share = out.wall_clock * steps / steps.sum()
        for pos, i in enumerate(ix):
            records.append(SiteRecord(i, float(H[i]), gusts[i].w0,
                                      out.metrics[pos], out.divergence[pos],
                                      float(share[pos])))
    values = np.array([np.nan if r.diverged else r.metrics.peak(spec.metric)
                       for r in records])
    worst = _argmax_smaller_H(values, H)

    validation = []
    for i in ranked_sites(values, H)[:spec.validate_top_k]:
        validation.append(validate_site(model, rom, spec, i, values[i], H))
    # FOM cost per case: measured seconds per step of the validation runs
    # times the mean number of steps per site
    done = [v for v in validation if v.fom_metrics is not None]
    site_steps = [n_steps_for(spec.step, d) for d in durations]
    if done:
        per_step = (sum(v.wall_clock for v in done)
                    / sum(n_steps_for(spec.step, durations[v.index])
                          for v in done))
        fom_case = per_step * float(np.mean(site_steps))
    else:
        fom_case = math.nan
    return SweepResult(spec, tuple(records), worst, build, rom_time,
                       tuple(validation), content_hash(rom), fom_case)


def validate_site(model, rom, spec, i, rom_value, H=None) -> Validation:
    H = spec.grid() if H is None else H
    g = spec.gust(H[i])
    w_start = rom.base_point
    try:
        hist = integrate(model, g, spec.step, spec.duration(g), initial=w_start)
    except DivergenceError:
        return Validation(i, float(H[i]), float(rom_value), math.nan, None)
    m = extract_metrics(hist, spec.metric_channels)
    return Validation(i, float(H[i]), float(rom_value), m.peak(spec.metric), m,
                      hist.wall_clock)


def fom_subset_argmax(model: Model, spec: SweepSpec, indices, w_start=None):
    """Brute-force full-order metric at ``indices``; returns
    ``(argmax index, {index: value})`` with ties to the smaller ``H_g``."""
    H = spec.grid()
    values = {}
    for i in indices:
        g = spec.gust(H[i])
        try:
            hist = integrate(model, g, spec.step, spec.duration(g),
                             initial=w_start)
            values[i] = extract_metrics(hist, (spec.metric,)).peak_abs[0]
        except DivergenceError:
            values[i] = math.nan
    idx = list(indices)
    best = _argmax_smaller_H([values[i] for i in idx], [H[i] for i in idx])
    return idx[best], values


@dataclass(frozen=True)
class BenchmarkReport:
    n_sites: int
    fom_runs: int
    fom_seconds_per_step: float
    total_site_steps: int
    extrapolated_fom_time: float
    rom_build_time: float
    total_rom_time: float

    @property
    def rom_total_time(self) -> float:
        return self.rom_build_time + self.total_rom_time

    @property
    def ratio(self) -> float:
        return self.extrapolated_fom_time / self.rom_total_time

    def text(self) -> str:
        return (
            f"sites: {self.n_sites}\n"
            f"FOM: {self.fom_runs} timed runs, "
            f"{self.fom_seconds_per_step * 1e6:.2f} us/step, "
            f"{self.total_site_steps} steps for the full sweep\n"
            f"extrapolated FOM sweep: {self.extrapolated_fom_time:.2f} s\n"
            f"ROM build: {self.rom_build_time:.3f} s, ROM sweep: "
            f"{self.total_rom_time:.3f} s, total {self.rom_total_time:.3f} s\n"
            f"ratio: {self.ratio:.2f}\n")


def benchmark(model: Model, spec: SweepSpec, fom_runs: int = 3,
              result: SweepResult | None = None) -> BenchmarkReport:
    """Sequential speedup measurement.

    ``fom_runs`` full-order cases at evenly spaced sites give a cost per
    step; the full-sweep FOM cost is that times the total step count of all
    sites. The ROM side is the actual pipeline (build plus sweep), run with
    one worker unless a sequential ``result`` is supplied.
    """
    if fom_runs < 1:
        raise ContractError("fom_runs must be positive")
    if result is None:
        result = run_search(model, replace(spec, validate_top_k=1), workers=1)
    H = spec.grid()
    pick = np.unique(np.linspace(0, len(H) - 1, fom_runs).round().astype(int))
    secs, steps = 0.0, 0
    for i in pick:
        g = spec.gust(H[i])
        hist = integrate(model, g, spec.step, spec.duration(g))
        secs += hist.wall_clock
        steps += hist.times.size - 1
    per_step = secs / steps
    total_steps = sum(n_steps_for(spec.step, spec.duration(spec.gust(h)))
                      for h in H)
    return BenchmarkReport(len(H), len(pick), per_step, total_steps,
                           per_step * total_steps, result.rom_build_time,
                           result.total_rom_time)
