"""Fixed-step RK4 time marching of full-order models and ROMs under gusts."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ContractError, DivergenceError
from .gust import DiscreteGustSpec, GustSignal, write_table
from .model import Model, evaluate_residual
from .nmor import RomModel

#: Default step in semichords of travel for the aerofoil.
DEFAULT_STEP = 0.01
#: Finiteness is checked every this many steps.
CHECK_EVERY = 64


def simulation_duration(gust, decay_factor: float = 5.0,
                        min_margin: float = 0.0) -> float:
    """Gust exit time plus ``max(decay_factor * gust duration, min_margin)``."""
    if isinstance(gust, DiscreteGustSpec):
        return gust.t_end + max(decay_factor * gust.duration, min_margin)
    if isinstance(gust, GustSignal):
        span = gust.times[-1] - gust.times[0]
        return gust.times[-1] + max(decay_factor * span, min_margin)
    raise ContractError("gust must be a DiscreteGustSpec or GustSignal")


def n_steps_for(step: float, duration: float) -> int:
    if not (step > 0 and math.isfinite(step)):
        raise ContractError("step must be positive")
    if not (duration > 0 and math.isfinite(duration)):
        raise ContractError("duration must be positive")
    return int(math.ceil(duration / step - 1e-9))


def sample_gust(gust, step: float, n_steps: int) -> np.ndarray:
    """Gust velocity at every half step ``j * step / 2``, ``j = 0..2 n``.

    A discrete gust is evaluated in closed form (only over its support, so
    the samples for a site never depend on which other sites are batched
    with it); a signal is linearly interpolated.
    """
    t = np.arange(2 * n_steps + 1) * (0.5 * step)
    if gust is None:
        return np.zeros(t.size)
    if isinstance(gust, DiscreteGustSpec):
        out = np.zeros(t.size)
        lo = int(np.searchsorted(t, gust.t0, side="left"))
        hi = int(np.searchsorted(t, gust.t_end, side="right"))
        if hi > lo:
            s = t[lo:hi] - gust.t0
            out[lo:hi] = 0.5 * gust.w0 * (
                1.0 - np.cos(2.0 * np.pi * gust.U_inf * s / gust.H_g))
        return out
    if isinstance(gust, GustSignal):
        return np.asarray(gust(t), dtype=float)
    raise ContractError("gust must be a DiscreteGustSpec, GustSignal or None")


@dataclass(frozen=True)
class TimeHistory:
    """Uniformly sampled trajectory.

    For a full-order run ``states`` holds physical states ``(k, n)``. For a
    ROM run it holds the real reduced coordinates ``q`` ``(k, m)`` (see
    :class:`gustrom.nmor.RealRom`); physical channels are rebuilt on demand.
    """

    times: np.ndarray
    states: np.ndarray
    system: object = field(repr=False, compare=False)
    step: float
    gust_id: str = ""
    wall_clock: float = 0.0

    @property
    def reduced(self) -> bool:
        return isinstance(self.system, RomModel)

    @property
    def model_id(self) -> str:
        if self.reduced:
            return f"rom(m={self.system.m}, order={self.system.order})"
        return self.system.name

    @property
    def state_labels(self) -> tuple:
        d = self.system.descriptor
        if d is None:
            return tuple(f"w{i}" for i in range(self.system.n_states))
        return d.state_labels

    def reduced_states(self) -> np.ndarray:
        """Complex modal amplitudes ``z`` (ROM histories only)."""
        if not self.reduced:
            raise ContractError("full-order history has no reduced states")
        return self.states @ self.system.real_form().P.T

    def channels(self, labels: Sequence[str]) -> np.ndarray:
        """Physical values ``(k, len(labels))`` of the named channels."""
        idx = [_label_index(self.state_labels, lab) for lab in labels]
        if not self.reduced:
            return self.states[:, idx]
        real = self.system.real_form()
        return _rebuild(self.system.base_point[idx], real.V[idx], self.states)

    def to_table(self, path, labels: Sequence[str]):
        write_table(path, ("time",) + tuple(labels),
                    np.column_stack([self.times, self.channels(labels)]))


def _label_index(labels, label) -> int:
    try:
        return labels.index(label)
    except ValueError:
        raise ContractError(f"unknown channel '{label}'") from None


def _rebuild(base, V_rows, q) -> np.ndarray:
    return base + q @ V_rows.T


class _RomKernel:
    """Batched real ROM right-hand side: polynomial features times one
    coefficient matrix."""

    def __init__(self, rom: RomModel):
        real = rom.real_form()
        self.m = rom.m
        self.order = rom.order
        self.i2, self.j2 = real.i2, real.j2
        self.a3, self.b3 = real.i3[:, 0], real.i3[:, 1]
        blocks = [real.L]
        if self.order >= 2:
            blocks.append(real.Q2)
        if self.order >= 3:
            blocks.append(real.Q3)
        blocks.append(real.Bu)
        self.coefT = np.ascontiguousarray(np.hstack(blocks).T)

    def __call__(self, q, u):
        feats = [q]
        if self.order >= 2:
            qq = q[:, self.i2] * q[:, self.j2]
            feats.append(qq)
            if self.order >= 3:
                feats.append(qq[:, self.a3] * q[:, self.b3])
        feats.append(u)
        return np.concatenate(feats, axis=1) @ self.coefT


def _scalar_rom_rhs(rom: RomModel):
    """Single-trajectory ROM right-hand side (one matrix-vector product)."""
    real = rom.real_form()
    i2, j2 = real.i2, real.j2
    a3, b3 = real.i3[:, 0], real.i3[:, 1]
    L, Bu = real.L, real.Bu
    if rom.order == 1:
        def f(q, u):
            return L @ q + Bu @ u
    elif rom.order == 2:
        coef = np.hstack([L, real.Q2, Bu])

        def f(q, u):
            return coef @ np.concatenate((q, q[i2] * q[j2], u))
    else:
        coef = np.hstack([L, real.Q2, real.Q3, Bu])

        def f(q, u):
            qq = q[i2] * q[j2]
            return coef @ np.concatenate((q, qq, qq[a3] * q[b3], u))
    return f


def _rk4_step(f, y, h, u0, uh, u1):
    k1 = f(y, u0)
    k2 = f(y + (0.5 * h) * k1, uh)
    k3 = f(y + (0.5 * h) * k2, uh)
    k4 = f(y + h * k3, u1)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _gust_id(gust) -> str:
    if gust is None:
        return "none"
    if isinstance(gust, DiscreteGustSpec):
        return f"1-cos(w0={gust.w0!r}, H_g={gust.H_g!r}, t0={gust.t0!r})"
    return f"signal({gust.times.size} samples)"


def integrate(system, gust, step: float = DEFAULT_STEP,
              duration: float | None = None, initial=None) -> TimeHistory:
    """March ``system`` (a :class:`Model` or :class:`RomModel`) under a gust.

    Parameters
    ----------
    gust : DiscreteGustSpec, GustSignal or None
        Applied to the single disturbance channel.
    step, duration : float
        Fixed RK4 step; ``duration`` defaults to
        :func:`simulation_duration`.
    initial : array_like, optional
        Full state for a model (default zero), reduced state ``z`` for a
        ROM (default zero, i.e. the base point).

    Raises
    ------
    DivergenceError
        On a non-finite state, with the time and last finite state.
    """
    if duration is None:
        duration = simulation_duration(gust)
    n = n_steps_for(step, duration)
    u = sample_gust(gust, step, n)
    times = np.arange(n + 1) * step
    t_start = time.perf_counter()
    if isinstance(system, RomModel):
        states = _march_rom(system, u, step, n, initial)
    elif isinstance(system, Model):
        states = _march_model(system, u, step, n, initial)
    else:
        raise ContractError("system must be a Model or RomModel")
    wall = time.perf_counter() - t_start
    return TimeHistory(times, states, system, step, _gust_id(gust), wall)


def _diverged(states, upto, step, reduced, system):
    bad = np.flatnonzero(~np.all(np.isfinite(states[:upto + 1]), axis=1))
    k = int(bad[0])
    last = states[k - 1].copy()
    if reduced:
        last = system.reconstruct(last @ system.real_form().P.T)
    raise DivergenceError(
        f"non-finite state at t = {k * step:.6g}", time=k * step,
        last_state=last)


def _march_model(model: Model, u, h, n, initial):
    d = model.descriptor
    if d.n_disturbance_inputs != 1:
        raise ContractError("gust integration needs exactly one disturbance input")
    w = model.zero_state() if initial is None else np.array(initial, dtype=float)
    evaluate_residual(model, w)  # dimension check once
    u_c = model.zero_control()
    fun = model.fun

    def f(y, ud):
        return fun(y, ud, u_c)

    states = np.empty((n + 1, d.n_states))
    states[0] = w
    ud = u.reshape(-1, 1)
    with np.errstate(all="ignore"):
        for k in range(n):
            w = _rk4_step(f, w, h, ud[2 * k], ud[2 * k + 1], ud[2 * k + 2])
            states[k + 1] = w
            if (k + 1) % CHECK_EVERY == 0 or k + 1 == n:
                if not np.all(np.isfinite(states[k + 1])):
                    _diverged(states, k + 1, h, False, model)
    return states


def _march_rom(rom: RomModel, u, h, n, initial):
    real = rom.real_form()
    if initial is None:
        q = np.zeros(rom.m)
    else:
        z = np.asarray(initial, dtype=complex)
        if z.shape != (rom.m,):
            raise ContractError(f"reduced initial state must have length {rom.m}")
        q = np.linalg.solve(real.P, z).real
    f = _scalar_rom_rhs(rom)
    states = np.empty((n + 1, rom.m))
    states[0] = q
    y = q
    ud = u.reshape(-1, 1)
    with np.errstate(all="ignore"):
        for k in range(n):
            y = _rk4_step(f, y, h, ud[2 * k], ud[2 * k + 1], ud[2 * k + 2])
            states[k + 1] = y
            if (k + 1) % CHECK_EVERY == 0 or k + 1 == n:
                if not np.all(np.isfinite(y)):
                    _diverged(states, k + 1, h, True, rom)
    return states


def richardson_ratio(system, gust, step: float, duration: float,
                     channel: str) -> tuple:
    """Self-convergence check by step halving.

    Runs ``step``, ``step/2`` and ``step/4`` and compares ``channel`` on the
    coarse grid. Returns ``(ratio, error)`` where ``ratio`` is the ratio of
    successive max differences (16 for a fourth-order scheme) and ``error``
    the Richardson estimate of the error left at ``step/2``.
    """
    runs = [integrate(system, gust, step / 2**k, duration) for k in range(3)]
    ys = [h.channels([channel])[::2**k, 0] for k, h in enumerate(runs)]
    n = min(y.size for y in ys)
    d1 = np.max(np.abs(ys[0][:n] - ys[1][:n]))
    d2 = np.max(np.abs(ys[1][:n] - ys[2][:n]))
    return float(d1 / d2), float(d2 / 15.0)


def converged_step(system, gust, step: float, duration: float, channel: str,
                   rtol: float = 1e-6, max_halvings: int = 4) -> float:
    """Halve ``step`` until the Richardson error estimate on ``channel`` is
    below ``rtol`` times its peak."""
    for _ in range(max_halvings + 1):
        _, err = richardson_ratio(system, gust, 2 * step, duration, channel)
        peak = float(np.max(np.abs(
            integrate(system, gust, step, duration).channels([channel]))))
        if err <= rtol * max(peak, 1e-300):
            return step
        step /= 2
    return step


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ResponseMetrics:
    """Peak absolute value per channel and the (earliest) time it occurs.

    ``settled`` is true when every channel's last-sample magnitude is below
    ``settle_fraction`` of its peak.
    """

    labels: tuple
    peak_abs: tuple
    time_of_peak: tuple
    settled: bool = True

    def peak(self, label: str) -> float:
        return self.peak_abs[_label_index(self.labels, label)]

    def as_dict(self) -> dict:
        return {lab: (p, t) for lab, p, t in
                zip(self.labels, self.peak_abs, self.time_of_peak)}


def extract_metrics(history: TimeHistory, channels: Sequence[str],
                    settle_fraction: float = 0.05) -> ResponseMetrics:
    """Per-channel ``max |value|`` with ties broken by the earliest time."""
    channels = tuple(channels)
    if not channels:
        raise ContractError("at least one channel is required")
    vals = np.abs(history.channels(channels))
    # argmax returns the first occurrence of the maximum
    k = np.argmax(vals, axis=0)
    peaks = vals[k, np.arange(len(channels))]
    settled = bool(np.all(vals[-1] <= settle_fraction * peaks))
    return ResponseMetrics(
        channels,
        tuple(float(p) for p in peaks),
        tuple(float(history.times[i]) for i in k),
        settled,
    )


# ---------------------------------------------------------------------------
# batched ROM marching for sweeps


@dataclass(frozen=True)
class BatchOutcome:
    metrics: list  # ResponseMetrics or None for divergent sites
    divergence: list  # None or (time, message)
    wall_clock: float


def integrate_rom_batch(rom: RomModel, gusts: Sequence, step: float,
                        durations: Sequence[float], channels: Sequence[str],
                        settle_fraction: float = 0.05) -> BatchOutcome:
    """March one ROM under many gusts at once and keep only the metrics.

    Row ``i`` follows the same RK4 recursion as ``integrate(rom, gusts[i],
    step, durations[i])`` and agrees with it to round-off. Callers that
    need bit-reproducible output keep the batch composition fixed. Rows stop contributing after
    their own duration; a non-finite row is flagged and frozen.
    """
    channels = tuple(channels)
    labels = (rom.descriptor.state_labels if rom.descriptor is not None
              else tuple(f"w{i}" for i in range(rom.n_states)))
    idx = [_label_index(labels, lab) for lab in channels]
    B = len(gusts)
    if len(durations) != B:
        raise ContractError("one duration per gust is required")
    if B == 0:
        return BatchOutcome([], [], 0.0)
    real = rom.real_form()
    base, V_rows = rom.base_point[idx], real.V[idx]
    steps = np.array([n_steps_for(step, d) for d in durations])
    n = int(steps.max())

    # gust samples only over each site's own support window
    t_start = time.perf_counter()
    samples = [sample_gust(g, step, int(s)) for g, s in zip(gusts, steps)]
    width = max(s.size for s in samples)
    U = np.zeros((B, width))
    for i, s in enumerate(samples):
        U[i, :s.size] = s
    last_nz = np.array([np.flatnonzero(s).max() if np.any(s) else -1
                        for s in samples])
    force_end = int(last_nz.max()) + 1

    kernel = _RomKernel(rom)
    y = np.zeros((B, rom.m))
    zero_u = np.zeros((B, 1))
    peak = np.abs(_rebuild(base, V_rows, y))
    last = peak.copy()
    k_peak = np.zeros((B, len(idx)), dtype=int)
    alive = np.ones(B, dtype=bool)
    div_time: list = [None] * B

    def col(j):
        return U[:, j:j + 1] if j < force_end else zero_u

    with np.errstate(all="ignore"):
        for k in range(n):
            y = _rk4_step(kernel, y, step, col(2 * k), col(2 * k + 1),
                          col(2 * k + 2))
            cur = np.abs(_rebuild(base, V_rows, y))
            active = alive & (k + 1 <= steps)
            better = (cur > peak) & active[:, None]
            if better.any():
                peak = np.where(better, cur, peak)
                k_peak = np.where(better, k + 1, k_peak)
            done = active & ((k + 1) == steps)
            if done.any():
                last[done] = cur[done]
            if (k + 1) % CHECK_EVERY == 0 or k + 1 == n:
                finite = np.all(np.isfinite(y), axis=1)
                bad = alive & (k + 1 - CHECK_EVERY < steps) & ~finite
                for i in np.flatnonzero(bad):
                    div_time[i] = (k + 1) * step
                alive &= finite
                y = np.where(finite[:, None], y, 0.0)
    wall = time.perf_counter() - t_start

    metrics: list = []
    for i in range(B):
        if div_time[i] is not None or not np.all(np.isfinite(peak[i])):
            metrics.append(None)
            if div_time[i] is None:
                div_time[i] = float(steps[i] * step)
            continue
        metrics.append(ResponseMetrics(
            channels,
            tuple(float(v) for v in peak[i]),
            tuple(float(k * step) for k in k_peak[i]),
            bool(np.all(last[i] <= settle_fraction * peak[i])),
        ))
    return BatchOutcome(metrics, div_time, wall)
