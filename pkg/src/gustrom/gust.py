"""Gust inputs: discrete "1-minus-cosine" gusts, Von Karman turbulence and
spanwise penetration delays."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.signal as sig

from .exceptions import ConfigError, ContractError

#: Von Karman scale factor appearing in the vertical-gust spectrum.
VK_SCALE = 1.339

# Three-pole/two-zero rational fit of the Von Karman vertical spectrum, in
# powers of s L / U (shaping filter driven by unit white noise).
VK_NUM = (1.0, 2.7478, 0.3398)
VK_DEN = (1.0, 2.9958, 1.9754, 0.1539)
#: Upper end, in ``Omega * L_w``, of the band where the rational filter
#: tracks the exact spectrum within about 1 dB.
FILTER_VALID_BAND = 50.0


@dataclass(frozen=True)
class DiscreteGustSpec:
    """"1-minus-cosine" gust.

    ``w0`` is the peak velocity and ``H_g`` the gradient distance, in the
    same length/velocity units as ``U_inf``. For the nondimensional aerofoil
    use ``U_inf = 1``, ``H_g`` in semichords and ``w0`` as ``w0 / U``.
    """

    w0: float
    H_g: float
    t0: float = 0.0
    U_inf: float = 1.0

    def __post_init__(self):
        if not self.H_g > 0:
            raise ConfigError("gust gradient distance must be positive",
                              field="H_g")
        if not self.U_inf > 0:
            raise ConfigError("freestream velocity must be positive",
                              field="U_inf")
        if not self.w0 >= 0:
            raise ConfigError("peak gust velocity must be non-negative",
                              field="w0")

    @property
    def duration(self) -> float:
        return self.H_g / self.U_inf

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    def __call__(self, t):
        return one_minus_cosine(self, t)


def one_minus_cosine(spec: DiscreteGustSpec, t):
    """Gust velocity at time(s) ``t``; exactly zero outside the support."""
    t = np.asarray(t, dtype=float)
    s = t - spec.t0
    inside = (s >= 0.0) & (s <= spec.duration)
    w = 0.5 * spec.w0 * (1.0 - np.cos(2.0 * np.pi * spec.U_inf * s / spec.H_g))
    out = np.where(inside, w, 0.0)
    return float(out) if out.ndim == 0 else out


def gust_frequency(spec: DiscreteGustSpec) -> float:
    """Centre frequency ``U_inf / H_g`` of a discrete gust."""
    return spec.U_inf / spec.H_g


@dataclass(frozen=True)
class TurbulenceSpec:
    sigma_w: float
    L_w: float
    U_inf: float = 1.0
    seed: int = 0
    sample_rate: float = 20.0
    duration: float = 100.0

    def __post_init__(self):
        if not self.sigma_w >= 0:
            raise ConfigError("turbulence intensity must be non-negative",
                              field="sigma_w")
        if not self.L_w > 0:
            raise ConfigError("turbulence scale length must be positive",
                              field="L_w")
        if not self.U_inf > 0:
            raise ConfigError("freestream velocity must be positive",
                              field="U_inf")
        if not self.sample_rate > 0:
            raise ConfigError("sample rate must be positive",
                              field="sample_rate")


def von_karman_psd(spec: TurbulenceSpec, Omega):
    """One-sided Von Karman vertical-gust PSD in spatial frequency ``Omega``.

    Normalized so that its integral over ``Omega`` in ``[0, inf)`` is
    ``sigma_w**2``.
    """
    Omega = np.asarray(Omega, dtype=float)
    if np.any(Omega < 0):
        raise ContractError("spatial frequency must be non-negative")
    x = (VK_SCALE * spec.L_w * Omega) ** 2
    out = (spec.sigma_w**2 * spec.L_w / np.pi
           * (1.0 + 8.0 / 3.0 * x) / (1.0 + x) ** (11.0 / 6.0))
    return float(out) if out.ndim == 0 else out


def von_karman_filter_psd(spec: TurbulenceSpec, Omega):
    """One-sided PSD in ``Omega`` produced by the (variance-corrected)
    rational shaping filter."""
    Omega = np.asarray(Omega, dtype=float)
    s = 1j * Omega * spec.L_w
    num = sum(c * s**k for k, c in enumerate(VK_NUM))
    den = sum(c * s**k for k, c in enumerate(VK_DEN))
    return (spec.sigma_w**2 * spec.L_w / np.pi * np.abs(num / den) ** 2
            / _filter_variance_fraction())


def _canonical_ss(T):
    # controllable canonical form of N(sT) / D(sT)
    d = np.array(VK_DEN) * T ** np.arange(4)
    n = np.array(VK_NUM) * T ** np.arange(3)
    d, n = d / d[3], n / d[3]
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-d[0], -d[1], -d[2]]])
    B = np.array([[0.0], [0.0], [1.0]])
    C = np.array([[n[0], n[1], n[2]]])
    return A, B, C


def _filter_variance_fraction() -> float:
    """Fraction of ``sigma_w**2`` the uncorrected rational filter delivers.

    The three-pole fit rolls off as ``Omega**-2`` instead of
    ``Omega**(-5/3)`` and so loses a few percent of the variance; the
    filter gain is scaled up by the inverse square root of this.
    """
    A, B, C = _canonical_ss(1.0)
    P = la.solve_continuous_lyapunov(A, -np.pi * (B @ B.T))
    return float((C @ P @ C.T)[0, 0]) / np.pi


@dataclass(frozen=True)
class GustSignal:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ContractError("times and values must be 1-D and equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ContractError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        """Linear interpolation; zero outside the sampled window."""
        out = np.interp(t, self.times, self.values, left=0.0, right=0.0)
        return float(out) if np.ndim(out) == 0 else out

    def to_table(self, path, header=("time", "velocity")):
        write_table(path, header, np.column_stack([self.times, self.values]))


def _shaping_filter_ss(spec: TurbulenceSpec):
    """State space of ``H(s) = gain N(sT) / D(sT)``, ``T = L_w / U_inf``."""
    T = spec.L_w / spec.U_inf
    gain = spec.sigma_w * math.sqrt(
        spec.L_w / (math.pi * spec.U_inf) / _filter_variance_fraction()
    )
    A, B, C = _canonical_ss(T)
    return A, B, gain * C


def von_karman_realization(spec: TurbulenceSpec) -> GustSignal:
    """Seeded time series of vertical turbulence with a Von Karman spectrum.

    Unit white noise drives the rational shaping filter; the filter state is
    propagated with its exact discrete-time equivalent (matrix exponential
    for the mean, Van Loan integral for the noise covariance) so sample
    statistics carry no discretization bias. The filter starts from its
    stationary distribution.
    """
    n = int(math.floor(spec.duration * spec.sample_rate)) + 1
    if n < 2:
        raise ContractError("realization needs at least two samples")
    dt = 1.0 / spec.sample_rate
    times = np.arange(n) * dt
    if spec.sigma_w == 0:
        return GustSignal(times, np.zeros(n))

    A, B, C = _shaping_filter_ss(spec)
    # unit one-sided white noise in rad/time has intensity pi
    Qc = np.pi * (B @ B.T)
    k = A.shape[0]
    vl = np.zeros((2 * k, 2 * k))
    vl[:k, :k] = -A
    vl[:k, k:] = Qc
    vl[k:, k:] = A.T
    ex = la.expm(vl * dt)
    Ad = ex[k:, k:].T
    Qd = Ad @ ex[:k, k:]
    Qd = 0.5 * (Qd + Qd.T)
    Ld = np.linalg.cholesky(Qd)
    Pinf = la.solve_continuous_lyapunov(A, -Qc)
    P0 = np.linalg.cholesky(0.5 * (Pinf + Pinf.T))

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    noise = rng.standard_normal((n, k))
    # x_i = Ad x_{i-1} + u_i with u_0 the stationary initial draw, so
    # y_i = (c Ad) x_{i-1} + c u_i; each input column is a linear filter.
    u = np.empty((n, k))
    u[0] = P0 @ noise[0]
    u[1:] = noise[1:] @ Ld.T
    out = np.zeros(n)
    for j in range(k):
        num, den = sig.ss2tf(Ad, np.eye(k), C @ Ad, C, input=j)
        out += sig.lfilter(num[0], den, u[:, j])
    return GustSignal(times, out)


def stationary_variance(spec: TurbulenceSpec) -> float:
    """Exact output variance of the shaping filter."""
    A, B, C = _shaping_filter_ss(spec)
    P = la.solve_continuous_lyapunov(A, -np.pi * (B @ B.T))
    return float((C @ P @ C.T)[0, 0])


def penetration_delay(y, sweep_angle, U_inf):
    """Gust arrival delay ``y sin(sweep) / U_inf`` (sweep in radians)."""
    if not U_inf > 0:
        raise ContractError("freestream velocity must be positive")
    return np.asarray(y, dtype=float) * np.sin(sweep_angle) / U_inf


def to_model_units(signal: GustSignal, U_inf: float, semichord: float,
                   nondimensional: bool = True) -> GustSignal:
    """Convert a dimensional gust signal for a model.

    With ``nondimensional`` the time axis becomes semichords of travel
    (``tau = t U / b``) and velocities become ``w_g / U``; otherwise the
    signal is returned unchanged.
    """
    if not nondimensional:
        return signal
    if not (U_inf > 0 and semichord > 0):
        raise ContractError("U_inf and semichord must be positive")
    return GustSignal(signal.times * U_inf / semichord, signal.values / U_inf)


def write_table(path, header, data):
    """Whitespace-free CSV with round-trip float precision."""
    data = np.asarray(data, dtype=float)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
