"""Pitch/plunge/flap aerofoil with indicial strip aerodynamics (14 states).

All quantities are nondimensional: lengths in semichords, time in semichords
of travel (``tau = t U / b``), gust velocity as ``w_g / U``. Taking
``rho = U = b = 1`` the section mass becomes ``pi * mu`` and the uncoupled
natural frequencies in ``tau`` units are ``omega_bar / U_star``.

State ordering (fixed, part of the file format)::

    0-2   xi, alpha, delta                 structural positions
    3-5   xi_dot, alpha_dot, delta_dot     structural velocities
    6-11  Wagner lag states, two per displacement (xi, alpha, delta)
    12-13 Kussner lag states

Sign conventions follow Theodorsen: plunge positive down, pitch and flap
positive nose up / trailing edge down, upward gust positive.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .exceptions import ConfigError, ContractError
from .model import Model, ModelDescriptor

#: Jones two-term Wagner approximation ``1 - sum psi_i exp(-eps_i s)``.
WAGNER_PSI = (0.165, 0.335)
WAGNER_EPS = (0.0455, 0.3)
#: Sears-Sparks two-term Kussner approximation.
KUSSNER_PSI = (0.5, 0.5)
KUSSNER_EPS = (0.13, 1.0)

STATE_LABELS = (
    "xi", "alpha", "delta",
    "xi_dot", "alpha_dot", "delta_dot",
    "wagner_xi_1", "wagner_xi_2",
    "wagner_alpha_1", "wagner_alpha_2",
    "wagner_delta_1", "wagner_delta_2",
    "kussner_1", "kussner_2",
)
N_STRUCTURAL = 6
N_AERO = 8


@dataclass(frozen=True)
class AerofoilParams:
    """Nondimensional aerofoil constants.

    Defaults are a placeholder set: the classical two-degree-of-freedom
    constants (a=-0.5, x_alpha=0.25, r_a=0.5, mu=100, omega_xi_bar=0.2)
    plus a light, stiff trailing-edge flap (``omega_delta_bar = 3``) chosen
    so the flap mode does not flutter below the pitch/plunge instability.
    Only the cubic coefficients and the reduced velocity are fixed by the
    reference configuration.
    """

    a: float = -0.5
    c_h: float = 0.5
    x_alpha: float = 0.25
    x_delta: float = 0.0125
    r_a: float = 0.5
    r_delta: float = 0.079
    mu: float = 100.0
    omega_xi_bar: float = 0.2
    omega_delta_bar: float = 3.0
    K_xi3: float = 1.0
    K_alpha3: float = 3.0
    U_star: float = 4.5
    zeta_xi: float = 0.0
    zeta_alpha: float = 0.0
    zeta_delta: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ConfigError("parameter must be finite", field=f.name)
        for name in ("mu", "r_a", "r_delta", "U_star", "omega_xi_bar",
                     "omega_delta_bar"):
            if getattr(self, name) <= 0:
                raise ConfigError("must be positive", field=name)
        if not -1.0 < self.a < 1.0:
            raise ConfigError("elastic axis must lie inside the chord", field="a")
        if not self.a < self.c_h < 1.0:
            raise ConfigError("hinge must lie aft of the elastic axis, inside "
                              "the chord", field="c_h")
        for name in ("zeta_xi", "zeta_alpha", "zeta_delta"):
            if getattr(self, name) < 0:
                raise ConfigError("damping ratio must be non-negative",
                                  field=name)

    def with_(self, **changes) -> "AerofoilParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


def theodorsen_coefficients(a: float, c: float) -> dict:
    """Theodorsen's flap geometry functions ``T1`` .. ``T14``."""
    s = math.sqrt(1.0 - c * c)
    ac = math.acos(c)
    T = {}
    T[1] = -(2.0 + c * c) * s / 3.0 + c * ac
    T[2] = c * (1.0 - c * c) - s * (1.0 + c * c) * ac + c * ac * ac
    T[3] = (-(0.125 + c * c) * ac * ac + 0.25 * c * s * ac * (7.0 + 2.0 * c * c)
            - 0.125 * (1.0 - c * c) * (5.0 * c * c + 4.0))
    T[4] = -ac + c * s
    T[5] = -(1.0 - c * c) - ac * ac + 2.0 * c * s * ac
    T[6] = T[2]
    T[7] = -(0.125 + c * c) * ac + 0.125 * c * s * (7.0 + 2.0 * c * c)
    T[8] = -(2.0 * c * c + 1.0) * s / 3.0 + c * ac
    T[9] = 0.5 * (s**3 / 3.0 + a * T[4])
    T[10] = s + ac
    T[11] = ac * (1.0 - 2.0 * c) + s * (2.0 - c)
    T[12] = s * (2.0 + c) - ac * (2.0 * c + 1.0)
    T[13] = 0.5 * (-T[7] - (c - a) * T[1])
    T[14] = 0.0625 + 0.5 * a * c
    return T


@dataclass(frozen=True)
class AerofoilMatrices:
    """Second-order blocks of the aerofoil equations.

    ``M q'' + C q' + K q + f_cubic(q) + W x_w + G x_k = 0`` with Wagner
    states ``x_w' = S q - diag(eps) x_w`` and Kussner states
    ``x_k' = u_d - diag(eps_k) x_k``.
    """

    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    W: np.ndarray
    G: np.ndarray
    S: np.ndarray
    wagner_rates: np.ndarray
    kussner_rates: np.ndarray
    cubic: np.ndarray  # (3,) coefficients on xi**3, alpha**3, delta**3


def aerofoil_matrices(p: AerofoilParams) -> AerofoilMatrices:
    a, c = p.a, p.c_h
    T = theodorsen_coefficients(a, c)
    pi = math.pi
    psi1, psi2 = WAGNER_PSI
    eps1, eps2 = WAGNER_EPS

    m = pi * p.mu
    S_a = m * p.x_alpha
    S_d = m * p.x_delta
    I_a = m * p.r_a**2
    I_d = m * p.r_delta**2
    I_ad = I_d + (c - a) * S_d
    Ms = np.array([[m, S_a, S_d], [S_a, I_a, I_ad], [S_d, I_ad, I_d]])

    w_xi = p.omega_xi_bar / p.U_star
    w_a = 1.0 / p.U_star
    w_d = p.omega_delta_bar / p.U_star
    Ks = np.diag([m * w_xi**2, I_a * w_a**2, I_d * w_d**2])
    Cs = np.diag([2 * p.zeta_xi * m * w_xi, 2 * p.zeta_alpha * I_a * w_a,
                  2 * p.zeta_delta * I_d * w_d])
    cubic = np.array([Ks[0, 0] * p.K_xi3, Ks[1, 1] * p.K_alpha3, 0.0])

    # noncirculatory (apparent mass) terms
    Ma = np.array([
        [pi, -pi * a, -T[1]],
        [-pi * a, pi * (0.125 + a * a), -(T[7] + (c - a) * T[1])],
        [-T[1], 2 * T[13], -T[3] / pi],
    ])
    D1 = np.array([
        [0.0, pi, -T[4]],
        [0.0, pi * (0.5 - a), T[1] - T[8] - (c - a) * T[4] + 0.5 * T[11]],
        [0.0, -2 * T[9] - T[1] + T[4] * (a - 0.5), -T[4] * T[11] / (2 * pi)],
    ])
    F1 = np.array([
        [0.0, 0.0, 0.0],
        [0.0, 0.0, T[4] + T[10]],
        [0.0, 0.0, (T[5] - T[4] * T[10]) / pi],
    ])

    # circulatory load distribution (lift, moment about e.a., hinge moment)
    # applied to the downwash Q = alpha + xi' + (1/2 - a) alpha'
    #                             + T10/pi delta + T11/(2 pi) delta'
    load = np.array([2 * pi, -2 * pi * (a + 0.5), T[12]])
    q_rate = np.array([1.0, 0.5 - a, T[11] / (2 * pi)])
    q_disp = np.array([0.0, 1.0, T[10] / pi])

    phi0 = 1.0 - psi1 - psi2
    D2 = np.outer(load, q_rate)
    F2 = np.outer(load, q_disp)
    F3 = np.outer(load, q_rate) * (psi1 * eps1 + psi2 * eps2)

    C = Cs + D1 + phi0 * D2
    K = Ks + F1 + phi0 * F2 + F3

    # Wagner lag states: for each displacement j and pole i the state is the
    # exponentially weighted integral of q_j with rate eps_i.
    w_row = []
    for j in range(3):
        for psi_i, eps_i in ((psi1, eps1), (psi2, eps2)):
            w_row.append(psi_i * eps_i * (q_disp[j] - eps_i * q_rate[j]))
    W = np.outer(load, np.array(w_row))
    S = np.zeros((6, 3))
    for j in range(3):
        S[2 * j, j] = 1.0
        S[2 * j + 1, j] = 1.0
    wagner_rates = np.array([eps1, eps2] * 3)

    kp, ke = KUSSNER_PSI, KUSSNER_EPS
    G = np.outer(load, [kp[0] * ke[0], kp[1] * ke[1]])

    return AerofoilMatrices(
        M=Ms + Ma, C=C, K=K, W=W, G=G, S=S,
        wagner_rates=wagner_rates, kussner_rates=np.array(ke), cubic=cubic,
    )


def build_aerofoil_model(params: AerofoilParams | None = None) -> Model:
    """Build the 14-state aerofoil :class:`~gustrom.model.Model`.

    The single disturbance channel is the vertical gust ``w_g / U``.
    """
    p = AerofoilParams() if params is None else params
    if not isinstance(p, AerofoilParams):
        raise ContractError("params must be an AerofoilParams")
    mats = aerofoil_matrices(p)
    Minv = np.linalg.inv(mats.M)
    MC, MK, MW, MG = (Minv @ mats.C, Minv @ mats.K, Minv @ mats.W,
                      Minv @ mats.G)
    Mcub = Minv * mats.cubic  # column j scaled by cubic_j
    S, wr, kr = mats.S, mats.wagner_rates, mats.kussner_rates

    def fun(w, u_d, u_c):
        q = w[0:3]
        qd = w[3:6]
        xw = w[6:12]
        xk = w[12:14]
        out = np.empty(14)
        out[0:3] = qd
        out[3:6] = -(MC @ qd + MK @ q + Mcub @ (q * q * q) + MW @ xw + MG @ xk)
        out[6:12] = S @ q - wr * xw
        out[12:14] = u_d[0] - kr * xk
        return out

    desc = ModelDescriptor(
        n_states=14,
        n_disturbance_inputs=1,
        n_control_inputs=0,
        state_labels=STATE_LABELS,
        nondimensional_time=True,
    )
    return Model(desc, fun, name="aerofoil-3dof", params=p)


@dataclass(frozen=True)
class FlutterTrace:
    u_star: np.ndarray
    max_real: np.ndarray
    flutter_speed: float | None
    bracket: tuple | None = None
    iterations: int = 0

    @property
    def has_flutter(self) -> bool:
        return self.flutter_speed is not None

    @property
    def status(self) -> str:
        return "flutter" if self.has_flutter else "no flutter in range"


def max_real_eigenvalue(params: AerofoilParams) -> float:
    """Largest real part of the Jacobian spectrum at the trim state."""
    from .model import find_equilibrium
    from .nmor import compute_jacobian

    model = build_aerofoil_model(params)
    eq = find_equilibrium(model, model.zero_state())
    jac = compute_jacobian(model, eq.w0).entries
    return float(np.max(np.linalg.eigvals(jac).real))


def stability_crossing(max_real_fn, grid, xtol: float = 1e-6,
                       max_iter: int = 200) -> FlutterTrace:
    """First crossing of ``max_real_fn`` from negative to non-negative.

    The function is sampled on ``grid``; the first bracketing interval is
    bisected to width ``xtol``. No sign change gives ``flutter_speed=None``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ContractError("grid must be a non-empty 1-D array")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ContractError("grid must be positive and strictly increasing")
    vals = np.array([max_real_fn(float(u)) for u in grid])
    crossing = np.flatnonzero((vals[:-1] < 0) & (vals[1:] >= 0))
    if crossing.size == 0:
        return FlutterTrace(grid, vals, None)
    i = int(crossing[0])
    lo, hi = float(grid[i]), float(grid[i + 1])
    it = 0
    while hi - lo > xtol and it < max_iter:
        it += 1
        mid = 0.5 * (lo + hi)
        if max_real_fn(mid) < 0:
            lo = mid
        else:
            hi = mid
    return FlutterTrace(grid, vals, 0.5 * (lo + hi), (lo, hi), it)


def flutter_trace(params: AerofoilParams, u_star_grid, xtol: float = 1e-6,
                  max_iter: int = 200) -> FlutterTrace:
    """Scan the reduced velocity and bisect the first stability crossing.

    Returns a :class:`FlutterTrace`; no sign change on the grid is reported
    via ``flutter_speed=None`` rather than raised.
    """
    return stability_crossing(
        lambda u: max_real_eigenvalue(params.with_(U_star=u)),
        u_star_grid, xtol, max_iter)
