"""Generic nonlinear state-space model ``dw/dt = R(w, u_c, u_d)`` and trim."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la

from .exceptions import ContractError, NumericalError, SolverError

#: Default infinity-norm tolerance on the trim residual.
TRIM_TOL = 1e-10

ResidualFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelDescriptor:
    """Dimensions and channel labels of a state-space model.

    ``nondimensional_time`` is true when the time unit is semichords of
    travel, ``tau = t * U / b``.
    """

    n_states: int
    n_disturbance_inputs: int = 1
    n_control_inputs: int = 0
    state_labels: tuple = ()
    nondimensional_time: bool = False

    def __post_init__(self):
        if self.n_states < 1:
            raise ContractError("n_states must be at least 1")
        if self.n_disturbance_inputs < 0 or self.n_control_inputs < 0:
            raise ContractError("input counts must be non-negative")
        labels = tuple(self.state_labels) or tuple(
            f"w{i}" for i in range(self.n_states)
        )
        if len(labels) != self.n_states:
            raise ContractError(
                f"{len(labels)} state labels given for {self.n_states} states"
            )
        object.__setattr__(self, "state_labels", labels)

    def index(self, label: str) -> int:
        try:
            return self.state_labels.index(label)
        except ValueError:
            raise ContractError(f"unknown channel '{label}'") from None


@dataclass(frozen=True)
class Model:
    """Immutable nonlinear model.

    Parameters
    ----------
    descriptor : ModelDescriptor
    fun : callable
        ``fun(w, u_d, u_c) -> dw/dt``. Must be pure; it is called with
        float arrays of the declared lengths.
    name : str
    params : object, optional
        Whatever produced the model (kept for provenance only).
    """

    descriptor: ModelDescriptor
    fun: ResidualFn
    name: str = "model"
    params: object = field(default=None, compare=False)

    @property
    def n_states(self) -> int:
        return self.descriptor.n_states

    def zero_state(self) -> np.ndarray:
        return np.zeros(self.descriptor.n_states)

    def zero_disturbance(self) -> np.ndarray:
        return np.zeros(self.descriptor.n_disturbance_inputs)

    def zero_control(self) -> np.ndarray:
        return np.zeros(self.descriptor.n_control_inputs)


def _as_vector(x, n, what) -> np.ndarray:
    if x is None:
        return np.zeros(n)
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape != (n,):
        raise ContractError(f"{what} has shape {arr.shape}, expected ({n},)")
    return arr


def evaluate_residual(model: Model, w, u_d=None, u_c=None) -> np.ndarray:
    """Evaluate ``R(w, u_c, u_d)`` with dimension and finiteness checks.

    Missing input arrays are taken as zero.

    Raises
    ------
    ContractError
        On any dimension mismatch.
    NumericalError
        If the output holds a non-finite entry; ``.index`` names it.
    """
    d = model.descriptor
    w = _as_vector(w, d.n_states, "state")
    u_d = _as_vector(u_d, d.n_disturbance_inputs, "disturbance input")
    u_c = _as_vector(u_c, d.n_control_inputs, "control input")
    r = np.asarray(model.fun(w, u_d, u_c), dtype=float)
    if r.shape != (d.n_states,):
        raise ContractError(
            f"residual returned shape {r.shape}, expected ({d.n_states},)"
        )
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        i = int(bad[0])
        raise NumericalError(
            f"non-finite residual at index {i} ({d.state_labels[i]})", index=i
        )
    return r


@dataclass(frozen=True)
class Equilibrium:
    w0: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int = 0
    history: tuple = ()
    tol: float = TRIM_TOL


def find_equilibrium(
    model: Model,
    w_guess=None,
    u_c=None,
    tol: float = TRIM_TOL,
    max_iter: int = 50,
    max_halvings: int = 10,
) -> Equilibrium:
    """Newton iteration on ``R(w, u_c, 0) = 0``.

    The Jacobian comes from central finite differences
    (:func:`gustrom.nmor.compute_jacobian`). A step is halved, at most
    ``max_halvings`` times, while it fails to reduce the residual norm.
    Hitting ``max_iter`` is not an error: the best iterate is returned with
    ``converged=False``.
    """
    from .nmor import compute_jacobian

    d = model.descriptor
    w = _as_vector(w_guess, d.n_states, "guess").copy()
    if not np.all(np.isfinite(w)):
        raise ContractError("equilibrium guess must be finite")
    u_c = _as_vector(u_c, d.n_control_inputs, "control input")
    u_d = np.zeros(d.n_disturbance_inputs)

    def norm_at(x):
        return float(np.max(np.abs(evaluate_residual(model, x, u_d, u_c))))

    r = evaluate_residual(model, w, u_d, u_c)
    rn = float(np.max(np.abs(r)))
    history = [rn]
    best_w, best_rn = w.copy(), rn
    it = 0
    while rn > tol and it < max_iter:
        it += 1
        jac = compute_jacobian(model, w, u_c=u_c).entries
        try:
            with warnings.catch_warnings():
                # singularity is detected below and reported as SolverError
                warnings.simplefilter("ignore", la.LinAlgWarning)
                lu = la.lu_factor(jac, check_finite=True)
            if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(
                1.0, np.max(np.abs(jac))
            ):
                raise la.LinAlgError("singular")
            step = -la.lu_solve(lu, r)
        except (la.LinAlgError, ValueError) as exc:
            raise SolverError(
                f"singular Jacobian at Newton iteration {it}", iteration=it
            ) from exc

        alpha = 1.0
        trial = w + step
        trial_rn = norm_at(trial)
        halvings = 0
        while trial_rn >= rn and halvings < max_halvings:
            alpha *= 0.5
            halvings += 1
            trial = w + alpha * step
            trial_rn = norm_at(trial)
        w = trial
        r = evaluate_residual(model, w, u_d, u_c)
        rn = trial_rn
        history.append(rn)
        if rn < best_rn:
            best_w, best_rn = w.copy(), rn
    return Equilibrium(
        w0=best_w,
        residual_norm=best_rn,
        converged=best_rn <= tol,
        iterations=it,
        history=tuple(history),
        tol=tol,
    )


def linear_model(A, B=None, labels: Sequence[str] = (), name="linear"):
    """``R(w, u) = A w + B u`` as a :class:`Model`."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ContractError("A must be square")
    B = np.zeros((n, 1)) if B is None else np.array(B, dtype=float).reshape(n, -1)
    desc = ModelDescriptor(n, B.shape[1], 0, tuple(labels))

    def fun(w, u_d, u_c):
        return A @ w + B @ u_d

    return Model(desc, fun, name=name, params={"A": A, "B": B})


def duffing_model(stiffness=1.0, cubic=1.0, damping=0.0, name="duffing"):
    """Duffing oscillator ``R(x, v) = (v, -k x - c v - g x**3 + u)``."""

    def fun(w, u_d, u_c):
        x, v = w
        return np.array([v, -stiffness * x - damping * v - cubic * x**3 + u_d[0]])

    desc = ModelDescriptor(2, 1, 0, ("x", "v"))
    return Model(
        desc, fun, name=name,
        params={"stiffness": stiffness, "cubic": cubic, "damping": damping},
    )


def quadratic_model(A, name="quadratic"):
    """``R(w, u) = A w + (w_0**2, 0, ..., 0) + e_0 u``."""
    A = np.array(A, dtype=float)
    n = A.shape[0]

    def fun(w, u_d, u_c):
        r = A @ w
        r[0] += w[0] ** 2 + u_d[0]
        return r

    return Model(ModelDescriptor(n, 1, 0), fun, name=name, params={"A": A})
