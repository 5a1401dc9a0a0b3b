"""Nonlinear model order reduction by Taylor expansion and eigenprojection.

Around an equilibrium ``w0`` the residual is expanded as::

    R(w0 + dw, u) = A dw + 1/2 B(dw, dw) + 1/6 C(dw, dw, dw) + B_g u + ...

and ``dw = Phi z`` with ``m`` right eigenvectors of ``A``. Projection with
the biorthonormal left eigenvectors ``Psi`` gives::

    z_k' = lambda_k z_k + sum_ij D_kij z_i z_j + sum_ijl E_kijl z_i z_j z_l
           + (Psi^H B_g u)_k

with ``D_kij = 1/2 psi_k^H B(phi_i, phi_j)`` and
``E_kijl = 1/6 psi_k^H C(phi_i, phi_j, phi_l)``. ``B`` and ``C`` are never
formed: their actions on eigenvector combinations come from residual
evaluations only.

Conjugate pairs are always kept together. ``z`` holds one entry per retained
eigenvalue, so for a real full-order perturbation ``z_conj(k) = conj(z_k)``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .exceptions import (ConfigError, ConsistencyError, ContractError,
                         NumericalError,
                         ReductionError)
from .model import Model, ModelDescriptor

#: Relative central-difference step for the Jacobian: ``h_j = 1e-6 (1 + |w0_j|)``.
JACOBIAN_STEP = 1e-6
#: Step along unit eigenvector directions for second/third derivatives.
TENSOR_STEP = 1e-3

FORMAT_NAME = "gustrom-rom"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class JacobianMatrix:
    entries: np.ndarray
    base_point: np.ndarray
    fd_step: float


def _probe(model: Model, w, u_d, u_c, what):
    r = np.asarray(model.fun(w, u_d, u_c), dtype=float)
    if not np.all(np.isfinite(r)):
        raise NumericalError(f"non-finite residual while probing {what}",
                             index=int(np.flatnonzero(~np.isfinite(r))[0]))
    return r


def _inputs(model, u_c):
    d = model.descriptor
    u_d = np.zeros(d.n_disturbance_inputs)
    u_c = np.zeros(d.n_control_inputs) if u_c is None else np.asarray(u_c, float)
    return u_d, u_c


def compute_jacobian(model: Model, w0, fd_step: float = JACOBIAN_STEP,
                     u_c=None) -> JacobianMatrix:
    """Central-difference Jacobian ``dR/dw`` at ``w0`` with zero disturbance.

    Column ``j`` uses the step ``fd_step * (1 + |w0_j|)``; ``n`` residual
    pairs in total.
    """
    if fd_step <= 0:
        raise ContractError("fd_step must be positive")
    w0 = np.asarray(w0, dtype=float)
    n = model.descriptor.n_states
    if w0.shape != (n,) or not np.all(np.isfinite(w0)):
        raise ContractError("base point must be a finite state vector")
    u_d, u_c = _inputs(model, u_c)
    J = np.empty((n, n))
    for j in range(n):
        h = fd_step * (1.0 + abs(w0[j]))
        wp = w0.copy()
        wm = w0.copy()
        wp[j] += h
        wm[j] -= h
        rp = _probe(model, wp, u_d, u_c, f"Jacobian column {j}")
        rm = _probe(model, wm, u_d, u_c, f"Jacobian column {j}")
        J[:, j] = (rp - rm) / (wp[j] - wm[j])
    return JacobianMatrix(J, w0.copy(), fd_step)


def compute_gust_input_matrix(model: Model, w0, fd_step: float = JACOBIAN_STEP,
                              u_c=None) -> np.ndarray:
    """Central differences of ``R`` with respect to each disturbance channel."""
    if fd_step <= 0:
        raise ContractError("fd_step must be positive")
    w0 = np.asarray(w0, dtype=float)
    u_d, u_c = _inputs(model, u_c)
    nd = model.descriptor.n_disturbance_inputs
    Bg = np.empty((model.descriptor.n_states, nd))
    for j in range(nd):
        up = u_d.copy()
        um = u_d.copy()
        up[j] += fd_step
        um[j] -= fd_step
        rp = _probe(model, w0, up, u_c, f"gust input column {j}")
        rm = _probe(model, w0, um, u_c, f"gust input column {j}")
        Bg[:, j] = (rp - rm) / (2 * fd_step)
    return Bg


# ---------------------------------------------------------------------------
# eigenbasis


@dataclass(frozen=True)
class BasisSelection:
    """Thresholds for picking modes out of the Jacobian spectrum.

    ``origin_radius`` bounds ``|lambda|`` for a real eigenvalue to count as
    near the origin; when ``None`` it is ``origin_fraction * max|lambda|``.
    Complex pairs with damping ratio at most ``light_damping`` are taken
    next, then the remaining pairs, then the remaining real modes (ascending
    ``|lambda|``). Pairs are ranked by ascending damping ratio, or by
    ascending frequency ``|Im lambda|`` when ``pair_order="frequency"``.

    With ``skip_repeated`` a cluster of repeated eigenvalues is passed over
    instead of triggering a reduction error; such clusters typically belong
    to lag states that no other state observes.
    """

    origin_radius: float | None = None
    origin_fraction: float = 0.05
    light_damping: float = 0.2
    pair_order: str = "damping"
    skip_repeated: bool = False
    real_tol: float = 1e-9
    defect_tol: float = 1e-6

    def __post_init__(self):
        if self.pair_order not in ("damping", "frequency"):
            raise ConfigError("pair_order must be 'damping' or 'frequency'",
                              field="pair_order")
        if self.origin_radius is not None and self.origin_radius < 0:
            raise ConfigError("origin_radius must be non-negative",
                              field="origin_radius")


@dataclass(frozen=True)
class ModeInfo:
    index: int
    eigenvalue: complex
    tag: str  # "real" or "structural"
    reason: str
    partner: int  # position of the conjugate inside the basis (self if real)


@dataclass(frozen=True)
class EigenBasis:
    """Retained eigenvalues with biorthonormal right/left eigenvectors.

    Ordering: real modes first, then each complex pair as
    (positive imaginary part, conjugate).
    """

    lambdas: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    selection_report: tuple = ()
    skipped: tuple = ()

    @property
    def m(self) -> int:
        return self.lambdas.size

    @property
    def partner(self) -> np.ndarray:
        return np.array([info.partner for info in self.selection_report],
                        dtype=int)

    def biorthonormality_error(self) -> float:
        return float(np.max(np.abs(self.Psi.conj().T @ self.Phi
                                   - np.eye(self.m))))

    def representatives(self) -> np.ndarray:
        """Indices of real modes and of the first member of each pair."""
        p = self.partner
        return np.array([k for k in range(self.m) if p[k] >= k], dtype=int)


def _damping_ratio(lam):
    r = abs(lam)
    return 0.0 if r == 0 else -lam.real / r


def select_basis(jac, m: int, criteria: BasisSelection | None = None
                 ) -> EigenBasis:
    """Eigendecompose ``jac`` and retain ``m`` modes (pairs kept atomic).

    Parameters
    ----------
    jac : JacobianMatrix or (n, n) ndarray
    m : int
        Requested number of eigenvalues. When the last admitted item is a
        complex pair that overshoots ``m`` by one, both members are kept and
        a warning is issued.
    criteria : BasisSelection, optional
    """
    crit = BasisSelection() if criteria is None else criteria
    A = jac.entries if isinstance(jac, JacobianMatrix) else np.asarray(jac, float)
    n = A.shape[0]
    if m < 1 or m > n:
        raise ContractError(f"requested {m} modes from a {n}-state system")

    lam, vl, vr = la.eig(A, left=True, right=True)
    scale = max(float(np.max(np.abs(lam))), 1e-300)
    tol_im = crit.real_tol * scale
    is_real = np.abs(lam.imag) <= tol_im
    lam = np.where(is_real, lam.real + 0j, lam)

    radius = (crit.origin_radius if crit.origin_radius is not None
              else crit.origin_fraction * scale)

    reals = [i for i in range(n) if is_real[i]]
    uppers = [i for i in range(n) if not is_real[i] and lam[i].imag > 0]
    lowers = [i for i in range(n) if not is_real[i] and lam[i].imag < 0]

    def conj_of(i):
        cands = [j for j in lowers if j not in used_lower]
        j = min(cands, key=lambda j: abs(lam[j] - np.conj(lam[i])))
        used_lower.add(j)
        return j

    used_lower: set = set()
    pairs = [(i, conj_of(i)) for i in uppers]

    def repeated(i):
        close = np.abs(lam - lam[i]) <= crit.defect_tol * scale
        return np.count_nonzero(close) > 1

    skipped = []
    if crit.skip_repeated:
        for i in reals + uppers:
            if repeated(i):
                skipped.append(complex(lam[i]))
        reals = [i for i in reals if not repeated(i)]
        pairs = [p for p in pairs if not repeated(p[0])]

    if crit.pair_order == "frequency":
        def rank(p):
            return (abs(lam[p[0]].imag), _damping_ratio(lam[p[0]]))
    else:
        def rank(p):
            return (_damping_ratio(lam[p[0]]), abs(lam[p[0]].imag))

    near = sorted([i for i in reals if abs(lam[i]) <= radius],
                  key=lambda i: abs(lam[i]))
    light = sorted([p for p in pairs if _damping_ratio(lam[p[0]])
                    <= crit.light_damping], key=rank)
    other_pairs = sorted([p for p in pairs if p not in light], key=rank)
    other_real = sorted([i for i in reals if i not in near],
                        key=lambda i: abs(lam[i]))

    queue = ([("real", (i,), "real eigenvalue near origin") for i in near]
             + [("structural", p, "lightly damped complex pair") for p in light]
             + [("structural", p, f"fill: next complex pair by {crit.pair_order}")
                for p in other_pairs]
             + [("real", (i,), "fill: next real eigenvalue by magnitude")
                for i in other_real])

    available = sum(len(idx) for _, idx, _ in queue)
    if available < m:
        raise ReductionError(
            f"only {available} admissible modes for a request of {m} "
            f"({len(skipped)} repeated eigenvalues skipped); choose a "
            "different number of modes")
    chosen = []
    count = 0
    for tag, idx, reason in queue:
        if count >= m:
            break
        if len(idx) == 2 and count + 2 > m:
            warnings.warn(
                f"requested {m} modes but a complex pair straddles the limit; "
                f"keeping both members ({count + 2} modes)", stacklevel=2)
        chosen.append((tag, idx, reason))
        count += len(idx)

    # real modes first, then pairs
    chosen.sort(key=lambda item: 0 if item[0] == "real" else 1)
    order, report = [], []
    for tag, idx, reason in chosen:
        base = len(order)
        if len(idx) == 1:
            order.append(idx[0])
            report.append(ModeInfo(idx[0], complex(lam[idx[0]]), tag, reason,
                                   base))
        else:
            order.extend(idx)
            report.append(ModeInfo(idx[0], complex(lam[idx[0]]), tag, reason,
                                   base + 1))
            report.append(ModeInfo(idx[1], complex(lam[idx[1]]), tag, reason,
                                   base))
    order = np.array(order)

    lam_sel = lam[order]
    Phi = vr[:, order].astype(complex)
    Psi = vl[:, order].astype(complex)
    # real eigenvalues get real eigenvectors
    for k, info in enumerate(report):
        if info.partner == k:
            Phi[:, k] = _realify(Phi[:, k])
            Psi[:, k] = _realify(Psi[:, k])
    # enforce exact conjugate symmetry inside each pair
    for k, info in enumerate(report):
        if info.partner > k:
            Phi[:, info.partner] = Phi[:, k].conj()
            Psi[:, info.partner] = Psi[:, k].conj()
            lam_sel[info.partner] = np.conj(lam_sel[k])

    # defective / repeated retained eigenvalues
    for k in range(len(order)):
        close = np.abs(lam - lam_sel[k]) <= crit.defect_tol * scale
        if np.count_nonzero(close) > 1:
            raise ReductionError(
                f"retained eigenvalue {lam_sel[k]:.6g} is repeated or "
                f"defective; choose a different number of modes")

    Phi /= np.linalg.norm(Phi, axis=0)
    norms = np.einsum("ik,ik->k", Psi.conj(), Phi)
    if np.any(np.abs(norms) < 1e-12):
        raise ReductionError("left/right eigenvectors are (nearly) orthogonal; "
                             "the retained eigenvalue is defective")
    Psi = Psi / norms.conj()
    basis = EigenBasis(lam_sel, Phi, Psi, tuple(report), tuple(skipped))
    if basis.biorthonormality_error() > 1e-10:
        raise ReductionError(
            "biorthonormality check failed "
            f"(max error {basis.biorthonormality_error():.3g})")
    return basis


def _realify(v):
    """Rotate a complex vector spanning a real line onto the real axis."""
    k = int(np.argmax(np.abs(v)))
    v = v * (abs(v[k]) / v[k])
    return v.real + 0j


def _real_directions(basis: EigenBasis):
    """Real vectors ``V`` and complex ``T`` with ``Phi = V T^-1``.

    ``V`` holds ``phi_k`` for real modes and ``(Re phi_k, Im phi_k)`` for
    each pair. Returns ``V`` and the (m, m) complex matrix ``P`` with
    ``Phi = V @ P``.
    """
    m = basis.m
    p = basis.partner
    V = np.zeros((basis.Phi.shape[0], m))
    P = np.zeros((m, m), dtype=complex)
    for k in range(m):
        if p[k] == k:
            V[:, k] = basis.Phi[:, k].real
            P[k, k] = 1.0
        elif p[k] > k:
            j = p[k]
            V[:, k] = basis.Phi[:, k].real
            V[:, j] = basis.Phi[:, k].imag
            # phi_k = Re + i Im, phi_j = Re - i Im
            P[k, k], P[j, k] = 1.0, 1.0j
            P[k, j], P[j, j] = 1.0, -1.0j
    return V, P


def _symmetric_indices(m, order):
    return list(itertools.combinations_with_replacement(range(m), order))


def _second_derivative_real(model, w0, V, h, u_d, u_c):
    """``B(v_p, v_q)`` for all ``p <= q`` via central stencils.

    Diagonal: ``[R(+hv) - 2R(0) + R(-hv)] / h**2``; off-diagonal by the
    polarization ``[R(+h(a+b)) - R(+h(a-b)) - R(-h(a-b)) + R(-h(a+b))] /
    (4 h**2)``. Both are exact for polynomials up to degree three.
    """
    m = V.shape[1]
    r0 = _probe(model, w0, u_d, u_c, "bilinear coefficients")
    out = {}
    for p, q in _symmetric_indices(m, 2):
        if p == q:
            v = V[:, p]
            rp = _probe(model, w0 + h * v, u_d, u_c, f"B({p},{p})")
            rm = _probe(model, w0 - h * v, u_d, u_c, f"B({p},{p})")
            out[p, q] = (rp - 2 * r0 + rm) / h**2
        else:
            s = V[:, p] + V[:, q]
            d = V[:, p] - V[:, q]
            r1 = _probe(model, w0 + h * s, u_d, u_c, f"B({p},{q})")
            r2 = _probe(model, w0 + h * d, u_d, u_c, f"B({p},{q})")
            r3 = _probe(model, w0 - h * d, u_d, u_c, f"B({p},{q})")
            r4 = _probe(model, w0 - h * s, u_d, u_c, f"B({p},{q})")
            out[p, q] = (r1 - r2 - r3 + r4) / (4 * h**2)
    return out


def _third_derivative_real(model, w0, V, h, u_d, u_c):
    """``C(v_p, v_q, v_r)`` for all ``p <= q <= r``.

    The cubic form ``g(v) = C(v, v, v)`` comes from the central stencil
    ``[R(2hv) - 2R(hv) + 2R(-hv) - R(-2hv)] / (2 h**3)`` (even terms cancel)
    and mixed entries from the polarization identity
    ``6 C(a,b,c) = g(a+b+c) - g(a+b) - g(a+c) - g(b+c) + g(a) + g(b) + g(c)``.
    """
    m = V.shape[1]
    cache = {}

    def g(key):
        if key not in cache:
            v = V[:, list(key)].sum(axis=1)
            what = f"C{key}"
            r1 = _probe(model, w0 + 2 * h * v, u_d, u_c, what)
            r2 = _probe(model, w0 + h * v, u_d, u_c, what)
            r3 = _probe(model, w0 - h * v, u_d, u_c, what)
            r4 = _probe(model, w0 - 2 * h * v, u_d, u_c, what)
            cache[key] = (r1 - 2 * r2 + 2 * r3 - r4) / (2 * h**3)
        return cache[key]

    out = {}
    for p, q, r in _symmetric_indices(m, 3):
        if p == q == r:
            out[p, q, r] = g((p,))
        elif p == q or q == r:
            # C(a,a,b) from g(a+b) - g(a-b) = 6 C(a,a,b) + 2 C(b,b,b)
            a, b = (p, r) if p == q else (q, p)
            va, vb = V[:, a], V[:, b]
            key_p, key_m = ("+", a, b), ("-", a, b)
            for key, v in ((key_p, va + vb), (key_m, va - vb)):
                if key not in cache:
                    what = f"C({a},{a},{b})"
                    r1 = _probe(model, w0 + 2 * h * v, u_d, u_c, what)
                    r2 = _probe(model, w0 + h * v, u_d, u_c, what)
                    r3 = _probe(model, w0 - h * v, u_d, u_c, what)
                    r4 = _probe(model, w0 - 2 * h * v, u_d, u_c, what)
                    cache[key] = (r1 - 2 * r2 + 2 * r3 - r4) / (2 * h**3)
            out[p, q, r] = (cache[key_p] - cache[key_m] - 2 * g((b,))) / 6.0
        else:
            out[p, q, r] = (g((p, q, r)) - g((p, q)) - g((p, r)) - g((q, r))
                            + g((p,)) + g((q,)) + g((r,))) / 6.0
    return out


def _full_symmetric(entries, m, order, n):
    T = np.empty((n,) + (m,) * order)
    for idx, val in entries.items():
        for perm in set(itertools.permutations(idx)):
            T[(slice(None),) + perm] = val
    return T


def compute_bilinear_coefficients(model: Model, basis: EigenBasis, w0,
                                  fd_step: float = TENSOR_STEP, u_c=None
                                  ) -> np.ndarray:
    """Projected second-order coefficients ``D`` (shape ``(m, m, m)``).

    ``D[k, i, j] = 1/2 psi_k^H B(phi_i, phi_j)``; symmetric in ``i, j`` by
    construction. Uses ``2 m + 4 m (m - 1) / 2 + 1`` residual evaluations.
    """
    w0 = np.asarray(w0, dtype=float)
    u_d, u_c = _inputs(model, u_c)
    V, P = _real_directions(basis)
    n, m = V.shape
    Breal = _full_symmetric(
        _second_derivative_real(model, w0, V, fd_step, u_d, u_c), m, 2, n)
    # B(phi_i, phi_j) = sum_pq P_pi P_qj B(v_p, v_q)
    Bphi = np.einsum("npq,pi,qj->nij", Breal, P, P)
    D = 0.5 * np.einsum("nk,nij->kij", basis.Psi.conj(), Bphi)
    return 0.5 * (D + D.transpose(0, 2, 1))


def compute_trilinear_coefficients(model: Model, basis: EigenBasis, w0,
                                   fd_step: float = TENSOR_STEP, u_c=None
                                   ) -> np.ndarray:
    """Projected third-order coefficients ``E`` (shape ``(m, m, m, m)``).

    ``E[k, i, j, l] = 1/6 psi_k^H C(phi_i, phi_j, phi_l)``, symmetric under
    any permutation of ``i, j, l``. ``O(m**3)`` residual evaluations.
    """
    w0 = np.asarray(w0, dtype=float)
    u_d, u_c = _inputs(model, u_c)
    V, P = _real_directions(basis)
    n, m = V.shape
    Creal = _full_symmetric(
        _third_derivative_real(model, w0, V, fd_step, u_d, u_c), m, 3, n)
    Cphi = np.einsum("npqr,pi,qj,rl->nijl", Creal, P, P, P)
    E = np.einsum("nk,nijl->kijl", basis.Psi.conj(), Cphi) / 6.0
    sym = sum(E.transpose((0,) + tuple(1 + np.array(perm)))
              for perm in itertools.permutations(range(3))) / 6.0
    # copy the sorted-index entry to every permutation so the symmetry is
    # exact in floating point, not just up to summation order
    idx = np.sort(np.indices((m, m, m)).reshape(3, -1), axis=0)
    return sym[:, idx[0], idx[1], idx[2]].reshape(sym.shape)


# ---------------------------------------------------------------------------
# reduced model


@dataclass(frozen=True)
class RomModel:
    """Excitation-independent reduced model.

    Attributes
    ----------
    basis : EigenBasis
    Bg_reduced : (m, n_disturbance) complex ndarray
        ``Psi^H B_g``.
    order : int
        1 (linear), 2 (adds ``D``) or 3 (adds ``E``).
    base_point : (n,) ndarray
        Equilibrium the expansion is taken about.
    D, E : ndarray or None
    """

    basis: EigenBasis
    Bg_reduced: np.ndarray
    order: int
    base_point: np.ndarray
    D: np.ndarray | None = None
    E: np.ndarray | None = None
    descriptor: ModelDescriptor | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise ContractError("order must be 1, 2 or 3")
        if self.order == 1 and (self.D is not None or self.E is not None):
            raise ContractError("an order-1 ROM carries no D or E tensors")
        if self.order == 2 and (self.D is None or self.E is not None):
            raise ContractError("an order-2 ROM needs D and no E")
        if self.order == 3 and self.E is None:
            raise ContractError("an order-3 ROM needs E")
        object.__setattr__(self, "_real", None)

    @property
    def m(self) -> int:
        return self.basis.m

    @property
    def n_states(self) -> int:
        return self.basis.Phi.shape[0]

    def residual(self, z, u_d) -> np.ndarray:
        """Reduced right-hand side for complex ``z`` (length ``m``)."""
        z = np.asarray(z, dtype=complex)
        u_d = np.atleast_1d(np.asarray(u_d, dtype=float))
        dz = self.basis.lambdas * z + self.Bg_reduced @ u_d
        if self.D is not None:
            dz = dz + np.einsum("kij,i,j->k", self.D, z, z)
        if self.E is not None:
            dz = dz + np.einsum("kijl,i,j,l->k", self.E, z, z, z)
        return dz

    def real_form(self) -> "RealRom":
        """Equivalent real polynomial system (cached)."""
        if self._real is None:
            object.__setattr__(self, "_real", RealRom.from_rom(self))
        return self._real

    def project(self, w) -> np.ndarray:
        """``z = Psi^H (w - w0)``."""
        dw = np.asarray(w, dtype=float) - self.base_point
        return self.basis.Psi.conj().T @ dw

    def reconstruct(self, z) -> np.ndarray:
        return reconstruct(self, z)

    def with_order(self, order: int) -> "RomModel":
        """Same coefficients truncated to a lower order."""
        if order > self.order:
            raise ContractError("cannot raise the order without new tensors")
        return RomModel(
            self.basis, self.Bg_reduced, order, self.base_point,
            D=self.D if order >= 2 else None,
            E=self.E if order >= 3 else None,
            descriptor=self.descriptor, metadata=dict(self.metadata),
        )


@dataclass(frozen=True)
class RealRom:
    """Real polynomial form ``q' = L q + Q2 (q x q) + Q3 (q x q x q) + b u``.

    ``z = P q`` with ``q`` made of real-mode amplitudes and the real and
    imaginary parts of each pair representative. Only the distinct
    monomials are kept.
    """

    P: np.ndarray
    L: np.ndarray
    Bu: np.ndarray
    i2: np.ndarray
    j2: np.ndarray
    Q2: np.ndarray
    i3: np.ndarray
    Q3: np.ndarray
    V: np.ndarray  # real reconstruction directions, dw = V q

    @classmethod
    def from_rom(cls, rom: RomModel) -> "RealRom":
        m = rom.m
        p = rom.basis.partner
        # z = P q
        P = np.zeros((m, m), dtype=complex)
        for k in range(m):
            if p[k] == k:
                P[k, k] = 1.0
            elif p[k] > k:
                j = p[k]
                P[k, k], P[k, j] = 1.0, 1.0j
                P[j, k], P[j, j] = 1.0, -1.0j
        Pinv = np.linalg.inv(P)

        def realpart(X, what):
            if np.max(np.abs(X.imag), initial=0.0) > 1e-8 * max(
                    1.0, np.max(np.abs(X), initial=0.0)):
                raise ConsistencyError(f"{what} lost conjugate symmetry")
            return X.real.copy()

        L = realpart(Pinv @ np.diag(rom.basis.lambdas) @ P, "linear part")
        Bu = realpart(Pinv @ rom.Bg_reduced, "input part")
        V = realpart(rom.basis.Phi @ P, "reconstruction")

        pairs2 = _symmetric_indices(m, 2)
        i2 = np.array([a for a, _ in pairs2], dtype=int)
        j2 = np.array([b for _, b in pairs2], dtype=int)
        Q2 = np.zeros((m, len(pairs2)))
        if rom.D is not None:
            Dq = realpart(np.einsum("ak,kij,ib,jc->abc", Pinv, rom.D, P, P),
                          "bilinear tensor")
            for t, (b, c) in enumerate(pairs2):
                Q2[:, t] = Dq[:, b, c] + (Dq[:, c, b] if b != c else 0.0)
        triples = _symmetric_indices(m, 3)
        # cubic monomial = (q_i q_j)[pair index] * q_l
        pair_pos = {pr: t for t, pr in enumerate(pairs2)}
        i3 = np.array([[pair_pos[(a, b)], c] for a, b, c in triples], dtype=int
                      ).reshape(-1, 2)
        Q3 = np.zeros((m, len(triples)))
        if rom.E is not None:
            Eq = realpart(np.einsum("ak,kijl,ib,jc,ld->abcd", Pinv, rom.E, P, P,
                                    P), "trilinear tensor")
            for t, idx in enumerate(triples):
                Q3[:, t] = sum(Eq[(slice(None),) + perm]
                               for perm in set(itertools.permutations(idx)))
        return cls(P, L, Bu, i2, j2, Q2, i3, Q3, V)

    def make_rhs(self, order: int):
        L, Bu, i2, j2, Q2 = self.L, self.Bu, self.i2, self.j2, self.Q2
        a3, b3, Q3 = self.i3[:, 0], self.i3[:, 1], self.Q3
        if order == 1:
            def rhs(q, u):
                return L @ q + Bu @ u
        elif order == 2:
            def rhs(q, u):
                return L @ q + Q2 @ (q[i2] * q[j2]) + Bu @ u
        else:
            def rhs(q, u):
                qq = q[i2] * q[j2]
                return L @ q + Q2 @ qq + Q3 @ (qq[a3] * q[b3]) + Bu @ u
        return rhs


def _expand_pairs(x, reps, partner, axis):
    """Fill conjugate members from representative slices along ``axis``."""
    shape = list(x.shape)
    shape[axis] = len(partner)
    full = np.empty(shape, dtype=complex)
    for pos, k in enumerate(reps):
        dst = [slice(None)] * len(shape)
        src = [slice(None)] * len(shape)
        dst[axis], src[axis] = k, pos
        full[tuple(dst)] = x[tuple(src)]
        if partner[k] != k:
            dst[axis] = partner[k]
            full[tuple(dst)] = x[tuple(src)].conj()
    return full


def _expand_tensor(x, reps, partner):
    """Rows of conjugate members: ``T[conj k, i, ...] = conj(T[k, conj i, ...])``."""
    full = np.empty((len(partner),) + x.shape[1:], dtype=complex)
    for pos, k in enumerate(reps):
        full[k] = x[pos]
        if partner[k] != k:
            idx = (pos,) + np.ix_(*[partner] * (x.ndim - 1))
            full[partner[k]] = x[idx].conj()
    return full


def assemble_rom(basis: EigenBasis, Bg_reduced, order: int, base_point,
                 D=None, E=None, descriptor=None, metadata=None) -> RomModel:
    """Bundle coefficients into a :class:`RomModel` (order/tensor checks)."""
    Bg_reduced = np.asarray(Bg_reduced, dtype=complex)
    if Bg_reduced.ndim == 1:
        Bg_reduced = Bg_reduced[:, None]
    if Bg_reduced.shape[0] != basis.m:
        raise ContractError("reduced input matrix does not match the basis")
    m = basis.m
    if D is not None and np.shape(D) != (m, m, m):
        raise ContractError("D must have shape (m, m, m)")
    if E is not None and np.shape(E) != (m, m, m, m):
        raise ContractError("E must have shape (m, m, m, m)")
    if order == 3 and D is None:
        D = np.zeros((m, m, m), dtype=complex)
    # conjugate members are derived exactly from their representatives
    reps, partner = basis.representatives(), basis.partner
    Bg_reduced = _expand_pairs(Bg_reduced[reps], reps, partner, 0)
    if D is not None:
        D = _expand_tensor(np.asarray(D, dtype=complex)[reps], reps, partner)
    if E is not None:
        E = _expand_tensor(np.asarray(E, dtype=complex)[reps], reps, partner)
    return RomModel(basis, Bg_reduced, order, np.asarray(base_point, float),
                    D=D, E=E, descriptor=descriptor,
                    metadata=dict(metadata or {}))


def build_rom(model: Model, w0, m: int, order: int = 1,
              criteria: BasisSelection | None = None,
              jacobian_step: float = JACOBIAN_STEP,
              tensor_step: float = TENSOR_STEP, u_c=None) -> RomModel:
    """Jacobian, basis, input projection and tensors in one call."""
    if order not in (1, 2, 3):
        raise ContractError("order must be 1, 2 or 3")
    jac = compute_jacobian(model, w0, jacobian_step, u_c=u_c)
    basis = select_basis(jac, m, criteria)
    Bg = compute_gust_input_matrix(model, w0, jacobian_step, u_c=u_c)
    D = E = None
    if order >= 2:
        D = compute_bilinear_coefficients(model, basis, w0, tensor_step, u_c)
    if order >= 3:
        E = compute_trilinear_coefficients(model, basis, w0, tensor_step, u_c)
    meta = {"jacobian_step": jacobian_step, "tensor_step": tensor_step,
            "model": model.name}
    return assemble_rom(basis, basis.Psi.conj().T @ Bg, order, w0, D=D, E=E,
                        descriptor=model.descriptor, metadata=meta)


def reconstruct(rom: RomModel, z, imag_tol: float = 1e-12) -> np.ndarray:
    """Full-order state(s) ``w0 + Phi z`` from reduced state(s).

    ``z`` may be a single reduced state (``m``) or a stack (``k, m``).
    Pair handling is verified: the imaginary residue of ``Phi z`` must stay
    below ``imag_tol`` relative to its magnitude.
    """
    z = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(z)):
        raise ContractError("reduced state must be finite")
    full = z @ rom.basis.Phi.T
    scale = max(1.0, float(np.max(np.abs(full), initial=0.0)))
    if np.max(np.abs(full.imag), initial=0.0) > imag_tol * scale:
        raise ConsistencyError(
            "reconstruction has a non-negligible imaginary part; the reduced "
            "state is not conjugate-consistent")
    return rom.base_point + full.real


# ---------------------------------------------------------------------------
# serialization


def _canonical_payload(rom: RomModel) -> dict:
    """Half-pair payload: only representative rows of ``Phi``/``Psi``/``D``/``E``."""
    b = rom.basis
    reps = b.representatives()

    def c(arr):
        arr = np.asarray(arr, dtype=complex)
        # adding 0.0 maps -0.0 to 0.0 so the hash ignores the sign of zero
        return {"re": (arr.real + 0.0).tolist(), "im": (arr.imag + 0.0).tolist()}

    desc = rom.descriptor
    payload = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "order": rom.order,
        "descriptor": None if desc is None else {
            "n_states": desc.n_states,
            "n_disturbance_inputs": desc.n_disturbance_inputs,
            "n_control_inputs": desc.n_control_inputs,
            "state_labels": list(desc.state_labels),
            "nondimensional_time": desc.nondimensional_time,
        },
        "base_point": np.asarray(rom.base_point, float).tolist(),
        "m": b.m,
        "representatives": reps.tolist(),
        "partner": b.partner.tolist(),
        "modes": [{"index": i.index, "tag": i.tag, "reason": i.reason}
                  for i in b.selection_report],
        "skipped": c(np.array(b.skipped, dtype=complex)),
        "lambdas": c(b.lambdas[reps]),
        "Phi": c(b.Phi[:, reps]),
        "Psi": c(b.Psi[:, reps]),
        "Bg_reduced": c(rom.Bg_reduced[reps]),
        "D": None if rom.D is None else c(rom.D[reps]),
        "E": None if rom.E is None else c(rom.E[reps]),
        "metadata": rom.metadata,
    }
    return payload


def content_hash(rom: RomModel) -> str:
    text = json.dumps(_canonical_payload(rom), sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def save_rom(rom: RomModel, path, build_seconds: float | None = None) -> str:
    """Write ``rom`` as JSON with a SHA-256 content hash; returns the hash.

    Complex quantities are stored as ``{"re": ..., "im": ...}``. Only one
    member of each conjugate pair is stored; the other is its conjugate.
    Floats are written with round-trip precision. ``build_seconds`` is kept
    outside the hashed content.
    """
    payload = _canonical_payload(rom)
    digest = content_hash(rom)
    payload["sha256"] = digest
    if build_seconds is not None:
        payload["build_seconds"] = float(build_seconds)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    return digest


def read_build_seconds(path) -> float | None:
    """Build time recorded alongside a saved ROM, if any."""
    with open(path) as fh:
        return json.load(fh).get("build_seconds")


def load_rom(path) -> RomModel:
    """Read a file written by :func:`save_rom`, verifying hash and
    biorthonormality."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConsistencyError(f"ROM file is not valid JSON: {exc}") from exc
    if payload.get("format") != FORMAT_NAME:
        raise ConsistencyError("not a gustrom ROM file")
    stored = payload.pop("sha256", None)
    payload.pop("build_seconds", None)

    def c(obj):
        if obj is None:
            return None
        re = np.array(obj["re"], float)
        out = np.empty(re.shape, dtype=complex)
        out.real, out.imag = re, np.array(obj["im"], float)
        return out

    m = payload["m"]
    reps = payload["representatives"]
    partner = np.array(payload["partner"], dtype=int)

    lambdas = _expand_pairs(c(payload["lambdas"]), reps, partner, 0)
    Phi = _expand_pairs(c(payload["Phi"]), reps, partner, 1)
    Psi = _expand_pairs(c(payload["Psi"]), reps, partner, 1)
    report = tuple(
        ModeInfo(mode["index"], complex(lambdas[k]), mode["tag"],
                 mode["reason"], int(partner[k]))
        for k, mode in enumerate(payload["modes"]))
    skipped = payload.get("skipped")
    skipped = () if skipped is None else tuple(complex(v) for v in c(skipped))
    basis = EigenBasis(lambdas, Phi, Psi, report, skipped)
    if basis.biorthonormality_error() > 1e-10:
        raise ConsistencyError("loaded basis is not biorthonormal")
    d = payload["descriptor"]
    desc = None if d is None else ModelDescriptor(
        d["n_states"], d["n_disturbance_inputs"], d["n_control_inputs"],
        tuple(d["state_labels"]), d["nondimensional_time"])
    D, E = c(payload["D"]), c(payload["E"])
    rom = RomModel(basis, _expand_pairs(c(payload["Bg_reduced"]), reps,
                                        partner, 0),
                   payload["order"], np.array(payload["base_point"], float),
                   D=None if D is None else _expand_tensor(D, reps, partner),
                   E=None if E is None else _expand_tensor(E, reps, partner),
                   descriptor=desc, metadata=payload.get("metadata", {}))
    if stored is not None and content_hash(rom) != stored:
        raise ConsistencyError("ROM file content hash mismatch")
    return rom
