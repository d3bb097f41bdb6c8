"""Unitary propagation: dense spectral exponentials, Lanczos action, pulse programs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.sparse.linalg import LinearOperator

from .hamiltonians import ScalingSpec, secular_dipolar, tilted_frame_hamiltonian
from .spin import Operator, SpinSystem, dagger, max_abs, to_dense

log = logging.getLogger(__name__)

KRYLOV_TOL = 1e-10
KRYLOV_MAX_DIM = 40


class NonStroboscopicTime(ValueError):
    """A block duration is not an integer multiple of the Floquet period."""


def _check_hermitian(h: Operator) -> None:
    scale = max(1.0, max_abs(h))
    if max_abs(h - dagger(h)) > 1e-12 * scale:
        raise ValueError("propagator requires a Hermitian generator")


class Spectrum:
    """Eigendecomposition of a Hermitian operator, reused across times."""

    def __init__(self, h: Operator, check: bool = True):
        if check:
            _check_hermitian(h)
        self.energies, self.vectors = eigh(to_dense(h))

    @property
    def dim(self) -> int:
        return self.energies.shape[0]

    def propagator(self, t: float, scale: float = 1.0) -> np.ndarray:
        """``exp(-i scale H t)``."""
        v = self.vectors
        return (v * np.exp(-1j * scale * t * self.energies)) @ v.conj().T

    def to_eigenbasis(self, a: Operator) -> np.ndarray:
        v = self.vectors
        return v.conj().T @ (a @ v)


def cached_spectrum(system: SpinSystem, key: tuple, builder) -> Spectrum:
    """Spectrum of ``builder()`` memoized on the system under ``key``."""
    cache = system._ops
    full = ("spectrum",) + key
    if full not in cache:
        cache[full] = Spectrum(builder())
    return cache[full]


# ---------------------------------------------------------------------------
# Lanczos action of exp(-i H t)
# ---------------------------------------------------------------------------


def expm_multiply_krylov(
    h: Operator,
    v: np.ndarray,
    t: float,
    tol: float = KRYLOV_TOL,
    max_dim: int = KRYLOV_MAX_DIM,
    breakdown_tol: float = 1e-13,
) -> np.ndarray:
    """Apply ``exp(-i h t)`` to a vector without forming the exponential.

    The Lanczos subspace grows until the a-posteriori error estimate
    ``beta_m dt |[exp(-i T_m dt)]_{m,0}|`` falls below ``tol * dt / |t|``; if
    ``max_dim`` is reached first, the step ``dt`` is halved.  A happy
    breakdown (invariant subspace) makes the step exact for the whole
    remaining time.
    """
    w = np.array(v, dtype=complex)
    if w.ndim == 2:
        return np.column_stack(
            [expm_multiply_krylov(h, w[:, j], t, tol, max_dim, breakdown_tol) for j in range(w.shape[1])]
        )
    if t == 0:
        return w
    sign = 1.0 if t > 0 else -1.0
    remaining = abs(t)
    dt = remaining
    while remaining > 0:
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return w
        basis = [w / nrm]
        alpha: list[float] = []
        beta: list[float] = []
        done = False
        while not done:
            u = h @ basis[-1]
            a = float(np.vdot(basis[-1], u).real)
            u = u - a * basis[-1]
            if len(basis) > 1:
                u = u - beta[-1] * basis[-2]
            # full reorthogonalization keeps the small basis orthonormal
            for q in basis:
                u = u - np.vdot(q, u) * q
            alpha.append(a)
            b = float(np.linalg.norm(u))
            m = len(alpha)
            if b < breakdown_tol * max(1.0, abs(a)):
                dt = remaining
                small = _tridiag_exp_first_column(alpha, beta, sign * dt)
                done = True
                break
            small = _tridiag_exp_first_column(alpha, beta, sign * dt)
            err = _step_error(b, dt, small)
            if err <= tol * dt / abs(t):
                done = True
                break
            if m >= max_dim:
                while err > tol * dt / abs(t):
                    dt *= 0.5
                    small = _tridiag_exp_first_column(alpha, beta, sign * dt)
                    err = _step_error(b, dt, small)
                done = True
                break
            beta.append(b)
            basis.append(u / b)
        w = nrm * (np.column_stack(basis[: len(small)]) @ small)
        remaining -= dt
        if remaining <= abs(t) * 1e-15:
            break
        dt = min(remaining, 2.0 * dt)
    return w


def _step_error(b: float, dt: float, small: np.ndarray) -> float:
    # a last component at the rounding floor cannot be resolved further
    if abs(small[-1]) < 4 * np.finfo(float).eps:
        return 0.0
    return b * dt * abs(small[-1])


def _tridiag_exp_first_column(alpha, beta, t) -> np.ndarray:
    """First column of ``exp(-i T t)`` for the Lanczos tridiagonal ``T``."""
    if len(alpha) == 1:
        return np.array([np.exp(-1j * alpha[0] * t)])
    e, q = eigh_tridiagonal(np.asarray(alpha), np.asarray(beta[: len(alpha) - 1]))
    return q @ (np.exp(-1j * e * t) * q[0].conj())


# ---------------------------------------------------------------------------
# Propagators
# ---------------------------------------------------------------------------


def _krylov_operator(h: Operator, t: float) -> LinearOperator:
    dim = h.shape[0]
    return LinearOperator(
        (dim, dim),
        matvec=lambda x: expm_multiply_krylov(h, np.ravel(x), t),
        rmatvec=lambda x: expm_multiply_krylov(h, np.ravel(x), -t),
        matmat=lambda x: expm_multiply_krylov(h, x, t),
        dtype=complex,
    )


def propagator(h: Operator, t: float, method: Optional[str] = None) -> Union[np.ndarray, LinearOperator]:
    """``U = exp(-i h t)``.

    ``method='dense'`` (default for dense operators) returns the matrix from an
    exact eigendecomposition; ``method='krylov'`` (default for sparse
    operators) returns a ``LinearOperator`` that applies the exponential.
    """
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    _check_hermitian(h)
    if method is None:
        method = "krylov" if sp.issparse(h) else "dense"
    if method == "dense":
        return Spectrum(h, check=False).propagator(t)
    if method == "krylov":
        return _krylov_operator(sp.csr_array(h) if not sp.issparse(h) else h, t)
    raise ValueError(f"unknown method {method!r}")


def evolve_observable(u, a: Operator) -> Operator:
    """Heisenberg conjugation ``U^dag A U``."""
    if u.shape != a.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {a.shape}")
    if isinstance(u, LinearOperator):
        au = u.rmatmat(np.asarray((a @ u.matmat(np.eye(u.shape[0], dtype=complex)))))
        return au
    return dagger(u) @ (a @ u)


_PULSE_AXES = {"x": ("x", 1.0), "y": ("y", 1.0), "-x": ("x", -1.0), "-y": ("y", -1.0)}
_PULSE_AXES.update({"xbar": ("x", -1.0), "ybar": ("y", -1.0)})


def _single_rotation(axis: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if axis == "x":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if axis == "y":
        return np.array([[c, -s], [s, c]], dtype=complex)
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])


def hard_pulse(system: SpinSystem, axis: str, angle: float):
    """Instantaneous global rotation ``exp(-i angle I^axis)``; axis in x, y, -x, -y (and z)."""
    if axis == "z":
        name, sgn = "z", 1.0
    else:
        try:
            name, sgn = _PULSE_AXES[axis]
        except KeyError:
            raise ValueError(f"unknown pulse axis {axis!r}") from None
    r = _single_rotation(name, sgn * angle)
    n = system.n_sites
    if system.dense:
        u = np.array([[1.0 + 0j]])
        for _ in range(n):
            u = np.kron(r, u)
        return u

    def apply(x, mat):
        x = np.asarray(x, dtype=complex)
        cols = x.reshape(x.shape[0], -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            psi = cols[:, j].reshape((2,) * n)
            for ax in range(n):
                psi = np.moveaxis(np.tensordot(mat, psi, axes=([1], [ax])), 0, ax)
            out[:, j] = psi.reshape(-1)
        return out if x.ndim == 2 else out[:, 0]

    return LinearOperator(
        (system.dim, system.dim),
        matvec=lambda x: apply(x, r),
        rmatvec=lambda x: apply(x, r.conj().T),
        matmat=lambda x: apply(x, r),
        dtype=complex,
    )


# ---------------------------------------------------------------------------
# Pulse programs and the two-block scaling sequence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Evolution:
    hamiltonian: Operator
    duration: float
    label: str = ""


@dataclass(frozen=True)
class Rotation:
    axis: str
    angle: float


@dataclass
class PulseProgram:
    """Ordered segments (first applied first) of piecewise-constant evolution."""

    segments: list = field(default_factory=list)
    floquet_time: Optional[float] = None

    def __post_init__(self):
        for seg in self.segments:
            if isinstance(seg, Evolution) and seg.duration < 0:
                raise ValueError("segment durations must be >= 0")

    @property
    def total_time(self) -> float:
        return sum(s.duration for s in self.segments if isinstance(s, Evolution))

    def check_stroboscopic(self, rtol: float = 1e-9) -> None:
        if self.floquet_time is None:
            return
        for seg in self.segments:
            if isinstance(seg, Evolution):
                n = seg.duration / self.floquet_time
                if abs(n - round(n)) > rtol * max(1.0, n):
                    raise NonStroboscopicTime(
                        f"segment {seg.label!r} lasts {seg.duration} s = {n} tau_e"
                    )

    def unitary(self, system: SpinSystem) -> np.ndarray:
        u = np.eye(system.dim, dtype=complex)
        for seg in self.segments:
            if isinstance(seg, Evolution):
                step = propagator(seg.hamiltonian, seg.duration, method="dense")
            else:
                step = to_dense(hard_pulse(system, seg.axis, seg.angle))
            u = step @ u
        return u


def stroboscopic_time(t: float, tau_e: float, policy: str = "nearest") -> float:
    """Round a block-pair time to a multiple of ``2 tau_e`` (each block ``t/2``)."""
    if t < 0:
        raise ValueError("time must be >= 0")
    period = 2.0 * tau_e
    n = round(t / period)
    actual = n * period
    if abs(actual - t) > 1e-9 * max(period, t):
        if policy == "strict":
            raise NonStroboscopicTime(f"t={t} s is not a multiple of 2 tau_e={period} s")
        log.debug("rounded t=%.6g s to %d x 2tau_e = %.6g s", t, n, actual)
    return actual


def cwsdi_program(system: SpinSystem, scaling: ScalingSpec, t: float) -> PulseProgram:
    """Microscopic two-block sequence: (beta)_ybar, +Z block, -Z block, (beta)_y."""
    half = 0.5 * t
    return PulseProgram(
        segments=[
            Rotation("-y", scaling.beta),
            Evolution(tilted_frame_hamiltonian(system, scaling, +1, "microscopic"), half, "+Z"),
            Evolution(tilted_frame_hamiltonian(system, scaling, -1, "microscopic"), half, "-Z"),
            Rotation("y", scaling.beta),
        ],
        floquet_time=scaling.tau_e,
    )


def dipolar_x_spectrum(system: SpinSystem) -> Spectrum:
    return cached_spectrum(system, ("Hdx",), lambda: secular_dipolar(system, "x"))


def _block_spectrum(system: SpinSystem, scaling: ScalingSpec, sign: int) -> Spectrum:
    key = ("block", round(scaling.k, 14), scaling.omega_e, sign)
    return cached_spectrum(
        system, key, lambda: tilted_frame_hamiltonian(system, scaling, sign, "microscopic")
    )


def cwsdi_block_pair(
    system: SpinSystem,
    scaling: ScalingSpec,
    t: float,
    mode: str = "effective",
    policy: str = "nearest",
) -> tuple[np.ndarray, float]:
    """Propagator of the scaled-dipolar block pair and the time actually used.

    ``mode='effective'`` returns ``exp(-i k H_d^x t)`` exactly.
    ``mode='microscopic'`` composes the pulses and the two irradiation blocks
    with the untruncated rotating-frame Hamiltonians; ``t`` is first rounded
    to a multiple of ``2 tau_e`` (``policy='strict'`` raises instead).
    """
    if t < 0:
        raise ValueError("time must be >= 0")
    if not system.dense:
        raise NotImplementedError("block-pair propagators are dense-only")
    if mode == "effective":
        return dipolar_x_spectrum(system).propagator(t, scale=scaling.k), t
    if mode != "microscopic":
        raise ValueError(f"unknown mode {mode!r}")
    t_act = stroboscopic_time(t, scaling.tau_e, policy)
    half = 0.5 * t_act
    u1 = _block_spectrum(system, scaling, +1).propagator(half)
    u2 = _block_spectrum(system, scaling, -1).propagator(half)
    r = hard_pulse(system, "y", scaling.beta)
    return r @ u2 @ u1 @ r.conj().T, t_act
