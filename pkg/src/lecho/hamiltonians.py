"""Dipolar Hamiltonians, tilted-frame scaling and perturbation operators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

from .spin import (
    Operator,
    SpinSystem,
    _finish,
    collective_operator,
    commutator,
    dagger,
    site_operator_sparse,
    trace_product,
)

AxisLike = Union[str, Sequence[float]]

_UNIT = {
    "x": np.array([1.0, 0.0, 0.0]),
    "y": np.array([0.0, 1.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
}

PERTURBATION_MODELS = ("random_dipolar", "nonsecular_residual", "zeeman_disorder")


def _unit(axis: AxisLike) -> np.ndarray:
    if isinstance(axis, str):
        try:
            return _UNIT[axis]
        except KeyError:
            raise ValueError(f"unknown axis {axis!r}") from None
    n = np.asarray(axis, dtype=float).reshape(3)
    return n / np.linalg.norm(n)


def dipolar_couplings(system: SpinSystem) -> np.ndarray:
    """Coupling table ``d_ij = prefactor (1 - 3 cos^2 theta_ij) / r_ij^3``.

    ``theta_ij`` is the angle between the internuclear vector and the field.
    """
    pos = system.positions
    n = pos.shape[0]
    d = np.zeros((n, n))
    if n < 2:
        return d
    rij = pos[None, :, :] - pos[:, None, :]
    r = np.linalg.norm(rij, axis=-1)
    iu = np.triu_indices(n, 1)
    if np.any(r[iu] <= 0):
        raise ValueError("coincident sites")
    cos = (rij[iu] @ system.field_direction) / r[iu]
    vals = system.coupling_prefactor * (1.0 - 3.0 * cos**2) / r[iu] ** 3
    if system.coupling_cutoff is not None:
        vals = np.where(r[iu] > system.coupling_cutoff, 0.0, vals)
    d[iu] = vals
    d[(iu[1], iu[0])] = vals
    return d


def _pair_xxz(n_sites: int, couplings: np.ndarray, axis: np.ndarray) -> sp.csr_array:
    """``sum_{i<j} J_ij (3 (n.I_i)(n.I_j) - I_i.I_j)`` as a sparse matrix."""
    dim = 2**n_sites
    ops = {
        a: [site_operator_sparse(n_sites, i, a) for i in range(n_sites)] for a in "xyz"
    }
    proj = [sum(c * ops[a][i] for c, a in zip(axis, "xyz") if c != 0) for i in range(n_sites)]
    h = sp.csr_array((dim, dim), dtype=complex)
    for i in range(n_sites):
        for j in range(i + 1, n_sites):
            jij = couplings[i, j]
            if jij == 0:
                continue
            dot = sum(ops[a][i] @ ops[a][j] for a in "xyz")
            h = h + jij * (3.0 * (proj[i] @ proj[j]) - dot)
    h.sum_duplicates()
    h.eliminate_zeros()
    return h


def secular_dipolar(system: SpinSystem, axis: AxisLike = "z") -> Operator:
    """Secular dipolar (XXZ) Hamiltonian with quantization along ``axis``.

    ``axis`` is ``'x'``, ``'y'``, ``'z'`` or any 3-vector in the rotating frame;
    the couplings always come from the geometry relative to the static field.
    """
    n = _unit(axis)
    key = ("dipolar", tuple(np.round(n, 15)))
    cache = system._ops
    if key not in cache:
        cache[key] = _finish(_pair_xxz(system.n_sites, system.couplings, n), system.dense)
    return cache[key]


def k_from_theta(theta: float) -> float:
    """Scale factor ``(3 cos^2 theta - 1) / 2`` of the tilted-frame dipolar term."""
    if not -1e-12 <= theta <= np.pi / 2 + 1e-12:
        raise ValueError(f"theta={theta} outside [0, pi/2]")
    return 0.5 * (3.0 * np.cos(theta) ** 2 - 1.0)


def theta_from_k(k: float) -> float:
    if not -0.5 - 1e-12 <= k <= 1.0 + 1e-12:
        raise ValueError(f"k={k} outside [-0.5, 1]")
    c2 = min(max((2.0 * k + 1.0) / 3.0, 0.0), 1.0)
    return float(np.arccos(np.sqrt(c2)))


MAGIC_ANGLE = theta_from_k(0.0)


def rf_parameters(k: float, omega_e: float) -> tuple[float, float]:
    """r.f. amplitude and off-resonance giving scale factor ``k`` at fixed ``omega_e``.

    ``cos^2 theta = (2k+1)/3 = Omega^2 / omega_e^2``, so
    ``omega_1 = omega_e sqrt(2(1-k)/3)`` and ``Omega = omega_e sqrt((2k+1)/3)``.
    """
    if omega_e <= 0:
        raise ValueError("omega_e must be positive")
    if not -0.5 - 1e-12 <= k <= 1.0 + 1e-12:
        raise ValueError(f"k={k} outside [-0.5, 1]")
    omega_1 = omega_e * np.sqrt(max(2.0 * (1.0 - k) / 3.0, 0.0))
    offset = omega_e * np.sqrt(max((2.0 * k + 1.0) / 3.0, 0.0))
    return float(omega_1), float(offset)


@dataclass(frozen=True)
class ScalingSpec:
    """Off-resonance irradiation setting producing the scale factor ``k``."""

    k: float
    theta: float
    omega_e: float
    omega_1: float
    omega_offset: float

    def __post_init__(self):
        if abs(k_from_theta(self.theta) - self.k) > 1e-12:
            raise ValueError("k and theta are inconsistent")
        lhs = self.omega_1**2 + self.omega_offset**2
        if abs(lhs - self.omega_e**2) > 1e-10 * self.omega_e**2:
            raise ValueError("omega_1^2 + Omega^2 must equal omega_e^2")

    @classmethod
    def from_k(cls, k: float, omega_e: float) -> "ScalingSpec":
        theta = theta_from_k(k)
        w1, off = rf_parameters(k, omega_e)
        return cls(k=k_from_theta(theta), theta=theta, omega_e=omega_e, omega_1=w1, omega_offset=off)

    @property
    def tau_e(self) -> float:
        """Stroboscopic Floquet period ``2 pi / omega_e`` (s)."""
        return 2.0 * np.pi / self.omega_e

    @property
    def beta(self) -> float:
        """Hard-pulse angle ``pi/2 - theta`` rotating the effective axis onto x."""
        return 0.5 * np.pi - self.theta

    @property
    def effective_axis(self) -> np.ndarray:
        return np.array([np.sin(self.theta), 0.0, np.cos(self.theta)])


def scaled_hamiltonian(system: SpinSystem, k: float) -> Operator:
    """Ideal effective generator ``k H_d^x``."""
    if not -0.5 - 1e-12 <= k <= 1.0 + 1e-12:
        raise ValueError(f"k={k} outside [-0.5, 1]")
    return k * secular_dipolar(system, "x")


def tilted_frame_hamiltonian(
    system: SpinSystem, scaling: ScalingSpec, sign: int = 1, form: str = "secular"
) -> Operator:
    """Hamiltonian of one irradiation block.

    ``form='secular'``: ``-sign omega_e I^Z + k H_d^Z`` with Z along the effective
    field.  ``form='microscopic'``: the untruncated rotating-frame Hamiltonian
    ``-sign Omega I^z - sign omega_1 I^x + H_d^z``.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if form == "secular":
        axis = scaling.effective_axis
        iz_tilt = np.sin(scaling.theta) * collective_operator(system, "x") + np.cos(
            scaling.theta
        ) * collective_operator(system, "z")
        h = -sign * scaling.omega_e * iz_tilt + scaling.k * secular_dipolar(system, axis)
    elif form == "microscopic":
        h = (
            -sign * scaling.omega_offset * collective_operator(system, "z")
            - sign * scaling.omega_1 * collective_operator(system, "x")
            + secular_dipolar(system, "z")
        )
    else:
        raise ValueError(f"unknown form {form!r}")
    return _finish(h, system.dense)


def second_moment(h: Operator, observable: Operator) -> float:
    """Van Vleck second moment ``Tr([H,O]^dag [H,O]) / Tr(O O)`` in rad^2/s^2."""
    if h.shape != observable.shape:
        raise ValueError(f"dimension mismatch: {h.shape} vs {observable.shape}")
    den = trace_product(observable, observable).real
    if den == 0:
        raise ZeroDivisionError("observable is zero")
    c = commutator(h, observable)
    return max(float(trace_product(dagger(c), c).real) / den, 0.0)


def native_t2(system: SpinSystem) -> float:
    """``T2 = M2^(-1/2)`` of the unscaled secular dipolar Hamiltonian (FID observable I^y)."""
    m2 = second_moment(secular_dipolar(system, "z"), collective_operator(system, "y"))
    if m2 == 0:
        raise ValueError("system has no dipolar coupling; T2 is infinite")
    return 1.0 / np.sqrt(m2)


@dataclass(frozen=True)
class PerturbationSpec:
    """Uncontrolled term added to an effective Hamiltonian.

    ``strength`` is the root second moment of the perturbation in units of
    the native ``1/T2``.
    """

    model: str = "random_dipolar"
    strength: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in PERTURBATION_MODELS:
            raise ValueError(f"unknown perturbation model {self.model!r}")
        if not self.strength >= 0:
            raise ValueError("strength must be >= 0")

    def to_dict(self) -> dict:
        return {"model": self.model, "strength": self.strength, "seed": self.seed}


def _raw_sigma(system: SpinSystem, spec: PerturbationSpec) -> sp.csr_array:
    n = system.n_sites
    rng = np.random.default_rng(spec.seed)
    if spec.model == "random_dipolar":
        j = np.zeros((n, n))
        iu = np.triu_indices(n, 1)
        j[iu] = rng.standard_normal(len(iu[0]))
        j = j + j.T
        return _pair_xxz(n, j, _UNIT["x"])
    if spec.model == "zeeman_disorder":
        h = rng.standard_normal(n)
        return sum(h[i] * site_operator_sparse(n, i, "z") for i in range(n))
    # secular part of H_d^z about x is -H_d^x / 2; the remainder is what an
    # on-resonance truncation discards
    hz = _pair_xxz(n, system.couplings, _UNIT["z"])
    hx = _pair_xxz(n, system.couplings, _UNIT["x"])
    return hz + 0.5 * hx


def perturbation_sigma(system: SpinSystem, spec: PerturbationSpec) -> Operator:
    """Hermitian, traceless perturbation with second moment ``(strength / T2)^2``.

    The second moment is taken against the collective ``I^y``, transverse to
    both the dipolar quantization axis x and the readout axis z.
    """
    dim = system.dim
    if spec.strength == 0:
        return _finish(sp.csr_array((dim, dim), dtype=complex), system.dense)
    raw = _raw_sigma(system, spec)
    iy = collective_operator(system, "y")
    m2 = second_moment(_finish(raw, system.dense), iy)
    if m2 == 0:
        raise ValueError(f"perturbation model {spec.model!r} is trivial for this system")
    target = spec.strength / native_t2(system)
    return _finish(raw * (target / np.sqrt(m2)), system.dense)
