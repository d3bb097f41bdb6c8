"""Measurable signals: scaled polarization, Loschmidt echoes, MQC/OTOC.

Every signal is a normalized autocorrelation ``Tr[U^dag A U A] / Tr[A A]``
where ``A`` is the readout operator (collective ``I^z`` by default) and
``U`` the composed propagator, forward segment first.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .hamiltonians import (
    PerturbationSpec,
    ScalingSpec,
    perturbation_sigma,
    secular_dipolar,
    tilted_frame_hamiltonian,
)
from .propagation import (
    Spectrum,
    cached_spectrum,
    dipolar_x_spectrum,
    hard_pulse,
    stroboscopic_time,
)
from .spin import (
    Operator,
    SpinSystem,
    collective_operator,
    magnetization_diagonal,
    site_operator,
    to_dense,
)

#: Effective-field frequency used in the experiments, rad/s.
DEFAULT_OMEGA_E = 2 * np.pi * 79.8e3

SCHEME_RANGES = {1: (0.0, 0.5), 2: (0.0, 1.0)}
REFERENCE_K = {1: 0.05, 2: 0.1}


@dataclass
class EchoCurve:
    """Sampled signal with its provenance.

    ``meta`` carries ``scheme`` (1, 2, 'p-curve', 'fid', 'otoc'), ``k``,
    ``mode``, ``perturbation`` and ``time_axis`` ('lab' or 'scaled').
    ``valid`` flags points that survived reference normalization.
    """

    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        self.meta.setdefault("time_axis", "lab")
        if self.valid is None:
            self.valid = np.ones(self.times.shape, dtype=bool)

    def __len__(self):
        return self.times.size

    def normalized_to_max(self) -> "EchoCurve":
        peak = np.nanmax(self.values)
        meta = dict(self.meta, normalized="max")
        return replace(self, values=self.values / peak, meta=meta)

    def scaled(self) -> "EchoCurve":
        """Same curve against the proper time ``t_s = k t_e``."""
        k = self.meta.get("k")
        if not k:
            raise ValueError("scaled time needs a nonzero k")
        return replace(self, times=abs(k) * self.times, meta=dict(self.meta, time_axis="scaled"))


def readout_operator(system: SpinSystem, readout: str = "collective", axis: str = "z") -> Operator:
    """Collective ``I^axis`` or the single-site ``I_0^axis``."""
    if readout == "collective":
        return collective_operator(system, axis)
    if readout == "local":
        return site_operator(system, 0, axis)
    raise ValueError(f"unknown readout {readout!r}")


# ---------------------------------------------------------------------------
# Segments and the autocorrelation kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """Evolution under ``scale * H_d^x + sigma`` for ``duration`` seconds."""

    scale: float
    duration: float
    sigma: Optional[np.ndarray] = None


def _effective_spectrum(system: SpinSystem, seg: Segment) -> tuple[Spectrum, float]:
    """Spectrum and the multiplier for its eigenvalues."""
    if seg.sigma is None:
        return dipolar_x_spectrum(system), seg.scale
    h = seg.scale * secular_dipolar(system, "x") + seg.sigma
    return Spectrum(h), 1.0


def _microscopic_unitary(system: SpinSystem, seg: Segment, omega_e: float) -> np.ndarray:
    if seg.scale == 1.0:
        # free dipolar evolution needs no irradiation and no Floquet grid
        spec, mult = _effective_spectrum(system, seg)
        return spec.propagator(seg.duration, mult)
    scaling = ScalingSpec.from_k(seg.scale, omega_e)
    r = hard_pulse(system, "y", scaling.beta)
    half = 0.5 * seg.duration
    if seg.sigma is None:
        u1 = _block(system, scaling, +1).propagator(half)
        u2 = _block(system, scaling, -1).propagator(half)
    else:
        # sigma is given in the effective frame; move it into the block frame
        s_block = r.conj().T @ seg.sigma @ r
        u1 = Spectrum(tilted_frame_hamiltonian(system, scaling, +1, "microscopic") + s_block).propagator(half)
        u2 = Spectrum(tilted_frame_hamiltonian(system, scaling, -1, "microscopic") + s_block).propagator(half)
    return r @ u2 @ u1 @ r.conj().T


def _block(system, scaling, sign) -> Spectrum:
    key = ("block", round(scaling.k, 14), scaling.omega_e, sign)
    return cached_spectrum(
        system, key, lambda: tilted_frame_hamiltonian(system, scaling, sign, "microscopic")
    )


def _overlap_from_unitary(u: np.ndarray, a: Operator, diag: Optional[np.ndarray], norm: float,
                          dephase_mask: Optional[np.ndarray] = None) -> float:
    if dephase_mask is not None:
        x = u.conj().T @ (a @ u)
        x = np.where(dephase_mask, x, 0)
        return float(np.real(np.einsum("ij,ji->", x, to_dense(a)))) / norm
    if diag is not None:
        p = np.abs(u) ** 2
        return float(diag @ p @ diag) / norm
    x = u.conj().T @ (a @ u)
    return float(np.real(np.einsum("ij,ji->", x, to_dense(a)))) / norm


class _EchoKernel:
    """Evaluates ``Tr[U^dag A U A]/Tr[A A]`` for ``U = U_B(t_B) U_F(t_F)``.

    In the effective mode both segments are diagonalized once; each time
    point then costs two matrix products, or none when both segments share
    the unperturbed eigenbasis.
    """

    def __init__(self, system: SpinSystem, a: Operator, sigma_f, sigma_b, scale_f, scale_b):
        self.system = system
        self.a = a
        self.norm = float(np.real(np.einsum("ij,ji->", to_dense(a), to_dense(a))))
        self.spec_f, self.mult_f = _effective_spectrum(system, Segment(scale_f, 0.0, sigma_f))
        self.spec_b, self.mult_b = _effective_spectrum(system, Segment(scale_b, 0.0, sigma_b))
        ad = to_dense(a)
        self.a_f = self.spec_f.to_eigenbasis(ad)
        self.shared = self.spec_f is self.spec_b
        if self.shared:
            self.a_b = self.a_f
            self.overlap = None
        else:
            self.a_b = self.spec_b.to_eigenbasis(ad)
            self.overlap = self.spec_b.vectors.conj().T @ self.spec_f.vectors

    def __call__(self, t_f: float, t_b: float) -> float:
        ph_b = np.exp(-1j * self.mult_b * t_b * self.spec_b.energies)
        y = (ph_b.conj()[:, None] * self.a_b) * ph_b[None, :]
        if not self.shared:
            y = self.overlap.conj().T @ y @ self.overlap
        ph_f = np.exp(-1j * self.mult_f * t_f * self.spec_f.energies)
        z = (ph_f.conj()[:, None] * y) * ph_f[None, :]
        return float(np.real(np.sum(z * self.a_f.T))) / self.norm


def _validate_scheme(scheme: int, k: float) -> None:
    if scheme not in SCHEME_RANGES:
        raise ValueError(f"unknown scheme {scheme!r}; expected 1 or 2")
    lo, hi = SCHEME_RANGES[scheme]
    ok = k == 0 or (lo < k <= hi if scheme == 1 else lo < k < hi)
    if not ok:
        bracket = "(0, 0.5]" if scheme == 1 else "(0, 1)"
        raise ValueError(f"k={k} outside the scheme {scheme} range {bracket} (or k=0)")


def scheme_segments(scheme: int, k: float, t_e: float) -> tuple[Segment, Segment]:
    """Forward and backward segments with adapted times ``k_F t_F = k_B t_B``."""
    _validate_scheme(scheme, k)
    if scheme == 1:
        return Segment(1.0, k * t_e), Segment(-k, t_e)
    return Segment(k, t_e), Segment(-0.5, 2.0 * k * t_e)


def place_sigma(scheme: int, sigma: Optional[np.ndarray], placement: str = "variable"):
    """Return ``(sigma_fwd, sigma_bwd)``.

    ``'variable'`` puts the perturbation only on the segment whose scale
    factor is swept (backward in scheme 1, forward in scheme 2).
    """
    if sigma is None:
        return None, None
    if placement == "both":
        return sigma, sigma
    if placement != "variable":
        raise ValueError(f"unknown placement {placement!r}")
    return (None, sigma) if scheme == 1 else (sigma, None)


def _none_if_zero(s):
    if s is None:
        return None
    s = to_dense(s)
    return None if not np.any(s) else s


def _dephase_mask(system: SpinSystem) -> np.ndarray:
    m = magnetization_diagonal(system)
    return m[:, None] == m[None, :]


def loschmidt_echo(
    system: SpinSystem,
    scheme: int,
    k: float,
    t_e: float,
    sigma_fwd: Optional[Operator] = None,
    sigma_bwd: Optional[Operator] = None,
    mode: str = "effective",
    omega_e: float = DEFAULT_OMEGA_E,
    readout: str = "collective",
    dephase: bool = False,
    policy: str = "nearest",
) -> float:
    """Loschmidt echo ``M^k(t_e)`` of scheme 1 or 2.

    Scheme 1: ``H_F = H_d^x`` for ``t_F = k t_e``, ``H_B = -k H_d^x + sigma_bwd``
    for ``t_e``.  Scheme 2: ``H_F = k H_d^x + sigma_fwd`` for ``t_e``,
    ``H_B = -H_d^x/2`` for ``2 k t_e``.  ``k = 0`` is shared by both schemes.
    """
    return echo_curve(
        system, scheme, k, [t_e], sigma_fwd=sigma_fwd, sigma_bwd=sigma_bwd, mode=mode,
        omega_e=omega_e, readout=readout, dephase=dephase, policy=policy,
    ).values[0]


def echo_curve(
    system: SpinSystem,
    scheme: int,
    k: float,
    times: Sequence[float],
    sigma_fwd: Optional[Operator] = None,
    sigma_bwd: Optional[Operator] = None,
    mode: str = "effective",
    omega_e: float = DEFAULT_OMEGA_E,
    readout: str = "collective",
    dephase: bool = False,
    policy: str = "nearest",
    normalize: bool = False,
    perturbation: Optional[PerturbationSpec] = None,
) -> EchoCurve:
    """Echo ``M^k(t_e)`` over a grid of variable-segment times ``t_e``.

    In microscopic mode each irradiated segment is rounded to a multiple of
    ``2 tau_e``; the returned times are the variable-segment times actually
    simulated.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("empty time grid")
    if np.any(times < 0):
        raise ValueError("times must be >= 0")
    _validate_scheme(scheme, k)
    if mode not in ("effective", "microscopic"):
        raise ValueError(f"unknown mode {mode!r}")
    a = readout_operator(system, readout)
    sf, sb = _none_if_zero(sigma_fwd), _none_if_zero(sigma_bwd)
    diag = magnetization_diagonal(system) if readout == "collective" else None
    norm = float(np.real(np.einsum("ij,ji->", to_dense(a), to_dense(a))))
    mask = _dephase_mask(system) if dephase else None

    actual = times.copy()
    vals = np.empty(times.size)
    if mode == "effective" and not dephase:
        fwd0, bwd0 = scheme_segments(scheme, k, 1.0)
        kernel = _EchoKernel(system, a, sf, sb, fwd0.scale, bwd0.scale)
        for i, t in enumerate(times):
            fwd, bwd = scheme_segments(scheme, k, t)
            vals[i] = kernel(fwd.duration, bwd.duration)
    else:
        tau_e = 2 * np.pi / omega_e
        for i, t in enumerate(times):
            if mode == "microscopic":
                t = stroboscopic_time(t, tau_e, policy)
                actual[i] = t
            fwd, bwd = scheme_segments(scheme, k, t)
            fwd, bwd = replace(fwd, sigma=sf), replace(bwd, sigma=sb)
            if mode == "microscopic":
                if bwd.scale != 1.0:
                    bwd = replace(bwd, duration=stroboscopic_time(bwd.duration, tau_e, "nearest"))
                u_f = _microscopic_unitary(system, fwd, omega_e)
                u_b = _microscopic_unitary(system, bwd, omega_e)
            else:
                sp_f, m_f = _effective_spectrum(system, fwd)
                sp_b, m_b = _effective_spectrum(system, bwd)
                u_f = sp_f.propagator(fwd.duration, m_f)
                u_b = sp_b.propagator(bwd.duration, m_b)
            vals[i] = _overlap_from_unitary(u_b @ u_f, a, diag, norm, mask)
    if mode == "microscopic" and actual.size > 1:
        actual, idx = np.unique(actual, return_index=True)
        vals = vals[idx]
    pert = perturbation.to_dict() if perturbation is not None else None
    curve = EchoCurve(
        actual, vals,
        meta={"scheme": scheme, "k": k, "mode": mode, "perturbation": pert, "time_axis": "lab",
              "readout": readout},
    )
    return curve.normalized_to_max() if normalize else curve


def scheme_echo_curve(
    system: SpinSystem,
    scheme: int,
    k: float,
    times: Sequence[float],
    perturbation: Optional[PerturbationSpec] = None,
    placement: str = "variable",
    **kwargs,
) -> EchoCurve:
    """``echo_curve`` with the perturbation built from a spec and placed per scheme."""
    sigma = None
    if perturbation is not None and perturbation.strength > 0:
        sigma = to_dense(perturbation_sigma(system, perturbation))
    sf, sb = place_sigma(scheme, sigma, placement)
    return echo_curve(system, scheme, k, times, sigma_fwd=sf, sigma_bwd=sb,
                      perturbation=perturbation, **kwargs)


def normalize_to_reference(
    curve: EchoCurve,
    reference: EchoCurve,
    floor: float = 0.02,
    interpolate: bool = False,
) -> EchoCurve:
    """Pointwise ``M^k(t_e) / M^ref(t_e)``.

    Points where the reference is below ``floor`` are marked invalid (value
    NaN) instead of divided.  Different time grids require
    ``interpolate=True`` (linear in time).
    """
    if curve.times.shape == reference.times.shape and np.allclose(
        curve.times, reference.times, rtol=1e-12, atol=0
    ):
        ref = reference.values
    elif interpolate:
        ref = np.interp(curve.times, reference.times, reference.values, left=np.nan, right=np.nan)
    else:
        raise ValueError("time grids differ; pass interpolate=True to interpolate the reference")
    valid = np.isfinite(ref) & (ref >= floor) & curve.valid
    out = np.full(curve.values.shape, np.nan)
    out[valid] = curve.values[valid] / ref[valid]
    meta = dict(curve.meta, normalized="reference", reference_k=reference.meta.get("k"))
    return EchoCurve(curve.times.copy(), out, meta=meta, valid=valid)


# ---------------------------------------------------------------------------
# Scaled polarization and FID
# ---------------------------------------------------------------------------


def _autocorrelation_curve(spec: Spectrum, mult: float, a: Operator, times: np.ndarray) -> np.ndarray:
    """``Tr[e^{iHt} A e^{-iHt} A]/Tr[A A]`` from the spectral decomposition."""
    ae = spec.to_eigenbasis(to_dense(a))
    w = np.abs(ae) ** 2
    norm = float(np.sum(w))
    e = spec.energies
    out = np.empty(times.size)
    for i, t in enumerate(times):
        ph = np.exp(1j * mult * t * e)
        out[i] = float(np.real(ph.conj() @ w @ ph)) / norm
    return out


def polarization_curve(
    system: SpinSystem,
    k: float,
    times: Sequence[float],
    mode: str = "effective",
    omega_e: float = DEFAULT_OMEGA_E,
    readout: str = "collective",
    policy: str = "nearest",
) -> EchoCurve:
    """``P^k(t) = Tr[U_k^dag I^z U_k I^z] / Tr[I^z I^z]`` with ``U_k = exp(-i k H_d^x t)``."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("empty time grid")
    a = readout_operator(system, readout)
    if mode == "effective":
        vals = _autocorrelation_curve(dipolar_x_spectrum(system), k, a, times)
        actual = times
    elif mode == "microscopic":
        scaling = ScalingSpec.from_k(k, omega_e)
        diag = magnetization_diagonal(system) if readout == "collective" else None
        norm = float(np.real(np.einsum("ij,ji->", to_dense(a), to_dense(a))))
        actual = np.array([stroboscopic_time(t, scaling.tau_e, policy) for t in times])
        vals = np.array([
            _overlap_from_unitary(_microscopic_unitary(system, Segment(k, t), omega_e), a, diag, norm)
            for t in actual
        ])
        actual, idx = np.unique(actual, return_index=True)
        vals = vals[idx]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return EchoCurve(actual, vals, meta={"scheme": "p-curve", "k": k, "mode": mode,
                                         "perturbation": None, "time_axis": "lab"})


def fid_curve(system: SpinSystem, times: Sequence[float]) -> EchoCurve:
    """Free induction decay of ``I^y`` under ``H_d^z``."""
    times = np.asarray(times, dtype=float)
    spec = cached_spectrum(system, ("Hdz",), lambda: secular_dipolar(system, "z"))
    vals = _autocorrelation_curve(spec, 1.0, collective_operator(system, "y"), times)
    return EchoCurve(times, vals, meta={"scheme": "fid", "k": 1.0, "mode": "effective",
                                        "perturbation": None, "time_axis": "lab"})


# ---------------------------------------------------------------------------
# MQC / OTOC
# ---------------------------------------------------------------------------


def _otoc_parts(system, k, t, mode, omega_e, excitation, sigma_bwd):
    w = to_dense(readout_operator(system, excitation, "y"))
    sb = _none_if_zero(sigma_bwd)
    if mode == "effective":
        sf_, mf = _effective_spectrum(system, Segment(k, t))
        sb_, mb = _effective_spectrum(system, Segment(-k, t, sb))
        u_f = sf_.propagator(t, mf)
        u_b = sb_.propagator(t, mb)
    elif mode == "microscopic":
        if abs(k) > 0.5:
            raise ValueError("microscopic reversal needs |k| <= 0.5")
        t = stroboscopic_time(t, 2 * np.pi / omega_e)
        u_f = _microscopic_unitary(system, Segment(k, t), omega_e)
        u_b = _microscopic_unitary(system, Segment(-k, t, sb), omega_e)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    a = u_b.conj().T @ w @ u_b
    b = u_f @ w @ u_f.conj().T
    norm = float(np.real(np.einsum("ij,ji->", w, w)))
    return a, b, norm


def otoc_mqc(
    system: SpinSystem,
    k: float,
    theta: float,
    t: float,
    mode: str = "effective",
    omega_e: float = DEFAULT_OMEGA_E,
    excitation: str = "collective",
    sigma_bwd: Optional[Operator] = None,
) -> float:
    """``M_theta(t) = Tr[A V^dag B V] / Tr[W W]`` with ``V = exp(-i theta I^z)``.

    ``W`` is ``I^y`` (collective) or ``I_0^y`` (local); ``B`` is ``W`` evolved
    forward under ``k H_d^x`` for ``t`` and ``A`` is ``W`` evolved under the
    reversed Hamiltonian ``-k H_d^x + sigma_bwd``.  ``theta = 0`` is the plain
    echo of this forward/backward pair.
    """
    if not 0 <= theta < 2 * np.pi:
        raise ValueError("theta must lie in [0, 2 pi)")
    a, b, norm = _otoc_parts(system, k, t, mode, omega_e, excitation, sigma_bwd)
    m = magnetization_diagonal(system)
    ph = np.exp(1j * theta * m)
    vbv = (ph[:, None] * b) * ph.conj()[None, :]
    val = np.einsum("ij,ji->", a, vbv) / norm
    if abs(val.imag) > 1e-10:
        raise ValueError(f"OTOC has imaginary part {val.imag:.3e}")
    return float(val.real)


def coherence_weights(
    system: SpinSystem,
    k: float,
    t: float,
    mode: str = "effective",
    omega_e: float = DEFAULT_OMEGA_E,
    excitation: str = "collective",
    sigma_bwd: Optional[Operator] = None,
) -> dict[int, float]:
    """Multiple-quantum weights by direct projection onto coherence orders.

    Order ``q`` collects matrix elements between ``I^z`` eigenvalues differing
    by ``q``; ``M_theta = sum_q exp(i q theta) w_q``.
    """
    a, b, norm = _otoc_parts(system, k, t, mode, omega_e, excitation, sigma_bwd)
    m = magnetization_diagonal(system)
    order = np.rint(m[:, None] - m[None, :]).astype(int)
    contrib = a.T * b  # A_ba B_ab, indexed [a, b]
    n = system.n_sites
    return {q: float(np.real(contrib[order == q].sum())) / norm for q in range(-n, n + 1)}


def mqc_from_theta_scan(values: Sequence[float], n_sites: int) -> dict[int, float]:
    """Coherence weights from ``M_theta`` sampled at ``theta_j = 2 pi j / K``."""
    values = np.asarray(values, dtype=float)
    k = values.size
    if k < 2 * n_sites + 1:
        raise ValueError(f"need at least {2 * n_sites + 1} theta samples to avoid aliasing")
    f = np.fft.fft(values) / k
    return {q: float(f[q % k].real) for q in range(-n_sites, n_sites + 1)}
