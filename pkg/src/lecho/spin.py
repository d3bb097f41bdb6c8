"""Spin-1/2 operator algebra on an N-site Hilbert space.

Basis convention
----------------
Computational product basis with site 0 as the fastest-varying index: the
basis state with index ``b`` has site ``i`` up when bit ``i`` of ``b`` is 0
and down when it is 1.  ``I_i^z`` is therefore ``+1/2`` on even indices for
site 0.  All scalars are angular frequencies (rad/s) with hbar = 1.

Operators are plain ``numpy.ndarray`` (dense) or ``scipy.sparse.csr_array``
(sparse) complex matrices.  Dense storage is used up to
``DENSE_MAX_SITES`` sites.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

Operator = Union[np.ndarray, sp.sparray]

#: Largest number of sites for which operators are stored densely.
DENSE_MAX_SITES = 12

_SINGLE = {
    "x": np.array([[0, 0.5], [0.5, 0]], dtype=complex),
    "y": np.array([[0, -0.5j], [0.5j, 0]], dtype=complex),
    "z": np.array([[0.5, 0], [0, -0.5]], dtype=complex),
    # |up> is basis index 0, so I+ maps index 1 -> index 0
    "+": np.array([[0, 1], [0, 0]], dtype=complex),
    "-": np.array([[0, 0], [1, 0]], dtype=complex),
}
_ALIASES = {"p": "+", "m": "-", "−": "-"}


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """Spin-1/2 sites in space, with the static field direction.

    Parameters
    ----------
    positions : (N, 3) array_like
        Site coordinates in nm.
    field_direction : 3-vector, optional
        Direction of the static field (normalized on construction).
    coupling_prefactor : float
        ``(mu0/4pi) gamma^2 hbar / 2`` expressed in rad/s * nm^3.
    coupling_cutoff : float, optional
        Pairs further apart than this (nm) are uncoupled.
    """

    positions: np.ndarray
    field_direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    coupling_prefactor: float = 377.3
    coupling_cutoff: Optional[float] = None

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must have shape (N, 3), got {pos.shape}")
        fd = np.asarray(self.field_direction, dtype=float).reshape(3)
        norm = np.linalg.norm(fd)
        if not np.isfinite(norm) or norm == 0:
            raise ValueError("field_direction must be a nonzero finite vector")
        fd = fd / norm
        if pos.shape[0] > 1:
            diff = pos[:, None, :] - pos[None, :, :]
            dist = np.linalg.norm(diff, axis=-1)
            iu = np.triu_indices(pos.shape[0], 1)
            if np.any(dist[iu] <= 0):
                raise ValueError("coincident sites: all pairwise distances must be > 0")
        if self.coupling_cutoff is not None and self.coupling_cutoff <= 0:
            raise ValueError("coupling_cutoff must be positive")
        pos.setflags(write=False)
        fd.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "field_direction", fd)
        object.__setattr__(self, "coupling_prefactor", float(self.coupling_prefactor))

    @property
    def n_sites(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return 2**self.n_sites

    @property
    def dense(self) -> bool:
        return self.n_sites <= DENSE_MAX_SITES

    @cached_property
    def couplings(self) -> np.ndarray:
        """Symmetric (N, N) table of dipolar couplings d_ij in rad/s."""
        from .hamiltonians import dipolar_couplings

        table = dipolar_couplings(self)
        table.setflags(write=False)
        return table

    @cached_property
    def _ops(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "positions_nm": self.positions.tolist(),
            "field_direction": self.field_direction.tolist(),
            "coupling_prefactor": self.coupling_prefactor,
            "coupling_cutoff": self.coupling_cutoff,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpinSystem":
        positions = d.get("positions_nm", d.get("positions"))
        if positions is None:
            raise ValueError("geometry requires 'positions_nm'")
        if "n_sites" in d and len(positions) != d["n_sites"]:
            raise ValueError(
                f"n_sites={d['n_sites']} does not match {len(positions)} positions"
            )
        kwargs = {}
        if d.get("field_direction") is not None:
            kwargs["field_direction"] = d["field_direction"]
        if d.get("coupling_prefactor") is not None:
            kwargs["coupling_prefactor"] = d["coupling_prefactor"]
        return cls(positions, coupling_cutoff=d.get("coupling_cutoff"), **kwargs)


def random_geometry(
    n_sites: int,
    seed: int = 0,
    box_nm: Optional[float] = None,
    min_distance_nm: float = 0.3,
    spacing_nm: float = 0.5,
    max_tries: int = 100_000,
) -> np.ndarray:
    """Place sites uniformly in a cube subject to a minimum pair distance.

    The cube edge defaults to ``spacing_nm * n_sites**(1/3)`` so the site
    density does not depend on N.
    """
    if n_sites < 1:
        raise ValueError("n_sites must be >= 1")
    if box_nm is None:
        box_nm = spacing_nm * n_sites ** (1 / 3)
    rng = np.random.default_rng(seed)
    pts: list[np.ndarray] = []
    tries = 0
    while len(pts) < n_sites:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(
                f"could not place {n_sites} sites in a {box_nm} nm box "
                f"with minimum distance {min_distance_nm} nm"
            )
        p = rng.uniform(0.0, box_nm, size=3)
        if all(np.linalg.norm(p - q) >= min_distance_nm for q in pts):
            pts.append(p)
    return np.array(pts)


def _axis_key(axis: str) -> str:
    axis = _ALIASES.get(axis, axis)
    if axis not in _SINGLE:
        raise ValueError(f"unknown spin axis {axis!r}")
    return axis


def _embed(n_sites: int, site: int, single: np.ndarray) -> sp.csr_array:
    # site 0 fastest: kron(I_(2^(N-1-i)), op, I_(2^i))
    left = sp.identity(2 ** (n_sites - 1 - site), dtype=complex, format="csr")
    right = sp.identity(2**site, dtype=complex, format="csr")
    return sp.csr_array(sp.kron(sp.kron(left, sp.csr_array(single)), right, format="csr"))


def _finish(op, dense: bool) -> Operator:
    if dense:
        out = op.toarray() if sp.issparse(op) else np.asarray(op)
        out.setflags(write=False)
        return out
    return sp.csr_array(op)


def site_operator(system: SpinSystem, site: int, axis: str) -> Operator:
    """Single-site spin operator ``I_site^axis`` embedded in the full space."""
    if not 0 <= site < system.n_sites:
        raise IndexError(f"site {site} out of range for {system.n_sites} sites")
    key = ("site", site, _axis_key(axis))
    cache = system._ops
    if key not in cache:
        op = _embed(system.n_sites, site, _SINGLE[key[2]])
        cache[key] = _finish(op, system.dense)
    return cache[key]


def site_operator_sparse(n_sites: int, site: int, axis: str) -> sp.csr_array:
    return _embed(n_sites, site, _SINGLE[_axis_key(axis)])


def collective_operator(system: SpinSystem, axis: str) -> Operator:
    """Total spin component ``I^axis = sum_i I_i^axis``."""
    axis = _axis_key(axis)
    if axis not in "xyz":
        raise ValueError("collective operators are defined for x, y, z")
    key = ("total", axis)
    cache = system._ops
    if key not in cache:
        n = system.n_sites
        if axis == "z":
            op = sp.diags_array(_total_z_diagonal(n).astype(complex), format="csr")
        else:
            op = sum(site_operator_sparse(n, i, axis) for i in range(n))
        cache[key] = _finish(op, system.dense)
    return cache[key]


def _total_z_diagonal(n_sites: int) -> np.ndarray:
    idx = np.arange(2**n_sites)
    down = np.zeros(idx.shape, dtype=int)
    for i in range(n_sites):
        down += (idx >> i) & 1
    return 0.5 * n_sites - down


def magnetization_diagonal(system: SpinSystem) -> np.ndarray:
    """Eigenvalues of ``I^z`` in basis order (real)."""
    return _total_z_diagonal(system.n_sites).astype(float)


def axis_operator(system: SpinSystem, direction: Sequence[float], site: Optional[int] = None) -> Operator:
    """``n . I`` for a unit vector n, on one site or summed over all sites."""
    n = np.asarray(direction, dtype=float).reshape(3)
    n = n / np.linalg.norm(n)
    if site is None:
        parts = [collective_operator(system, a) for a in "xyz"]
    else:
        parts = [site_operator(system, site, a) for a in "xyz"]
    return _finish(n[0] * parts[0] + n[1] * parts[1] + n[2] * parts[2], system.dense)


def dagger(a: Operator) -> Operator:
    return a.conj().T


def commutator(a: Operator, b: Operator) -> Operator:
    return a @ b - b @ a


def to_dense(a: Operator) -> np.ndarray:
    return a.toarray() if sp.issparse(a) else np.asarray(a)


def max_abs(a: Operator) -> float:
    if sp.issparse(a):
        return float(np.max(np.abs(a.data))) if a.nnz else 0.0
    return float(np.max(np.abs(a))) if a.size else 0.0


def is_hermitian(a: Operator, atol: float = 1e-12) -> bool:
    return max_abs(a - dagger(a)) < atol


def trace_product(a: Operator, b: Operator) -> complex:
    """``Tr[A B]`` without forming the product."""
    if sp.issparse(a) or sp.issparse(b):
        a = sp.csr_array(a) if not sp.issparse(a) else a
        return complex(a.multiply(b.T).sum())
    return complex(np.einsum("ij,ji->", a, b))


def normalized_overlap(a: Operator, b: Operator, imag_tol: float = 1e-10) -> float:
    """Return ``Tr[A B] / Tr[B B]``.

    Raises if the result carries an imaginary part above ``imag_tol``, which
    cannot happen for Hermitian inputs.
    """
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    den = trace_product(b, b)
    if abs(den) == 0:
        raise ZeroDivisionError("normalized_overlap: Tr[B B] is zero")
    val = trace_product(a, b) / den
    if abs(val.imag) > imag_tol:
        raise ValueError(f"overlap has imaginary part {val.imag:.3e}; inputs not Hermitian?")
    return float(val.real)
