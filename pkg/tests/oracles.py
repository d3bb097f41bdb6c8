"""Independent reference constructions used to check the library.

Nothing here imports lecho.  Operators are built with explicit loops over
basis states instead of Kronecker products.
"""

import numpy as np


def site_matrix(n_sites, site, axis):
    """``I_site^axis`` by enumerating basis states (bit i set = site i down)."""
    dim = 2**n_sites
    out = np.zeros((dim, dim), dtype=complex)
    for b in range(dim):
        down = (b >> site) & 1
        flipped = b ^ (1 << site)
        if axis == "z":
            out[b, b] = -0.5 if down else 0.5
        elif axis == "x":
            out[flipped, b] = 0.5
        elif axis == "y":
            # I^y |up> = i/2 |down>,  I^y |down> = -i/2 |up>
            out[flipped, b] = -0.5j if down else 0.5j
        elif axis == "+":
            if down:
                out[flipped, b] = 1.0
        elif axis == "-":
            if not down:
                out[flipped, b] = 1.0
    return out


def total(n_sites, axis):
    return sum(site_matrix(n_sites, i, axis) for i in range(n_sites))


def flipflop_dipolar(n_sites, d):
    """``sum d_ij [2 I_i^z I_j^z - (I_i^+ I_j^- + I_i^- I_j^+)/2]``."""
    dim = 2**n_sites
    h = np.zeros((dim, dim), dtype=complex)
    for i in range(n_sites):
        for j in range(i + 1, n_sites):
            zz = site_matrix(n_sites, i, "z") @ site_matrix(n_sites, j, "z")
            pm = site_matrix(n_sites, i, "+") @ site_matrix(n_sites, j, "-")
            h += d[i, j] * (2 * zz - 0.5 * (pm + pm.conj().T))
    return h


def couplings(positions, prefactor, field=(0.0, 0.0, 1.0)):
    pos = np.asarray(positions, dtype=float)
    f = np.asarray(field, dtype=float) / np.linalg.norm(field)
    n = len(pos)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                r = pos[j] - pos[i]
                rn = np.linalg.norm(r)
                c = r @ f / rn
                d[i, j] = prefactor * (1 - 3 * c * c) / rn**3
    return d


def expm_herm(h, t):
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def pair_second_moment(d):
    """Hand-derived second moment of ``d(3 I1z I2z - I1.I2)`` against ``I^y``.

    ``[H, I^y] = -3 i d (I1x I2z + I1z I2x)``, whose squared trace norm is
    ``9 d^2 / 2``, over ``Tr[I^y I^y] = 2``.
    """
    return 9.0 * d * d / 4.0
