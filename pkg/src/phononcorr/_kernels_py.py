"""Pure-numpy versions of the compiled kernels.

Ladder-type operators are stored as "monomials": at most one nonzero per row,
``M[i, src[i]] = w[i]`` (``w[i] == 0`` marks an empty row).
"""

import numpy as np


def lindblad_rhs(rho, diag, hsrc, hw, jsrc, jw, out):
    """Write ``-i(H_eff rho - rho H_eff^dag) + sum_k L_k rho L_k^dag`` into ``out``.

    ``H_eff = diag(diag) + sum_k M_k`` and ``rho`` must be Hermitian.
    """
    a = diag[:, None] * rho
    for src, w in zip(hsrc, hw):
        a += w[:, None] * rho[src, :]
    np.subtract(a, a.conj().T, out=out)
    out *= -1j
    for src, w in zip(jsrc, jw):
        out += (w[:, None] * w.conj()[None, :]) * rho[np.ix_(src, src)]


def pair_histogram(starts, stops, bin_width, half_bins, counts):
    """Accumulate stop-minus-start delays into ``counts`` (bins centred on k*bin_width)."""
    window = (half_bins + 0.5) * bin_width
    lo = np.searchsorted(stops, starts - window, side="left")
    hi = np.searchsorted(stops, starts + window, side="left")
    n = hi - lo
    if n.sum() == 0:
        return
    first = np.repeat(lo - np.concatenate(([0], np.cumsum(n)[:-1])), n)
    idx = first + np.arange(n.sum())
    delay = stops[idx] - np.repeat(starts, n)
    b = np.floor(delay / bin_width + 0.5).astype(np.int64) + half_bins
    b = b[(b >= 0) & (b < 2 * half_bins + 1)]
    counts += np.bincount(b, minlength=counts.shape[0])
