"""Multilevel discrete wavelet transform of packet-size sequences.

Only orthonormal families are provided. Signals are zero-extended on the
right to a power-of-two length of at least ``2**levels`` so every requested
level exists; within that padded block the filter bank wraps periodically,
which keeps the transform orthonormal for filters longer than two taps.
For Haar the wrap never reaches across a pair, so the result is identical
to plain zero extension.
"""

from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from ._validation import check_levels, check_signal
from .exceptions import ConfigError

_S2 = sqrt(2.0)
_S3 = sqrt(3.0)

# Low-pass analysis filters; high-pass filters are derived as quadrature mirrors.
_LOWPASS = {
    "haar": np.array([1.0 / _S2, 1.0 / _S2]),
    "db2": np.array([1.0 + _S3, 3.0 + _S3, 3.0 - _S3, 1.0 - _S3]) / (4.0 * _S2),
}
_ALIASES = {"db1": "haar"}


def available_families():
    return sorted(set(_LOWPASS) | set(_ALIASES))


def filter_pair(family):
    """Return the ``(lowpass, highpass)`` analysis filters for ``family``.

    The high-pass filter is the alternating flip of the low-pass one,
    ``h[m] = (-1)**m * g[L-1-m]``, so for Haar ``h = (1, -1) / sqrt(2)``.
    """
    name = _ALIASES.get(str(family).lower(), str(family).lower())
    try:
        g = _LOWPASS[name]
    except KeyError:
        raise ConfigError(
            f"unknown wavelet family {family!r}; available: {', '.join(available_families())}"
        ) from None
    L = g.size
    h = np.array([(-1.0) ** m * g[L - 1 - m] for m in range(L)])
    return g.copy(), h


def canonical_family(family):
    filter_pair(family)
    return _ALIASES.get(str(family).lower(), str(family).lower())


def optimal_levels(n):
    """Decomposition depth ``floor(log2(n))`` for a sequence of length ``n``.

    The result is lifted to 1 for ``n == 1`` so that a decomposition always
    exists.

    >>> optimal_levels(56), optimal_levels(4096), optimal_levels(1)
    (5, 12, 1)
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ConfigError(f"sequence length must be a positive integer, got {n!r}")
    return max(1, int(n).bit_length() - 1)


def padded_length(n, levels):
    """Smallest power of two that is ``>= max(n, 2**levels)``."""
    target = max(int(n), 1 << levels)
    return 1 << (target - 1).bit_length()


@dataclass(frozen=True)
class WaveletDecomposition:
    """Detail arrays ``D_1..D_J`` plus the final approximation ``A_J``."""

    levels: int
    details: list
    approx: np.ndarray
    family: str
    signal_length: int
    padded_length: int
    boundary: str = field(default="zero-pad")

    def coefficient_arrays(self):
        """All arrays in feature order: ``D_1, ..., D_J, A_J``."""
        return [*self.details, self.approx]

    def energy(self):
        return float(sum(np.dot(c, c) for c in self.coefficient_arrays()))


def _analysis_step(x, g, h):
    n = x.size
    if g.size == 2:
        even, odd = x[0::2], x[1::2]
        return g[0] * even + g[1] * odd, h[0] * even + h[1] * odd
    taps = np.arange(g.size)
    idx = (2 * np.arange(n // 2)[:, None] + taps[None, :]) % n
    windows = x[idx]
    return windows @ g, windows @ h


def dwt(signal, levels, family="haar"):
    """Decompose ``signal`` into ``levels`` detail arrays and one approximation.

    Each level filters the previous approximation with the low/high-pass pair
    and keeps every second output, ``A[k] = sum_m g[m] x[2k+m]`` and
    ``D[k] = sum_m h[m] x[2k+m]``.

    Parameters
    ----------
    signal : array-like of shape (n,)
        Packet sizes; cast to float64.
    levels : int
        Number of levels ``J >= 1``.
    family : str
        Wavelet family name, ``"haar"`` by default.

    Returns
    -------
    WaveletDecomposition
    """
    levels = check_levels(levels)
    g, h = filter_pair(family)
    x = check_signal(signal)
    n_pad = padded_length(x.size, levels)
    approx = np.zeros(n_pad)
    approx[: x.size] = x
    details = []
    for _ in range(levels):
        approx, detail = _analysis_step(approx, g, h)
        details.append(detail)
    return WaveletDecomposition(
        levels=levels,
        details=details,
        approx=approx,
        family=canonical_family(family),
        signal_length=int(x.size),
        padded_length=n_pad,
    )
