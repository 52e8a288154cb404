"""Wavelet feature metrics and the bidirectional flow feature vector.

For every coefficient array of a decomposition four metrics are computed:
relative energy (percent of the decomposition's total energy), mean absolute
value, population standard deviation and Shannon entropy (bits) of the
normalised absolute coefficients. Applying these to ``D_1..D_J`` and ``A_J``
of both directions yields ``8 * J + 8`` features per flow.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_levels, check_signal
from .exceptions import DataError
from .wavelet import canonical_family, dwt

METRICS = ("energy", "absmean", "std", "entropy")
DIRECTIONS = ("fwd", "bwd")


def rel_energy(decomp):
    """Percentage of total energy held by each array, ``D_1..D_J`` then ``A_J``.

    A decomposition with zero total energy maps to all zeros.
    """
    energies = np.array([np.dot(c, c) for c in decomp.coefficient_arrays()])
    total = energies.sum()
    if total == 0.0:
        return np.zeros_like(energies)
    return energies / total * 100.0


def abs_mean(coeffs):
    c = check_signal(coeffs, "coefficient array")
    return float(np.mean(np.abs(c)))


def std_dev(coeffs):
    """Population standard deviation (divisor ``N``) of the coefficients."""
    c = check_signal(coeffs, "coefficient array")
    return float(np.sqrt(np.mean((c - c.mean()) ** 2)))


def shannon_entropy(coeffs):
    """Entropy in bits of ``p[k] = |c[k]| / sum(|c|)``.

    Uses ``0 * log2(0) = 0``; an all-zero array has entropy 0.
    """
    a = np.abs(check_signal(coeffs, "coefficient array"))
    total = a.sum()
    if total == 0.0:
        return 0.0
    p = a[a > 0] / total
    return float(max(0.0, -np.sum(p * np.log2(p))))


def level_metrics(decomp):
    """Metric block for one decomposition, shape ``(levels + 1, 4)``."""
    arrays = decomp.coefficient_arrays()
    out = np.empty((len(arrays), len(METRICS)))
    out[:, 0] = rel_energy(decomp)
    for i, c in enumerate(arrays):
        out[i, 1] = abs_mean(c)
        out[i, 2] = std_dev(c)
        out[i, 3] = shannon_entropy(c)
    return out


def n_features(levels):
    return 8 * check_levels(levels) + 8


def feature_names(levels):
    """Stable column names ``{dir}_{D<j>|A<J>}_{metric}`` in vector order."""
    levels = check_levels(levels)
    bands = [f"D{j}" for j in range(1, levels + 1)] + [f"A{levels}"]
    return [f"{d}_{b}_{m}" for d in DIRECTIONS for b in bands for m in METRICS]


def direction_features(sizes, levels, family="haar"):
    """Flattened ``4 * (levels + 1)`` metric block for one direction.

    An empty sequence is treated as the zero signal.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0:
        sizes = np.zeros(1)
    return level_metrics(dwt(sizes, levels, family)).ravel()


@dataclass
class FeatureVector:
    values: np.ndarray
    names: list
    label: str = None
    category: str = None
    file: str = None
    key: str = None
    segment: int = None
    empty_directions: tuple = field(default=())

    def __len__(self):
        return len(self.values)


def extract(flow, levels, family="haar"):
    """Feature vector of a metered flow (forward block, then backward block)."""
    levels = check_levels(levels)
    fwd, bwd = flow.fwd_sizes, flow.bwd_sizes
    if len(fwd) == 0 and len(bwd) == 0:
        raise DataError(f"flow {getattr(flow, 'key', '?')} has no packets")
    values = np.concatenate(
        [direction_features(fwd, levels, family), direction_features(bwd, levels, family)]
    )
    return FeatureVector(
        values=values,
        names=feature_names(levels),
        label=getattr(flow, "label", None),
        category=getattr(flow, "category", None),
        file=getattr(flow, "file", None),
        key=str(flow.key) if getattr(flow, "key", None) is not None else None,
        segment=getattr(flow, "segment_index", None),
        empty_directions=tuple(d for d, s in zip(DIRECTIONS, (fwd, bwd)) if len(s) == 0),
    )


def _as_pair(item):
    if hasattr(item, "fwd_sizes"):
        return item.fwd_sizes, item.bwd_sizes
    fwd, bwd = item
    return fwd, bwd


class WaveletFeatureExtractor(TransformerMixin, BaseEstimator):
    """Transformer mapping flows to their ``8 * levels + 8`` wavelet features.

    Stateless: ``fit`` only validates the parameters and records the output
    dimension. ``transform`` accepts flow objects (anything with
    ``fwd_sizes``/``bwd_sizes``) or ``(fwd_sizes, bwd_sizes)`` pairs.

    Parameters
    ----------
    levels : int, default=5
        Decomposition depth ``J``.
    wavelet : str, default="haar"
        Orthonormal wavelet family.
    """

    def __init__(self, levels=5, wavelet="haar"):
        self.levels = levels
        self.wavelet = wavelet

    def fit(self, X=None, y=None):
        check_levels(self.levels)
        canonical_family(self.wavelet)
        self.n_features_out_ = n_features(self.levels)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        rows = []
        for item in X:
            fwd, bwd = _as_pair(item)
            if len(fwd) == 0 and len(bwd) == 0:
                raise DataError("cannot extract features from a flow with no packets")
            rows.append(
                np.concatenate(
                    [
                        direction_features(fwd, self.levels, self.wavelet),
                        direction_features(bwd, self.levels, self.wavelet),
                    ]
                )
            )
        if not rows:
            return np.empty((0, self.n_features_out_))
        return np.vstack(rows)

    def get_feature_names_out(self, input_features=None):
        return np.asarray(feature_names(self.levels), dtype=object)
