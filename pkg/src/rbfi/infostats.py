"""Plug-in entropy / mutual information and the linear-correlation contrast."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .beamforming import optimal_labels, sinusoidal_codebook
from .features import fit_pca, fit_quantizer, quantize

# plug-in estimates are flagged when n < ADEQUACY_FACTOR * joint alphabet size
ADEQUACY_FACTOR = 100


def _entropy_from_counts(counts) -> float:
    c = np.asarray([v for v in counts if v > 0], dtype=float)
    if c.size == 0:
        raise ValueError("empty sample")
    p = c / c.sum()
    return float(max(0.0, -(p * np.log2(p)).sum()))


@dataclass(frozen=True)
class DiscreteJoint:
    """Empirical joint distribution of (symbol, label) pairs."""

    counts: dict
    n: int

    @classmethod
    def from_samples(cls, symbols, labels) -> DiscreteJoint:
        symbols = _as_hashable(symbols)
        labels = [int(v) for v in labels]
        if len(symbols) != len(labels):
            raise ValueError("symbols and labels differ in length")
        return cls(dict(Counter(zip(symbols, labels))), len(labels))

    def marginal(self, axis: int) -> Counter:
        out = Counter()
        for key, c in self.counts.items():
            out[key[axis]] += c
        return out

    def mutual_information(self) -> float:
        hs = _entropy_from_counts(self.marginal(0).values())
        hl = _entropy_from_counts(self.marginal(1).values())
        hj = _entropy_from_counts(self.counts.values())
        return max(0.0, hs + hl - hj)


def _as_hashable(symbols):
    arr = np.asarray(symbols)
    if arr.ndim == 1:
        return [int(v) if np.issubdtype(arr.dtype, np.integer) else v for v in arr.tolist()]
    return [tuple(row) for row in arr.tolist()]


def entropy(labels) -> float:
    """Plug-in Shannon entropy in bits."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty sample")
    _, counts = np.unique(labels, return_counts=True, axis=0 if labels.ndim > 1 else None)
    return _entropy_from_counts(counts)


def mutual_information(symbols, labels) -> float:
    """Plug-in I(symbol; label) in bits, clamped at zero.

    ``symbols`` may be a 1-D array of ids or an (N, d) array of discrete tuples.
    """
    symbols = np.asarray(symbols)
    labels = np.asarray(labels)
    if len(symbols) != len(labels):
        raise ValueError("symbols and labels differ in length")
    if symbols.ndim > 1:
        sym_ids = np.unique(symbols, axis=0, return_inverse=True)[1].ravel()
    else:
        sym_ids = np.unique(symbols, return_inverse=True)[1].ravel()
    lab_ids = np.unique(labels, return_inverse=True)[1].ravel()
    joint = sym_ids.astype(np.int64) * (lab_ids.max() + 1) + lab_ids
    hs = _entropy_from_counts(np.bincount(sym_ids))
    hl = _entropy_from_counts(np.bincount(lab_ids))
    hj = _entropy_from_counts(np.bincount(joint))
    return max(0.0, hs + hl - hj)


def max_abs_linear_correlation(features, labels) -> float:
    """Largest |Pearson r| between any feature column and the label index."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=float)
    if len(y) < 2:
        raise ValueError("need at least two samples")
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt((Xc ** 2).sum(axis=0))
    sy = np.sqrt((yc ** 2).sum())
    if sy == 0:
        return 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (Xc * yc[:, None]).sum(axis=0) / (sx * sy)
    r = np.where(sx > 0, r, 0.0)
    return float(min(1.0, np.abs(r).max()))


@dataclass(frozen=True)
class FeasibilityRow:
    codebook_size: int
    h_label_bits: float
    mi_bits: float
    max_abs_corr: float
    n_samples: int
    adequate: bool

    def as_dict(self):
        return {
            "codebook_size": self.codebook_size,
            "H_label_bits": self.h_label_bits,
            "MI_bits": self.mi_bits,
            "max_abs_corr": self.max_abs_corr,
            "n_samples": self.n_samples,
            "adequacy_flag": int(self.adequate),
        }


def feasibility_symbols(cbs_features, pca_k: int = 3, levels: int = 8) -> np.ndarray:
    """Angular features -> PCA(k) -> per-component Lloyd quantiser -> cell indices."""
    Z = fit_pca(cbs_features, pca_k).transform(cbs_features)
    idx, _ = quantize(Z, fit_quantizer(Z, levels))
    return idx


def feasibility_row(symbols, labels, levels: int, corr_features, codebook_size: int) -> FeasibilityRow:
    pca_k = symbols.shape[1] if symbols.ndim > 1 else 1
    alphabet = (levels ** pca_k) * codebook_size
    n = len(labels)
    return FeasibilityRow(
        codebook_size=codebook_size,
        h_label_bits=entropy(labels),
        mi_bits=mutual_information(symbols, labels),
        max_abs_corr=max_abs_linear_correlation(corr_features, labels),
        n_samples=n,
        adequate=n >= ADEQUACY_FACTOR * alphabet,
    )


def feasibility_report(dataset, sizes=(2, 4, 8, 16, 32), pca_k: int = 3, levels: int = 8,
                       cbs_selection=None, shuffle_seed: int | None = None) -> list[FeasibilityRow]:
    """MI between preprocessed CBS features and the optimal sinusoidal-beam label.

    Labels are recomputed from the stored TBS channels for each codebook size.
    The linear-correlation column uses the raw CBS channel real/imaginary parts
    when the dataset kept them, otherwise the angular features. The plug-in
    estimate after PCA and quantisation is a lower bound on the MI carried by
    the full channel, up to estimator bias.
    """
    sel = list(range(len(dataset.cbs_features))) if cbs_selection is None else list(cbs_selection)
    feats = np.concatenate([dataset.cbs_features[i] for i in sel], axis=1)
    symbols = feasibility_symbols(feats, pca_k, levels)
    if dataset.cbs_channels is not None:
        raw = np.concatenate([dataset.cbs_channels[i] for i in sel], axis=1)
        corr_features = np.concatenate([raw.real, raw.imag], axis=1)
    else:
        corr_features = feats
    rows = []
    for size in sizes:
        labels, _ = optimal_labels(dataset.tbs_channels, sinusoidal_codebook(size, dataset.tbs_channels.shape[1]))
        if shuffle_seed is not None:
            labels = np.random.default_rng(shuffle_seed).permutation(labels)
        rows.append(feasibility_row(symbols, labels, levels, corr_features, size))
    return rows

