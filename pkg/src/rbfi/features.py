"""Angular-domain features, per-dimension Lloyd quantisation and PCA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_EPS = 1e-12


def angular_transform(h) -> np.ndarray:
    """``log10(|DFT(h)| + eps)`` with a unitary DFT, along the last axis."""
    h = np.asarray(h, dtype=complex)
    spectrum = np.fft.fft(h, axis=-1, norm="ortho")
    return np.log10(np.abs(spectrum) + LOG_EPS)


# --- Lloyd quantiser ----------------------------------------------------------

@dataclass(frozen=True)
class ScalarQuantizer:
    """Quantiser for one dimension; ``boundaries`` are the cell edges."""

    centroids: np.ndarray
    boundaries: np.ndarray
    reduced: bool = False
    distortion: float = 0.0

    @property
    def levels(self) -> int:
        return len(self.centroids)

    def index(self, x) -> np.ndarray:
        # side="left": a value sitting exactly on an edge goes to the lower cell
        return np.searchsorted(self.boundaries, x, side="left")


def _midpoints(c):
    return (c[:-1] + c[1:]) / 2.0


def _cell_stats(sorted_x, csum, csum2, boundaries):
    """Counts, sums and squared sums of the cells defined by ``boundaries``."""
    edges = np.concatenate([[0], np.searchsorted(sorted_x, boundaries, side="right"), [len(sorted_x)]])
    counts = np.diff(edges)
    sums = csum[edges[1:]] - csum[edges[:-1]]
    sums2 = csum2[edges[1:]] - csum2[edges[:-1]]
    return counts, sums, sums2


def _distortion(counts, sums, sums2, centroids, n):
    # sum over cells of sum (x - c)^2 = sum x^2 - 2 c sum x + n_cell c^2
    return float((sums2 - 2 * centroids * sums + counts * centroids ** 2).sum() / n)


def _lloyd_iterate(x, csum, csum2, c, max_iter, tol):
    n = len(x)
    b = _midpoints(c)
    counts, sums, sums2 = _cell_stats(x, csum, csum2, b)
    dist = _distortion(counts, sums, sums2, c, n)
    for _ in range(max_iter):
        nonempty = counts > 0
        new_c = c.copy()
        new_c[nonempty] = sums[nonempty] / counts[nonempty]
        new_c = np.unique(new_c)
        new_b = _midpoints(new_c)
        counts, sums, sums2 = _cell_stats(x, csum, csum2, new_b)
        new_dist = _distortion(counts, sums, sums2, new_c, n)
        assert new_dist <= dist * (1 + 1e-12) + 1e-15, "Lloyd distortion increased"
        improvement = dist - new_dist
        c, b, dist = new_c, new_b, new_dist
        if improvement <= tol * max(dist, 1e-300):
            break
    return c, b, dist


def fit_lloyd(samples, levels: int, max_iter: int = 100, tol: float = 1e-9) -> ScalarQuantizer:
    """Fit an ``levels``-cell scalar quantiser to ``samples`` with Lloyd's algorithm.

    Lloyd runs from two starts, evenly spaced sample quantiles and the
    uniform grid over the sample range, and the lower-distortion result is
    kept; the second start guarantees the fit is never worse than a uniform
    quantiser. Each run alternates nearest-centroid partitioning with
    centroid (cell-mean) updates until the relative drop in mean squared
    distortion falls below ``tol``. If the data has fewer distinct values than
    ``levels`` the level count is reduced and ``reduced`` is set.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("no samples")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    distinct = np.unique(x)
    reduced = len(distinct) < levels
    if reduced:
        starts = [distinct.copy()]
    else:
        c = np.unique(np.quantile(x, (np.arange(levels) + 0.5) / levels))
        if len(c) < levels:
            # heavy ties in the quantiles; fall back to picking distinct values
            idx = np.round(np.linspace(0, len(distinct) - 1, levels)).astype(int)
            c = distinct[idx]
        step = (x[-1] - x[0]) / levels
        starts = [c, x[0] + (np.arange(levels) + 0.5) * step]

    csum = np.concatenate([[0.0], np.cumsum(x)])
    csum2 = np.concatenate([[0.0], np.cumsum(x * x)])
    best = None
    for c0 in starts:
        fit = _lloyd_iterate(x, csum, csum2, c0, max_iter, tol)
        if best is None or fit[2] < best[2]:
            best = fit
    c, b, dist = best
    return ScalarQuantizer(c, b, reduced=reduced or len(c) < levels, distortion=dist)


@dataclass(frozen=True)
class QuantizerModel:
    """One scalar quantiser per feature dimension."""

    dims: tuple[ScalarQuantizer, ...]

    @property
    def num_dims(self) -> int:
        return len(self.dims)

    @property
    def levels(self) -> int:
        return max(q.levels for q in self.dims)


def fit_quantizer(data, levels: int, max_iter: int = 100, tol: float = 1e-9) -> QuantizerModel:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    return QuantizerModel(tuple(fit_lloyd(data[:, j], levels, max_iter, tol) for j in range(data.shape[1])))


def quantize(x, q: QuantizerModel) -> tuple[np.ndarray, np.ndarray]:
    """Cell indices and centroid reconstruction for (D,) or (N, D) input."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != q.num_dims:
        raise ValueError(f"input has {x.shape[-1]} dims, quantiser has {q.num_dims}")
    idx = np.empty(x.shape, dtype=np.int64)
    rec = np.empty(x.shape, dtype=float)
    for j, sq in enumerate(q.dims):
        i = sq.index(x[..., j])
        idx[..., j] = i
        rec[..., j] = sq.centroids[i]
    return idx, rec


# --- PCA ------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (D, k), orthonormal columns
    explained_variance: np.ndarray

    def transform(self, data) -> np.ndarray:
        return (np.asarray(data, dtype=float) - self.mean) @ self.components

    def inverse_transform(self, scores) -> np.ndarray:
        return np.asarray(scores) @ self.components.T + self.mean


def fit_pca(data, k: int) -> PcaModel:
    """Top-``k`` principal axes of the sample covariance (eigendecomposition).

    Each component is signed so that its largest-magnitude entry is positive.
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = X.shape
    if not 1 <= k <= min(n, d):
        raise ValueError(f"k={k} outside [1, {min(n, d)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = evals[order]
    rank = np.linalg.matrix_rank(Xc) if n > 1 else 0
    if k > max(rank, 1):
        raise ValueError(f"k={k} exceeds data rank {rank}")
    comps = evecs[:, order]
    pivot = np.abs(comps).argmax(axis=0)
    signs = np.sign(comps[pivot, np.arange(k)])
    comps = comps * np.where(signs == 0, 1.0, signs)
    return PcaModel(mean, comps, np.clip(evals, 0.0, None))


# --- standardisation and the full CBS feature pipeline -------------------------

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data) -> Standardizer:
        data = np.asarray(data, dtype=float)
        std = data.std(axis=0)
        return cls(data.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, data) -> np.ndarray:
        return (np.asarray(data, dtype=float) - self.mean) / self.scale


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    quantized: np.ndarray | None = None


def build_features(scenario, ue_pos, cbs_selection, q: QuantizerModel | None = None) -> FeatureVector:
    """Concatenated angular features of one UE towards the selected CBSs."""
    from .channel import channel_vector

    cbs_selection = sorted(cbs_selection)
    if not cbs_selection:
        raise ValueError("select at least one CBS")
    values = np.concatenate([angular_transform(channel_vector(scenario, ue_pos, i)) for i in cbs_selection])
    if q is None:
        return FeatureVector(values)
    idx, rec = quantize(values, q)
    return FeatureVector(rec, idx)


@dataclass(frozen=True)
class FeaturePipeline:
    """Raw angular features -> (optional) quantisation -> standardisation.

    ``input_mode`` selects what the network sees after quantisation:
    ``"values"`` (centroid reconstructions) or ``"indices"`` (cell indices).
    """

    cbs_selection: tuple[int, ...]
    quantizer: QuantizerModel | None
    standardizer: Standardizer
    input_mode: str = "values"

    @property
    def input_dim(self) -> int:
        return len(self.standardizer.mean)

    def _pre(self, raw):
        if self.quantizer is None:
            return np.asarray(raw, dtype=float)
        idx, rec = quantize(raw, self.quantizer)
        return rec if self.input_mode == "values" else idx.astype(float)

    def transform(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        if raw.shape[-1] != self.input_dim:
            raise ValueError(f"feature dimension {raw.shape[-1]} != pipeline dimension {self.input_dim}")
        return self.standardizer.transform(self._pre(raw))


def fit_pipeline(raw_train, cbs_selection, levels: int | None = 8, input_mode: str = "values") -> FeaturePipeline:
    """Fit quantiser and standardiser on training rows only."""
    if input_mode not in ("values", "indices"):
        raise ValueError(f"unknown input mode {input_mode!r}")
    raw_train = np.asarray(raw_train, dtype=float)
    q = fit_quantizer(raw_train, levels) if levels else None
    pre = FeaturePipeline(tuple(cbs_selection), q, Standardizer(np.zeros(raw_train.shape[1]), np.ones(raw_train.shape[1])), input_mode)
    std = Standardizer.fit(pre._pre(raw_train))
    return FeaturePipeline(tuple(cbs_selection), q, std, input_mode)
