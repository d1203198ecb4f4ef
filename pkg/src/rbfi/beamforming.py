"""Codebooks, MRT, optimal-beam selection and multi-user MMSE precoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DFT = "dft"
SINUSOIDAL = "sinusoidal"


@dataclass(frozen=True)
class Codebook:
    """Unit-norm beam vectors stored column-wise, shape (num_antennas, size)."""

    vectors: np.ndarray
    kind: str

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.vectors.shape[0]

    @property
    def codebook_id(self) -> str:
        return f"{self.kind}-{self.num_antennas}x{self.size}"

    def __getitem__(self, k) -> np.ndarray:
        return self.vectors[:, k]


@dataclass(frozen=True)
class BeamDecision:
    label: int
    ranked_indices: np.ndarray
    scores: np.ndarray


def dft_codebook(n: int) -> Codebook:
    if n < 1:
        raise ValueError("n must be >= 1")
    m = np.arange(n)
    vectors = np.exp(2j * np.pi * np.outer(m, m) / n) / np.sqrt(n)
    return Codebook(vectors, DFT)


def sinusoidal_codebook(size: int, n: int) -> Codebook:
    """Normalised steering vectors on a uniform grid of spatial frequency in [-1, 1).

    Element ``m`` of codeword ``k`` is ``exp(j*pi*m*u_k)/sqrt(n)`` with
    ``u_k = -1 + 2k/size``.
    """
    if size < 1 or n < 1:
        raise ValueError("size and n must be >= 1")
    u = -1.0 + 2.0 * np.arange(size) / size
    m = np.arange(n)
    vectors = np.exp(1j * np.pi * np.outer(m, u)) / np.sqrt(n)
    return Codebook(vectors, SINUSOIDAL)


def make_codebook(kind: str, size: int, n: int) -> Codebook:
    if kind == DFT:
        if size != n:
            raise ValueError("a DFT codebook has exactly one codeword per antenna")
        return dft_codebook(n)
    if kind == SINUSOIDAL:
        return sinusoidal_codebook(size, n)
    raise ValueError(f"unknown codebook kind {kind!r}")


def mrt_weights(h) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise ValueError("MRT undefined for an all-zero channel")
    return h / norm


def beam_scores(h, codebook: Codebook) -> np.ndarray:
    """Received power ``|h^H w_k|^2`` per codeword; accepts (M,) or (N, M) channels."""
    h = np.asarray(h)
    if h.shape[-1] != codebook.num_antennas:
        raise ValueError(f"channel length {h.shape[-1]} != codebook dimension {codebook.num_antennas}")
    return np.abs(h.conj() @ codebook.vectors) ** 2


def select_optimal_beam(h, codebook: Codebook) -> BeamDecision:
    scores = beam_scores(h, codebook)
    # stable sort on the negated score keeps the lowest index first among ties
    ranked = np.argsort(-scores, kind="stable")
    return BeamDecision(int(ranked[0]), ranked, scores)


def optimal_labels(channels, codebook: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Batched beam selection: labels (N,) and scores (N, K)."""
    scores = beam_scores(channels, codebook)
    return np.argmax(scores, axis=1), scores


def mmse_precoder(h_hat, noise_power: float, normalize: str = "column") -> np.ndarray:
    """Regularised zero-forcing / MMSE precoder ``H (H^H H + s2 I)^-1``.

    ``h_hat`` is a sequence of U channel estimates of equal length M; the result
    has shape (M, U) with column u serving UE u. ``normalize`` is ``"column"``
    (unit norm per UE) or ``"total"`` (unit Frobenius norm scaled by sqrt(U)).
    """
    H = np.column_stack([np.asarray(h, dtype=complex) for h in h_hat])
    if noise_power < 0:
        raise ValueError("noise power must be non-negative")
    gram = H.conj().T @ H + noise_power * np.eye(H.shape[1])
    try:
        W = H @ np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular MMSE system") from exc
    if not np.all(np.isfinite(W)) or np.linalg.cond(gram) > 1e14:
        raise np.linalg.LinAlgError("singular MMSE system")
    if normalize == "column":
        return W / np.linalg.norm(W, axis=0, keepdims=True)
    if normalize == "total":
        return W * np.sqrt(W.shape[1]) / np.linalg.norm(W)
    raise ValueError(f"unknown normalisation {normalize!r}")


def multiuser_sinr(h_true, W, noise_power: float) -> np.ndarray:
    """Per-UE SINR given true channels and precoder columns."""
    H = np.column_stack([np.asarray(h, dtype=complex) for h in h_true])
    gains = np.abs(H.conj().T @ W) ** 2  # [u, v] = |h_u^H w_v|^2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + noise_power)
