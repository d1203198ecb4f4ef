"""Geometry-based stochastic channel synthesis (LoS + single-bounce scatterers).

Channel vectors are plain complex ``numpy`` arrays, one coefficient per array
element (dimensionless voltage gain). Batched functions return ``(N, M)``
arrays indexed by UE then element.
"""

from __future__ import annotations

import math

import numpy as np

from .scenario import Scenario

TWO_PI = 2 * math.pi


def _path_gain(d, wavelength, beta):
    return wavelength / (TWO_PI * d) * beta * np.exp(-1j * (TWO_PI * d / wavelength))


def los_response(ue_pos, antenna_pos, wavelength: float, beta0: float = 1.0) -> complex:
    """Direct-path response between one UE and one antenna element."""
    d0 = math.dist(ue_pos, antenna_pos)
    if d0 <= 0:
        raise ValueError("UE coincides with antenna element")
    return complex(_path_gain(d0, wavelength, beta0))


def nlos_response(ue_pos, antenna_pos, scatterers, wavelength: float) -> complex:
    """Sum of single-bounce paths via each scatterer, with its random phase."""
    total = 0j
    for s in scatterers:
        d = math.dist(ue_pos, s.position) + math.dist(s.position, antenna_pos)
        if d <= 0:
            raise ValueError("degenerate scattered path")
        total += complex(_path_gain(d, wavelength, s.amplitude) * np.exp(1j * s.phase_shift))
    return total


def rician_weights(k: float) -> tuple[float, float]:
    if k < 0:
        raise ValueError("Rician factor must be non-negative")
    return math.sqrt(k / (k + 1)), math.sqrt(1 / (k + 1))


def rician_combine(h_los, h_nlos, k: float) -> np.ndarray:
    h_los = np.asarray(h_los, dtype=complex)
    h_nlos = np.asarray(h_nlos, dtype=complex)
    if h_los.shape != h_nlos.shape:
        raise ValueError(f"shape mismatch {h_los.shape} vs {h_nlos.shape}")
    a, b = rician_weights(k)
    return a * h_los + b * h_nlos


def _distances(points: np.ndarray, elements: np.ndarray, planar: bool) -> np.ndarray:
    """(N, M) distances from points to array elements."""
    if not planar:
        dx = points[:, None, 0] - elements[None, :, 0]
        dy = points[:, None, 1] - elements[None, :, 1]
        return np.sqrt(dx * dx + dy * dy)
    center = elements.mean(axis=0)
    rel = points - center
    dist = np.sqrt((rel * rel).sum(axis=1))
    unit = rel / dist[:, None]
    return dist[:, None] - unit @ (elements - center).T


def los_matrix(scenario: Scenario, ue_positions: np.ndarray, bs) -> np.ndarray:
    elements = scenario.station(bs).element_positions
    d0 = _distances(ue_positions, elements, scenario.planar_wavefront)
    if np.any(d0 <= 0):
        raise ValueError("UE coincides with antenna element")
    return _path_gain(d0, scenario.wavelength, scenario.los_amplitude)


def nlos_matrix(scenario: Scenario, ue_positions: np.ndarray, bs) -> np.ndarray:
    elements = scenario.station(bs).element_positions
    pos, amp, phase = scenario.scatterer_arrays()
    out = np.zeros((len(ue_positions), len(elements)), dtype=complex)
    for i in range(len(pos)):
        s = pos[i]
        dx = ue_positions[:, 0] - s[0]
        dy = ue_positions[:, 1] - s[1]
        d_ue = np.sqrt(dx * dx + dy * dy)
        d_bs = _distances(s[None, :], elements, scenario.planar_wavefront)[0]
        d = d_ue[:, None] + d_bs[None, :]
        out += _path_gain(d, scenario.wavelength, amp[i]) * np.exp(1j * phase[i])
    return out


def channel_matrix(scenario: Scenario, ue_positions, bs, chunk: int = 8192) -> np.ndarray:
    """Channel vectors of many UEs towards base station ``bs`` as an (N, M) array."""
    ue_positions = np.atleast_2d(np.asarray(ue_positions, dtype=float))
    m = scenario.station(bs).num_elements
    out = np.empty((len(ue_positions), m), dtype=complex)
    for start in range(0, len(ue_positions), chunk):
        p = ue_positions[start:start + chunk]
        out[start:start + chunk] = rician_combine(
            los_matrix(scenario, p, bs), nlos_matrix(scenario, p, bs), scenario.rician_k
        )
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite channel coefficient")
    return out


def channel_vector(scenario: Scenario, ue_pos, bs) -> np.ndarray:
    """Channel vector (length = element count) of one UE towards ``bs``."""
    return channel_matrix(scenario, np.asarray(ue_pos, dtype=float)[None, :], bs)[0]


def receive_signal(h, w, x: complex = 1.0, noise: complex = 0.0) -> complex:
    """Received sample ``h^H w x + n`` for a unit-norm beam ``w``."""
    h = np.asarray(h)
    w = np.asarray(w)
    if h.shape != w.shape:
        raise ValueError("channel and beam dimensions differ")
    if abs(np.linalg.norm(w) - 1.0) > 1e-9:
        raise ValueError("beam vector must have unit norm")
    return complex(np.vdot(h, w) * x + noise)
