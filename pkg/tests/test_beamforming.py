import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rbfi.beamforming import (
    beam_scores,
    dft_codebook,
    make_codebook,
    mmse_precoder,
    mrt_weights,
    multiuser_sinr,
    optimal_labels,
    select_optimal_beam,
    sinusoidal_codebook,
)

from conftest import random_complex
from oracles import brute_force_beam

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def complex_vectors(n_min=1, n_max=24):
    return st.integers(n_min, n_max).flatmap(
        lambda n: st.tuples(arrays(float, n, elements=finite), arrays(float, n, elements=finite))
    ).map(lambda t: t[0] + 1j * t[1]).filter(lambda h: np.linalg.norm(h) > 1e-3)


def test_dft_size_one():
    cb = dft_codebook(1)
    assert cb.vectors.shape == (1, 1) and cb.vectors[0, 0] == 1


def test_dft_20_orthonormal():
    cb = dft_codebook(20)
    assert np.allclose(cb.vectors.conj().T @ cb.vectors, np.eye(20), atol=1e-9)
    assert cb.codebook_id == "dft-20x20"


def test_dft_4_hand_matrix():
    j = 1j
    ref = 0.5 * np.array([
        [1, 1, 1, 1],
        [1, j, -1, -j],
        [1, -1, 1, -1],
        [1, -j, -1, j],
    ])
    assert np.allclose(dft_codebook(4).vectors, ref, atol=1e-12)


@pytest.mark.parametrize("n", [2, 8, 16, 20])
def test_sinusoidal_full_size_is_dft_up_to_order_and_phase(n):
    sin, dft = sinusoidal_codebook(n, n).vectors, dft_codebook(n).vectors
    corr = np.abs(sin.conj().T @ dft)
    # every sinusoidal column coincides with exactly one DFT column
    assert np.allclose(np.sort(corr, axis=1)[:, -1], 1.0, atol=1e-9)
    assert sorted(np.argmax(corr, axis=1)) == list(range(n))


def test_sinusoidal_single_codeword():
    v = sinusoidal_codebook(1, 6).vectors[:, 0]
    assert np.allclose(v, np.exp(-1j * np.pi * np.arange(6)) / math.sqrt(6))


def test_sinusoidal_fft_peaks():
    n, size = 16, 8
    cb = sinusoidal_codebook(size, n)
    for k in range(size):
        spec = np.abs(np.fft.fft(cb.vectors[:, k]))
        # exp(j pi m u) with u = -1 + 2k/size is frequency bin n*u/2 (mod n)
        assert int(np.argmax(spec)) == (-n // 2 + k * n // size) % n


@pytest.mark.parametrize("kind,size,n", [("dft", 12, 12), ("sinusoidal", 5, 9), ("sinusoidal", 64, 20)])
def test_unit_norm_columns(kind, size, n):
    cb = make_codebook(kind, size, n)
    assert cb.size == size and cb.num_antennas == n
    assert np.allclose(np.linalg.norm(cb.vectors, axis=0), 1.0, atol=1e-9)


def test_make_codebook_errors():
    with pytest.raises(ValueError):
        make_codebook("dft", 8, 20)
    with pytest.raises(ValueError):
        make_codebook("hadamard", 4, 4)
    with pytest.raises(ValueError):
        dft_codebook(0)


def test_mrt_cases(rng):
    e1 = np.zeros(5, complex)
    e1[0] = 1
    assert np.array_equal(mrt_weights(e1), e1)
    h = random_complex(rng, 20)
    w = mrt_weights(h)
    assert abs(np.vdot(h, w)) == pytest.approx(np.linalg.norm(h), rel=1e-12)
    cb = dft_codebook(20)
    for k in range(20):
        assert abs(np.vdot(h, cb[k])) <= np.linalg.norm(h) * (1 + 1e-12)
    with pytest.raises(ValueError):
        mrt_weights(np.zeros(3))


def test_select_codeword_seven():
    cb = dft_codebook(20)
    d = select_optimal_beam(cb[7], cb)
    assert d.label == 7 and d.ranked_indices[0] == 7
    assert d.scores[7] == pytest.approx(1.0, abs=1e-12)
    assert len(d.scores) == 20


def test_select_only_codeword_zero():
    cb = dft_codebook(8)
    h = 3.0 * cb[0]
    assert select_optimal_beam(h, cb).label == 0


def test_select_ties_go_to_lowest_index():
    cb = dft_codebook(4)
    h = cb[1] + cb[3]
    assert select_optimal_beam(h, cb).label == 1
    labels, _ = optimal_labels(h[None, :], cb)
    assert labels[0] == 1


def test_select_matches_brute_force_scan():
    rng = np.random.default_rng(9)
    cb = dft_codebook(20)
    channels = random_complex(rng, 1000, 20)
    labels, _ = optimal_labels(channels, cb)
    for h, lab in zip(channels, labels):
        ref = brute_force_beam(h, cb.vectors)
        assert select_optimal_beam(h, cb).label == ref == lab


def test_scores_dimension_check():
    with pytest.raises(ValueError):
        beam_scores(np.ones(5), dft_codebook(4))


def test_mmse_single_ue_limit(rng):
    h = random_complex(rng, 10)
    w = mmse_precoder([h], 1e-12)[:, 0]
    cos = abs(np.vdot(h, w)) / np.linalg.norm(h)
    assert math.acos(min(1.0, cos)) < 1e-6


def test_mmse_orthogonal_pair_no_leakage():
    cb = dft_codebook(8)
    h1, h2 = 2.0 * cb[1], 0.5 * cb[5]
    W = mmse_precoder([h1, h2], 0.01)
    assert abs(np.vdot(h1, W[:, 1])) < 1e-9
    assert abs(np.vdot(h2, W[:, 0])) < 1e-9


def test_mmse_matches_pseudo_inverse_oracle(rng):
    base = random_complex(rng, 16)
    h1 = base + 0.3 * random_complex(rng, 16)
    h2 = base + 0.3 * random_complex(rng, 16)
    s2 = 0.1
    H = np.column_stack([h1, h2])
    # push-through form (H H^H + s2 I)^-1 H, solved with a pseudo-inverse
    ref = np.linalg.pinv(H @ H.conj().T + s2 * np.eye(16)) @ H
    ref /= np.linalg.norm(ref, axis=0)
    assert np.allclose(mmse_precoder([h1, h2], s2), ref, atol=1e-9)


def test_mmse_total_normalization(rng):
    H = [random_complex(rng, 6) for _ in range(3)]
    W = mmse_precoder(H, 0.5, "total")
    assert np.linalg.norm(W) == pytest.approx(math.sqrt(3), rel=1e-12)
    with pytest.raises(ValueError):
        mmse_precoder(H, 0.5, "frobenius")


def test_mmse_singular_rejected():
    h = np.ones(4, complex)
    with pytest.raises(np.linalg.LinAlgError):
        mmse_precoder([h, h], 0.0)


def test_sinr_single_ue(rng):
    h = random_complex(rng, 6)
    w = mrt_weights(random_complex(rng, 6))
    sinr = multiuser_sinr([h], w[:, None], 0.2)
    assert sinr[0] == pytest.approx(abs(np.vdot(h, w)) ** 2 / 0.2, rel=1e-12)


def test_sinr_orthogonal_no_interference():
    cb = dft_codebook(6)
    H = [cb[0], cb[2]]
    W = np.column_stack([cb[0], cb[2]])
    assert np.allclose(multiuser_sinr(H, W, 0.5), [2.0, 2.0])


def test_sinr_matches_loop(rng):
    H = [random_complex(rng, 5) for _ in range(2)]
    W = random_complex(rng, 5, 2)
    s2 = 0.3
    ref = []
    for u in range(2):
        sig, intf = 0.0, 0.0
        for v in range(2):
            acc = sum(H[u][m].conjugate() * W[m, v] for m in range(5))
            if u == v:
                sig = abs(acc) ** 2
            else:
                intf += abs(acc) ** 2
        ref.append(sig / (intf + s2))
    assert np.allclose(multiuser_sinr(H, W, s2), ref, rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(h=complex_vectors(), seed=st.integers(0, 2**32 - 1))
def test_mrt_dominates_any_unit_beam(h, seed):
    rng = np.random.default_rng(seed)
    best = abs(np.vdot(h, mrt_weights(h)))
    w = random_complex(rng, len(h))
    w /= np.linalg.norm(w)
    assert abs(np.vdot(h, w)) <= best * (1 + 1e-12)
    cb = dft_codebook(len(h))
    assert np.all(np.sqrt(beam_scores(h, cb)) <= best * (1 + 1e-12))


@settings(max_examples=100, deadline=None)
@given(h=complex_vectors(20, 20), mag=st.floats(1e-3, 1e3), phase=st.floats(0, 2 * math.pi))
def test_label_invariant_to_global_scaling(h, mag, phase):
    cb = dft_codebook(20)
    s = beam_scores(h, cb)
    top2 = np.sort(s)[-2:]
    if top2[1] - top2[0] <= 1e-9 * top2[1]:
        return  # near tie; argmax not well defined in floating point
    c = mag * np.exp(1j * phase)
    assert select_optimal_beam(c * h, cb).label == select_optimal_beam(h, cb).label


@settings(max_examples=100, deadline=None)
@given(h=complex_vectors())
def test_dft_parseval(h):
    s = beam_scores(h, dft_codebook(len(h)))
    assert s.sum() == pytest.approx(np.vdot(h, h).real, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), users=st.integers(1, 4), s2=st.floats(1e-3, 10))
def test_mmse_unit_columns(seed, users, s2):
    rng = np.random.default_rng(seed)
    W = mmse_precoder([random_complex(rng, 8) for _ in range(users)], s2)
    assert np.allclose(np.linalg.norm(W, axis=0), 1.0, atol=1e-9)
