"""Experiment harness: datasets, metrics, CDFs, baselines and sweeps."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import beamforming as bf
from .channel import channel_matrix, los_matrix
from .features import FeaturePipeline, angular_transform, fit_pipeline
from .learner import MlpModel, TrainConfig, TrainReport, forward, train
from .scenario import Scenario, ScenarioConfig, build_scenario, sample_ue_positions

log = logging.getLogger(__name__)

TIE_TOLERANCE = 0.99
CDF_POINTS = 1000


class PipelineMismatch(ValueError):
    """Model and dataset disagree on codebook or feature layout."""


def worker_count() -> int:
    env = os.environ.get("RBFI_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# --- datasets ---------------------------------------------------------------------

@dataclass
class Dataset:
    ue_positions: np.ndarray
    cbs_features: tuple[np.ndarray, ...]  # raw angular log-amplitudes per CBS
    tbs_channels: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    codebook: bf.Codebook
    split: dict[str, np.ndarray]
    seed: int
    config: ScenarioConfig = field(default_factory=ScenarioConfig)
    cbs_channels: tuple[np.ndarray, ...] | None = None

    def __len__(self):
        return len(self.labels)

    @property
    def num_cbs(self) -> int:
        return len(self.cbs_features)

    def features(self, cbs_selection, idx=None) -> np.ndarray:
        sel = sorted(cbs_selection)
        if not sel or sel[-1] >= self.num_cbs:
            raise PipelineMismatch(f"dataset has {self.num_cbs} CBS feature blocks, asked for {sel}")
        blocks = [self.cbs_features[i] if idx is None else self.cbs_features[i][idx] for i in sel]
        return np.concatenate(blocks, axis=1)

    def subset(self, n: int, seed: int | None = None) -> Dataset:
        """First ``n`` samples with a fresh 70/15/15 split."""
        keep = slice(0, n)
        return Dataset(
            self.ue_positions[keep],
            tuple(f[keep] for f in self.cbs_features),
            self.tbs_channels[keep],
            self.labels[keep],
            self.scores[keep],
            self.codebook,
            split_indices(n, self.seed if seed is None else seed),
            self.seed,
            self.config,
            None if self.cbs_channels is None else tuple(c[keep] for c in self.cbs_channels),
        )

    def relabel(self, codebook: bf.Codebook) -> Dataset:
        labels, scores = bf.optimal_labels(self.tbs_channels, codebook)
        return replace(self, labels=labels, scores=scores, codebook=codebook)


def split_indices(n: int, seed: int, fractions=(0.7, 0.15, 0.15)) -> dict[str, np.ndarray]:
    perm = np.random.default_rng([seed, 0x5EED]).permutation(n)
    n_train = int(np.floor(fractions[0] * n + 1e-9))
    n_val = int(np.floor(fractions[1] * n + 1e-9))
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


def _chunk_worker(scenario, positions, codebook, keep_channels):
    cbs_h = [channel_matrix(scenario, positions, i) for i in range(len(scenario.cbs_list))]
    feats = [angular_transform(h) for h in cbs_h]
    tbs_h = channel_matrix(scenario, positions, "tbs")
    labels, scores = bf.optimal_labels(tbs_h, codebook)
    return feats, tbs_h, labels, scores, (cbs_h if keep_channels else None)


def generate_dataset(scenario: Scenario, codebook: bf.Codebook, n_samples: int, seed: int,
                     keep_cbs_channels: bool = False, chunk: int = 4096) -> Dataset:
    """Sample UEs, synthesise every CBS and the TBS channel, label by the best codeword."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if codebook.num_antennas != scenario.tbs.num_elements:
        raise PipelineMismatch("codebook dimension differs from the TBS array size")
    ue = sample_ue_positions(scenario, n_samples, seed)
    starts = range(0, n_samples, chunk)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        parts = list(pool.map(lambda s: _chunk_worker(scenario, ue[s:s + chunk], codebook, keep_cbs_channels), starts))
    n_cbs = len(scenario.cbs_list)
    feats = tuple(np.concatenate([p[0][i] for p in parts]) for i in range(n_cbs))
    channels = tuple(np.concatenate([p[4][i] for p in parts]) for i in range(n_cbs)) if keep_cbs_channels else None
    return Dataset(
        ue_positions=ue,
        cbs_features=feats,
        tbs_channels=np.concatenate([p[1] for p in parts]),
        labels=np.concatenate([p[2] for p in parts]),
        scores=np.concatenate([p[3] for p in parts]),
        codebook=codebook,
        split=split_indices(n_samples, seed),
        seed=seed,
        config=scenario.config,
        cbs_channels=channels,
    )


# --- predictors -------------------------------------------------------------------------

@dataclass
class TrainedModel:
    """Network plus the feature pipeline and codebook it was trained against."""

    mlp: MlpModel
    pipeline: FeaturePipeline
    codebook_id: str

    def check(self, dataset: Dataset):
        if dataset.codebook.codebook_id != self.codebook_id:
            raise PipelineMismatch(f"model codebook {self.codebook_id} != dataset {dataset.codebook.codebook_id}")
        dims = sum(dataset.cbs_features[i].shape[1] for i in self.pipeline.cbs_selection
                   if i < dataset.num_cbs)
        if max(self.pipeline.cbs_selection) >= dataset.num_cbs or dims != self.mlp.input_dim:
            raise PipelineMismatch("dataset features do not match the model input")

    def probabilities(self, dataset: Dataset, idx) -> np.ndarray:
        self.check(dataset)
        X = self.pipeline.transform(dataset.features(self.pipeline.cbs_selection, idx))
        return forward(self.mlp, X)

    def rank(self, dataset: Dataset, idx) -> np.ndarray:
        return np.argsort(-self.probabilities(dataset, idx), axis=1, kind="stable")


class OraclePredictor:
    """Ranks the true label first; the rest by true score."""

    def rank(self, dataset: Dataset, idx) -> np.ndarray:
        s = dataset.scores[idx].copy()
        s[np.arange(len(idx)), dataset.labels[idx]] = np.inf
        return np.argsort(-s, axis=1, kind="stable")


@dataclass
class RandomPredictor:
    seed: int = 0

    def rank(self, dataset: Dataset, idx) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return np.argsort(rng.random((len(idx), dataset.codebook.size)), axis=1)


def fit_model(dataset: Dataset, cbs_selection=(0,), levels: int | None = 8,
              hyper: TrainConfig = TrainConfig(), input_mode: str = "values") -> tuple[TrainedModel, TrainReport]:
    """Fit the feature pipeline on the training split, train, and score the test split."""
    sel = tuple(sorted(cbs_selection))
    tr, va, te = dataset.split["train"], dataset.split["val"], dataset.split["test"]
    if len(tr) == 0:
        raise ValueError("empty training split")
    pipe = fit_pipeline(dataset.features(sel, tr), sel, levels, input_mode)
    X = pipe.transform(dataset.features(sel))
    mlp, report = train(X[tr], dataset.labels[tr], X[va], dataset.labels[va], dataset.codebook.size, hyper)
    model = TrainedModel(mlp, pipe, dataset.codebook.codebook_id)
    if len(te):
        report.test_accuracy = float(np.mean(np.argmax(forward(mlp, X[te]), axis=1) == dataset.labels[te]))
    return model, report


# --- metrics --------------------------------------------------------------------------------

def normalized_strength(h, selected, optimal, power: bool = True) -> float:
    """Received strength on ``selected`` relative to ``optimal`` (power ratio by default)."""
    num = abs(np.vdot(h, selected))
    den = abs(np.vdot(h, optimal))
    ratio = num / den if den > 0 else 0.0
    return float(ratio ** 2 if power else ratio)


def empirical_cdf(samples, grid_points: int = CDF_POINTS, lo: float | None = None, hi: float | None = None):
    """Empirical CDF evaluated on an evenly spaced grid over [lo, hi]."""
    x = np.sort(np.asarray(samples, dtype=float))
    lo = x[0] if lo is None else lo
    hi = x[-1] if hi is None else hi
    grid = np.linspace(lo, hi, grid_points)
    cdf = np.searchsorted(x, grid, side="right") / len(x)
    return grid, cdf


@dataclass
class EvalReport:
    top1_accuracy: float
    topk_accuracy: float
    top1_tolerant_accuracy: float
    topk_tolerant_accuracy: float
    topk: int
    strengths: np.ndarray  # best-of-k, normalised by the codebook optimum
    strengths_top1: np.ndarray
    vs_mrt: np.ndarray  # best-of-k, normalised by |h|^2
    cdf_grid: np.ndarray
    cdf: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def mean_normalized(self) -> float:
        return float(np.mean(self.strengths))

    @property
    def mean_vs_mrt(self) -> float:
        return float(np.mean(self.vs_mrt))

    def summary(self) -> dict:
        return {
            "top1_accuracy": self.top1_accuracy,
            "topk_accuracy": self.topk_accuracy,
            "top1_tolerant_accuracy": self.top1_tolerant_accuracy,
            "topk_tolerant_accuracy": self.topk_tolerant_accuracy,
            "topk": self.topk,
            "mean_normalized": self.mean_normalized,
            "mean_normalized_top1": float(np.mean(self.strengths_top1)),
            "mean_vs_mrt": self.mean_vs_mrt,
            "n_samples": len(self.strengths),
            **self.meta,
        }


def evaluate(predictor, dataset: Dataset, topk: int = 1, idx=None, power: bool = True) -> EvalReport:
    """Accuracy and normalised-strength statistics on ``idx`` (default: test split)."""
    idx = dataset.split["test"] if idx is None else np.asarray(idx)
    if len(idx) == 0:
        raise ValueError("nothing to evaluate")
    if not 1 <= topk <= dataset.codebook.size:
        raise ValueError("topk out of range")
    ranked = predictor.rank(dataset, idx)[:, :topk]
    labels = dataset.labels[idx]
    scores = dataset.scores[idx]
    rows = np.arange(len(idx))[:, None]
    best = scores[rows[:, 0], labels]
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(best[:, None] > 0, scores[rows, ranked] / best[:, None], 1.0)
    rel = np.clip(rel, 0.0, 1.0)
    if not power:
        rel = np.sqrt(rel)
    strengths = rel.max(axis=1)
    chan_power = np.sum(np.abs(dataset.tbs_channels[idx]) ** 2, axis=1)
    vs_mrt = np.clip(scores[rows, ranked].max(axis=1) / chan_power, 0.0, 1.0)
    if not power:
        vs_mrt = np.sqrt(vs_mrt)
    tol = TIE_TOLERANCE if power else np.sqrt(TIE_TOLERANCE)
    grid, cdf = empirical_cdf(strengths, lo=0.0, hi=1.0)
    return EvalReport(
        top1_accuracy=float(np.mean(ranked[:, 0] == labels)),
        topk_accuracy=float(np.mean((ranked == labels[:, None]).any(axis=1))),
        top1_tolerant_accuracy=float(np.mean((ranked[:, 0] == labels) | (rel[:, 0] >= tol))),
        topk_tolerant_accuracy=float(np.mean((ranked == labels[:, None]).any(axis=1) | (strengths >= tol))),
        topk=topk,
        strengths=strengths,
        strengths_top1=rel[:, 0],
        vs_mrt=vs_mrt,
        cdf_grid=grid,
        cdf=cdf,
        meta={"codebook": dataset.codebook.codebook_id},
    )


# --- location-based baseline ----------------------------------------------------------------

def location_baseline(scenario: Scenario, ue_pos) -> np.ndarray:
    """Unit-norm spherical-wavefront steering vector of the TBS towards the exact UE position."""
    a = los_matrix(scenario, np.atleast_2d(np.asarray(ue_pos, dtype=float)), "tbs")[0]
    return a / np.linalg.norm(a)


def location_baseline_strength(scenario: Scenario, ue_positions, tbs_channels) -> np.ndarray:
    """|h^H w_LO|^2 / |h|^2 per UE."""
    a = los_matrix(scenario, np.atleast_2d(ue_positions), "tbs")
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    num = np.abs(np.sum(tbs_channels.conj() * a, axis=1)) ** 2
    return num / np.sum(np.abs(tbs_channels) ** 2, axis=1)


@dataclass
class BaselineRow:
    rician_k_db: float
    num_cbs: int
    nn_mean_vs_mrt: float
    lo_mean_vs_mrt: float
    nn_top1_accuracy: float

    def as_dict(self):
        return dict(self.__dict__)


def compare_baseline(base: ScenarioConfig, k_db_values, cbs_counts, n_samples: int, seed: int,
                     hyper: TrainConfig = TrainConfig(), levels: int | None = 8, topk: int = 1) -> list[BaselineRow]:
    """NN vs exact-location beamforming, both normalised by MRT, on the same test UEs."""
    rows = []
    for k_db in k_db_values:
        config = base.with_updates(rician_k_db=float(k_db), num_cbs=max(cbs_counts))
        scenario = build_scenario(config)
        codebook = bf.dft_codebook(scenario.tbs.num_elements)
        data = generate_dataset(scenario, codebook, n_samples, seed)
        te = data.split["test"]
        lo = location_baseline_strength(scenario, data.ue_positions[te], data.tbs_channels[te])
        for n_cbs in cbs_counts:
            model, _ = fit_model(data, tuple(range(n_cbs)), levels, hyper)
            rep = evaluate(model, data, topk)
            rows.append(BaselineRow(float(k_db), n_cbs, rep.mean_vs_mrt, float(lo.mean()), rep.top1_accuracy))
    return rows


# --- multi-user MMSE study ------------------------------------------------------------------

def default_noise_power(tbs_channels, target_snr_db: float = 10.0) -> float:
    """Noise power giving the stated median single-UE MRT SNR."""
    gains = np.sum(np.abs(tbs_channels) ** 2, axis=1)
    return float(np.median(gains) / 10 ** (target_snr_db / 10))


@dataclass
class MmseReport:
    sinr_perfect: np.ndarray
    sinr_quantized: np.ndarray
    sinr_inferred: np.ndarray
    noise_power: float

    @property
    def normalized_quantized(self) -> np.ndarray:
        return self.sinr_quantized / self.sinr_perfect

    @property
    def normalized_inferred(self) -> np.ndarray:
        return self.sinr_inferred / self.sinr_perfect

    def medians(self) -> dict:
        return {
            "perfect": 1.0,
            "quantized": float(np.median(self.normalized_quantized)),
            "inferred": float(np.median(self.normalized_inferred)),
        }


def _codeword_estimates(codebook, labels, channels, scale: str):
    w = codebook.vectors[:, labels].T  # (U, M)
    if scale == "unit":
        return w
    if scale == "beam_amplitude":
        amp = np.abs(np.sum(channels.conj() * w, axis=1))
        return w * amp[:, None]
    raise ValueError(f"unknown estimate scaling {scale!r}")


def mmse_study(predictor, dataset: Dataset, n_pairs: int, noise_power: float | None = None,
               seed: int = 0, hhat_scale: str = "beam_amplitude", normalize: str = "column") -> MmseReport:
    """Two-UE MMSE precoding with perfect, codeword-quantised and inferred CSI.

    UE pairs are drawn from the test split. Channel estimates built from a
    codeword are that codeword scaled by the received amplitude on it.
    """
    te = dataset.split["test"]
    if len(te) < 2:
        raise ValueError("need at least two test UEs")
    rng = np.random.default_rng(seed)
    pairs = np.array([rng.choice(te, 2, replace=False) for _ in range(n_pairs)])
    if noise_power is None:
        noise_power = default_noise_power(dataset.tbs_channels[te])
    flat = pairs.ravel()
    predicted = predictor.rank(dataset, flat)[:, 0].reshape(pairs.shape)
    perfect, quant, inferred = [], [], []
    cb = dataset.codebook
    for (a, b), pred in zip(pairs, predicted):
        H = dataset.tbs_channels[[a, b]]
        W = bf.mmse_precoder(H, noise_power, normalize)
        perfect.append(bf.multiuser_sinr(H, W, noise_power))
        for labels, sink in ((dataset.labels[[a, b]], quant), (pred, inferred)):
            Hh = _codeword_estimates(cb, labels, H, hhat_scale)
            sink.append(bf.multiuser_sinr(H, bf.mmse_precoder(Hh, noise_power, normalize), noise_power))
    return MmseReport(np.concatenate(perfect), np.concatenate(quant), np.concatenate(inferred), noise_power)


# --- sweeps -------------------------------------------------------------------------------------

@dataclass
class CodebookSweepRow:
    size: int
    top1_accuracy: float
    nn_vs_mrt: float
    quantization_loss: float

    def as_dict(self):
        return dict(self.__dict__)


def quantization_loss(dataset: Dataset, idx=None) -> float:
    """1 - mean(|h^H w_opt|^2 / |h|^2)."""
    idx = dataset.split["test"] if idx is None else idx
    best = dataset.scores[idx].max(axis=1)
    power = np.sum(np.abs(dataset.tbs_channels[idx]) ** 2, axis=1)
    return float(1.0 - np.mean(best / power))


def sweep_codebook(config: ScenarioConfig, sizes, n_samples: int, seed: int, cbs_selection=(0,),
                   hyper: TrainConfig = TrainConfig(), levels: int | None = 8) -> list[CodebookSweepRow]:
    """One model per sinusoidal codebook size, on a shared set of UEs."""
    scenario = build_scenario(config)
    n_tbs = scenario.tbs.num_elements
    base = generate_dataset(scenario, bf.sinusoidal_codebook(sizes[0], n_tbs), n_samples, seed)
    rows = []
    for size in sizes:
        data = base.relabel(bf.sinusoidal_codebook(size, n_tbs))
        if size == 1:
            acc, vs_mrt = 1.0, evaluate(OraclePredictor(), data).mean_vs_mrt
        else:
            model, _ = fit_model(data, cbs_selection, levels, hyper)
            rep = evaluate(model, data)
            acc, vs_mrt = rep.top1_accuracy, rep.mean_vs_mrt
        rows.append(CodebookSweepRow(int(size), acc, vs_mrt, quantization_loss(data)))
        log.info("codebook size %d: acc %.4f", size, acc)
    return rows


@dataclass
class ScattererSweepRow:
    num_scatterers: int
    num_cbs: int
    topk: int
    mean_normalized: float
    accuracy: float
    tolerant_accuracy: float

    def as_dict(self):
        return dict(self.__dict__)


def sweep_scatterers(config: ScenarioConfig, counts, n_samples: int, seed: int, cbs_counts=(1, 2), topks=(1, 2),
                     hyper: TrainConfig = TrainConfig(), levels: int | None = 8) -> list[ScattererSweepRow]:
    """Regenerate the scenario per scatterer count (same seed) and evaluate every variant."""
    rows = []
    for count in counts:
        scenario = build_scenario(config.with_updates(num_scatterers=int(count), num_cbs=max(cbs_counts)))
        data = generate_dataset(scenario, bf.dft_codebook(scenario.tbs.num_elements), n_samples, seed)
        for n_cbs in cbs_counts:
            model, _ = fit_model(data, tuple(range(n_cbs)), levels, hyper)
            for k in topks:
                rep = evaluate(model, data, k)
                rows.append(ScattererSweepRow(int(count), n_cbs, k, rep.mean_normalized,
                                              rep.topk_accuracy, rep.topk_tolerant_accuracy))
    return rows
