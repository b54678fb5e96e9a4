"""Small end-to-end experiments shared by the CLI and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE, AudioSignal, chunk
from .autoencoder import Adam, DenseAutoencoder, train_stage1
from .conv_autoencoder import Conv1dAutoencoder
from .datasets import LabeledDataset, gen_two_gaussian_toy, synthetic_digits
from .gmm import GaussianMixture, gmm_fit_em
from .hmm import hmm_fit_baum_welch
from .invertible_net import InvertibleNet, PseudoLinearLayer
from .likelihood import ImplicitModel, model_log_pdf, train_implicit_ml
from .numerics import make_rng


def pairwise_distances(a, b):
    sq = np.sum(a**2, axis=1)[:, None] - 2.0 * a @ b.T + np.sum(b**2, axis=1)[None]
    return np.sqrt(np.maximum(sq, 0.0))


# -- two-Gaussian toy: fixed vs learned base ---------------------------------

@dataclass
class Fig1Result:
    fixed: ImplicitModel
    learned: ImplicitModel
    oracle: GaussianMixture
    fixed_ll: float  # held-out mean log-likelihood
    learned_ll: float
    oracle_ll: float
    fixed_trace: list
    learned_trace: list
    train: LabeledDataset
    test: LabeledDataset


def _identity_net(dim):
    return InvertibleNet([PseudoLinearLayer(np.eye(dim), np.zeros(dim))], [None])


def run_fig1(seed: int = 0, n_train: int = 2000, n_test: int = 500, epochs: int = 150,
             lr: float = 0.05, batch_size: int = 200) -> Fig1Result:
    """Fit a linear invertible map to the toy data by direct likelihood ascent,
    once under a frozen standard-normal base and once with a 2-component
    mixture base refitted along the way."""
    data_rng = make_rng(seed, "data")
    train = gen_two_gaussian_toy(data_rng, n_train)
    test = gen_two_gaussian_toy(data_rng, n_test)

    fixed = train_implicit_ml(_identity_net(2), GaussianMixture.standard_normal(2), train.x,
                              make_rng(seed, "train"), learn_base=False, epochs=epochs, lr=lr,
                              batch_size=batch_size)
    start = GaussianMixture(np.array([0.5, 0.5]), np.array([[-1.0, 0.0], [1.0, 0.0]]),
                            np.array([np.eye(2), np.eye(2)]))
    learned = train_implicit_ml(_identity_net(2), start, train.x, make_rng(seed, "train"),
                                learn_base=True, epochs=epochs, lr=lr, batch_size=batch_size)
    oracle = gmm_fit_em(train.x, 2, make_rng(seed, "oracle")).model

    fixed_model = ImplicitModel(fixed.net, fixed.base)
    learned_model = ImplicitModel(learned.net, learned.base)
    return Fig1Result(
        fixed_model, learned_model, oracle,
        float(np.mean(model_log_pdf(fixed_model, test.x))),
        float(np.mean(model_log_pdf(learned_model, test.x))),
        float(np.mean(oracle.log_pdf(test.x))),
        fixed.trace, learned.trace, train, test)


# -- 0/1 digits with a 2-D latent and 3-component base ------------------------

@dataclass
class Fig2Result:
    autoencoder: DenseAutoencoder
    base: GaussianMixture
    embeddings: np.ndarray
    assignments: np.ndarray
    purity: float
    samples: np.ndarray  # decoded base samples
    nearest_distances: np.ndarray  # per decoded sample, to the training set
    inter_class_p95: float
    loss_history: list


def component_purity(assignments, labels) -> float:
    """Fraction of items whose label is the majority label of their component."""
    hits = sum(np.bincount(labels[assignments == k]).max() for k in np.unique(assignments))
    return hits / len(labels)


def run_fig2(seed: int = 0, data: LabeledDataset | None = None, epochs: int = 300,
             n_components: int = 3, n_samples: int = 64) -> Fig2Result:
    """Two-stage training on 0/1 digit images: a 784-64-2 autoencoder, then a
    mixture on the 2-D codes."""
    ds = data if data is not None else synthetic_digits(make_rng(seed, "data"), 100)
    ae = DenseAutoencoder.build(ds.dim, [64], 2, make_rng(seed, "ae"), hidden_act="relu")
    hist = train_stage1(ae, ds.x, epochs, make_rng(seed, "ae-shuffle"), batch_size=32)
    codes = ae.encode(ds.x)
    base = gmm_fit_em(codes, n_components, make_rng(seed, "base")).model
    assign = base.responsibilities(codes).argmax(axis=1)
    h, _ = base.sample(make_rng(seed, "sample"), n_samples)
    decoded = ae.decode(h)
    inter = pairwise_distances(ds.x[ds.labels == 0], ds.x[ds.labels == 1])
    return Fig2Result(ae, base, codes, assign, component_purity(assign, ds.labels), decoded,
                      pairwise_distances(decoded, ds.x).min(axis=1), float(np.percentile(inter, 95)),
                      hist.history)


# -- audio ----------------------------------------------------------------------

def synth_multitone(rng: np.random.Generator, seconds: float = 4.0,
                    notes=(220.0, 330.0, 440.0, 550.0), note_len: int = 2000) -> AudioSignal:
    """Phase-continuous melody of random notes with one overtone, plus a
    little noise; peak amplitude stays well under 1."""
    n = int(seconds * SAMPLE_RATE)
    seq = rng.integers(0, len(notes), -(-n // note_len))
    freq = np.repeat(np.asarray(notes)[seq], note_len)[:n]
    phase = 2.0 * np.pi * np.cumsum(freq) / SAMPLE_RATE
    x = 0.3 * np.sin(phase) + 0.1 * np.sin(2.0 * phase) + 0.01 * rng.standard_normal(n)
    return AudioSignal(x)


@dataclass
class AudioModelResult:
    model: ImplicitModel
    loss_history: list
    em_trace: list


def train_audio_model(signal: AudioSignal, rng: np.random.Generator, n_states: int = 16,
                      latent_dim: int = 80, channels=(4, 8), epochs: int = 40, batch_size: int = 16,
                      lr: float = 1e-3, em_iters: int = 50) -> AudioModelResult:
    """Conv autoencoder on windowed chunks, then a diagonal HMM on the chunk
    codes taken as one sequence."""
    chunks = chunk(signal).chunks
    ae = Conv1dAutoencoder(latent_dim=latent_dim, channels=tuple(channels), rng=rng)
    hist = train_stage1(ae, chunks, epochs, rng, batch_size=batch_size, optimizer=Adam(lr=lr))
    em = hmm_fit_baum_welch([ae.encode(chunks)], n_states, rng, max_iters=em_iters)
    return AudioModelResult(ImplicitModel(ae, em.model), hist.history, em.trace)
