"""Two-stage implicit generative models: autoencoders with learned
multimodal base distributions, exact likelihoods for invertible nets, KDE
scoring and an audio chunk/overlap-add pipeline."""

from .autoencoder import Adam, DenseAutoencoder, TiedInvertibleAutoencoder, encode_dataset, train_stage1
from .bundle import ModelBundle, load_bundle, save_bundle
from .conv_autoencoder import Conv1dAutoencoder
from .gmm import GaussianMixture, gmm_fit_em
from .hmm import GaussianHMM, hmm_fit_baum_welch
from .invertible_net import InvertibleNet, InvertibleNonlinearity, PseudoLinearLayer
from .kde import KdeConfig, kde_score
from .likelihood import ImplicitModel, model_log_pdf, proxy_log_pdf, sequence_log_pdf, train_implicit_ml
from .numerics import make_rng

__version__ = "0.1.0"

__all__ = [
    "Adam", "Conv1dAutoencoder", "DenseAutoencoder", "GaussianHMM", "GaussianMixture", "ImplicitModel",
    "InvertibleNet", "InvertibleNonlinearity", "KdeConfig", "ModelBundle", "PseudoLinearLayer",
    "TiedInvertibleAutoencoder", "encode_dataset", "gmm_fit_em", "hmm_fit_baum_welch", "kde_score",
    "load_bundle", "make_rng", "model_log_pdf", "proxy_log_pdf", "save_bundle", "sequence_log_pdf",
    "train_implicit_ml", "train_stage1",
]
