"""Model bundles: a directory holding ``manifest.json`` plus one raw
little-endian float64 file per named tensor.

Bundles are written to a temporary sibling directory and renamed into place,
so readers never observe a half-written bundle.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autoencoder import DenseAutoencoder, TiedInvertibleAutoencoder
from .conv_autoencoder import Conv1dAutoencoder
from .errors import BundleError
from .gmm import GaussianMixture
from .hmm import GaussianHMM
from .invertible_net import InvertibleNet, InvertibleNonlinearity, PseudoLinearLayer

VERSION = 1
MANIFEST = "manifest.json"
SUFFIX = ".f64"


@dataclass
class ModelBundle:
    mapping: object
    base: object = None
    seed: int = 0
    training: dict = field(default_factory=dict)

    @property
    def mapping_kind(self) -> str:
        if isinstance(self.mapping, TiedInvertibleAutoencoder):
            return "invertible"
        if isinstance(self.mapping, DenseAutoencoder):
            return "dense"
        if isinstance(self.mapping, Conv1dAutoencoder):
            return "conv"
        raise BundleError(f"cannot persist mapping of type {type(self.mapping).__name__}")

    @property
    def base_kind(self) -> str | None:
        if self.base is None:
            return None
        return "gmm" if isinstance(self.base, GaussianMixture) else "hmm"


def _mapping_tensors(bundle: ModelBundle):
    m = bundle.mapping
    kind = bundle.mapping_kind
    if kind == "dense":
        config = {"encoder_activations": [a for _, _, a in m.encoder_layers],
                  "decoder_activations": [a for _, _, a in m.decoder_layers]}
    elif kind == "invertible":
        config = {"activations": [a.kind if a is not None else None for a in m.net.activations],
                  "slope_c": [a.slope_c if a is not None else None for a in m.net.activations]}
    else:
        config = m.config()
    return config, dict(m.params)


def _base_tensors(base):
    if isinstance(base, GaussianMixture):
        return {"gmm_weights": base.weights, "gmm_means": base.means, "gmm_covariances": base.covariances}
    return {"hmm_initial": base.initial, "hmm_transitions": base.transitions,
            "hmm_means": base.emission_means, "hmm_vars": base.emission_vars}


def save_bundle(bundle: ModelBundle, path) -> Path:
    path = Path(path)
    config, tensors = _mapping_tensors(bundle)
    tensors = {f"mapping.{k}": v for k, v in tensors.items()}
    if bundle.base is not None:
        tensors.update({f"base.{k}": v for k, v in _base_tensors(bundle.base).items()})
    manifest = {
        "version": VERSION,
        "mapping": {"kind": bundle.mapping_kind, "config": config,
                    "input_dim": bundle.mapping.input_dim, "latent_dim": bundle.mapping.latent_dim},
        "base": None if bundle.base is None else {"kind": bundle.base_kind},
        "seed": bundle.seed,
        "training": bundle.training,
        "tensors": {name: {"file": name + SUFFIX, "shape": list(np.shape(v))} for name, v in sorted(tensors.items())},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        for name, value in tensors.items():
            np.ascontiguousarray(value, dtype="<f8").tofile(tmp / (name + SUFFIX))
        (tmp / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        old = None
        if path.exists():
            old = path.with_name(tmp.name + ".old")
            os.replace(path, old)
        os.replace(tmp, path)
        if old is not None:
            shutil.rmtree(old)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def _read_manifest(path: Path) -> dict:
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleError(f"{path}: unreadable manifest ({exc})") from None
    if manifest.get("version") != VERSION:
        raise BundleError(f"{path}: unsupported bundle version {manifest.get('version')!r}")
    return manifest


def _read_tensors(path: Path, manifest: dict) -> dict:
    listed = {spec["file"] for spec in manifest["tensors"].values()}
    present = {p.name for p in path.iterdir() if p.name != MANIFEST}
    if listed != present:
        raise BundleError(f"{path}: manifest lists {sorted(listed ^ present)} inconsistently with the directory")
    out = {}
    for name, spec in manifest["tensors"].items():
        shape = tuple(spec["shape"])
        flat = np.fromfile(path / spec["file"], dtype="<f8")
        if flat.size != int(np.prod(shape, dtype=np.int64)):
            raise BundleError(f"{path}: tensor {name} has {flat.size} values, expected shape {shape}")
        out[name] = flat.reshape(shape).astype(np.float64)
    return out


def _build_mapping(spec: dict, t: dict):
    kind, config = spec["kind"], spec["config"]
    if kind == "dense":
        enc = [(t[f"enc{i}_W"], t[f"enc{i}_b"], a) for i, a in enumerate(config["encoder_activations"])]
        dec = [(t[f"dec{i}_W"], t[f"dec{i}_b"], a) for i, a in enumerate(config["decoder_activations"])]
        return DenseAutoencoder(enc, dec)
    if kind == "invertible":
        layers, acts = [], []
        for i, (a, c) in enumerate(zip(config["activations"], config["slope_c"])):
            layers.append(PseudoLinearLayer(t[f"W{i}"], t[f"b{i}"]))
            acts.append(InvertibleNonlinearity(a, c) if a is not None else None)
        return TiedInvertibleAutoencoder(InvertibleNet(layers, acts))
    if kind == "conv":
        model = Conv1dAutoencoder(chunk_len=config["chunk_len"], latent_dim=config["latent_dim"],
                                  channels=tuple(config["channels"]), kernel=config["kernel"],
                                  stride=config["stride"], stage_lengths=tuple(config["stage_lengths"]))
        for name in model.params:
            model.params[name][...] = t[name]
        return model
    raise BundleError(f"unknown mapping kind {kind!r}")


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    if not path.is_dir():
        raise BundleError(f"{path}: not a bundle directory")
    manifest = _read_manifest(path)
    tensors = _read_tensors(path, manifest)
    mapping_t = {k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith("mapping.")}
    base_t = {k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith("base.")}
    try:
        mapping = _build_mapping(manifest["mapping"], mapping_t)
        base = None
        if manifest["base"] is not None:
            if manifest["base"]["kind"] == "gmm":
                base = GaussianMixture(base_t["gmm_weights"], base_t["gmm_means"], base_t["gmm_covariances"])
            else:
                base = GaussianHMM(base_t["hmm_initial"], base_t["hmm_transitions"],
                                   base_t["hmm_means"], base_t["hmm_vars"])
    except KeyError as exc:
        raise BundleError(f"{path}: missing tensor {exc}") from None
    return ModelBundle(mapping, base, manifest.get("seed", 0), manifest.get("training", {}))
