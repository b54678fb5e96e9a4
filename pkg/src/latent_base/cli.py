"""``latent-base`` command-line entry point.

Every command is one process that reads files, writes files and exits with
0 on success, 2 on a configuration error, 3 on a data or bundle error and 4
on a numerical failure. All randomness derives from ``--seed`` through named
sub-streams, so equal arguments give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import audio
from .autoencoder import Adam, DenseAutoencoder, TiedInvertibleAutoencoder, train_stage1
from .bundle import ModelBundle, load_bundle, save_bundle
from .conv_autoencoder import Conv1dAutoencoder
from .datasets import (LabeledDataset, filter_classes, gen_two_gaussian_toy, load_any, save_raw,
                       synthetic_digits)
from .demos import run_fig1, run_fig2, synth_multitone
from .errors import (BadMagic, BundleError, CountMismatch, DimensionMismatch, NoLabels,
                     NonFiniteLoss, NotPositiveDefinite, TooShort, TruncatedFile, UnsupportedFormat)
from .gmm import gmm_fit_em
from .hmm import GaussianHMM, hmm_fit_baum_welch
from .invertible_net import InvertibleNet
from .kde import KdeConfig, kde_compare, write_kde_csv
from .likelihood import ImplicitModel
from .numerics import make_rng

log = logging.getLogger("latent_base")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    pass


# -- file helpers ---------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def write_matrix(path: Path, x, prefix="x", extra=None) -> Path:
    """Matrix rows as CSV; ``extra`` is an optional ``(name, int column)``."""
    x = np.atleast_2d(x)
    header = [f"{prefix}{i}" for i in range(x.shape[1])]
    if extra is not None:
        header.append(extra[0])
    rows = []
    for i, row in enumerate(x):
        vals = [_fmt(v) for v in row]
        if extra is not None:
            vals.append(str(int(extra[1][i])))
        rows.append(vals)
    return write_rows(path, header, rows)


def resolve_data(token: str, seed: int, labels: str | None = None, classes=None) -> LabeledDataset:
    """A dataset path (IDX with ``labels``, CSV, raw) or a ``synthetic:`` token."""
    if token is None:
        raise ConfigError("--data is required")
    if token.startswith("synthetic:"):
        kind = token.split(":", 1)[1]
        rng = make_rng(seed, "data")
        if kind == "toy":
            ds = gen_two_gaussian_toy(rng, 2000)
        elif kind == "digits":
            ds = synthetic_digits(rng, 100)
        elif kind == "multitone":
            sig = synth_multitone(rng)
            ds = LabeledDataset(audio.chunk(sig).chunks, None, token)
        else:
            raise ConfigError(f"unknown synthetic dataset {kind!r} (toy, digits, multitone)")
    else:
        ds = load_any(token, labels)
    if classes:
        ds = filter_classes(ds, classes)
    if len(ds) == 0:
        raise CountMismatch(f"{token}: no items")
    return ds


def _data_from(args, bundle: ModelBundle | None = None) -> LabeledDataset:
    """Use ``--data`` if given, else the dataset recorded in the bundle."""
    if args.data is not None:
        return resolve_data(args.data, args.seed, args.labels, _classes(args.classes))
    if bundle is None or "data" not in bundle.training:
        raise ConfigError("--data is required")
    t = bundle.training
    return resolve_data(t["data"], t["data_seed"], t.get("labels"), t.get("classes"))


def _classes(spec):
    if spec is None or spec == "":
        return None
    if isinstance(spec, (list, tuple)):
        return [int(c) for c in spec]
    return [int(c) for c in str(spec).split(",")]


def _ints(spec):
    if isinstance(spec, (list, tuple)):
        return [int(v) for v in spec]
    return [int(v) for v in str(spec).split(",") if v]


def _complete(bundle: ModelBundle, path) -> ImplicitModel:
    if bundle.base is None:
        raise BundleError(f"{path}: bundle has no base distribution; run fit-base first")
    return ImplicitModel(bundle.mapping, bundle.base)


# -- commands -------------------------------------------------------------------

def cmd_train_ae(args, out: Path) -> None:
    ds = resolve_data(args.data, args.seed, args.labels, _classes(args.classes))
    rng = make_rng(args.seed, "ae")
    hidden = _ints(args.hidden)
    if args.arch == "dense":
        model = DenseAutoencoder.build(ds.dim, hidden, args.latent_dim, rng, hidden_act=args.hidden_act,
                                       output_act=args.output_act)
    elif args.arch == "invertible":
        if len(hidden) != 1:
            raise ConfigError("the invertible perceptron takes exactly one hidden width")
        model = TiedInvertibleAutoencoder(InvertibleNet.perceptron(args.latent_dim, hidden[0], ds.dim, rng))
    else:
        if ds.dim != audio.CHUNK:
            raise DimensionMismatch(f"conv autoencoder needs {audio.CHUNK}-sample chunks, got dim {ds.dim}")
        model = Conv1dAutoencoder(latent_dim=args.latent_dim, channels=tuple(_ints(args.channels)), rng=rng)
    result = train_stage1(model, ds.x, args.epochs, make_rng(args.seed, "ae-shuffle"),
                          batch_size=args.batch_size, optimizer=Adam(lr=args.lr))
    training = {"data": args.data, "data_seed": args.seed, "labels": args.labels,
                "classes": _classes(args.classes), "arch": args.arch, "epochs": args.epochs,
                "lr": args.lr, "batch_size": args.batch_size, "initial_loss": result.initial_loss,
                "final_loss": result.history[-1]}
    save_bundle(ModelBundle(model, None, args.seed, training), out / args.bundle)
    write_rows(out / "loss.csv", ["epoch", "loss"],
               [[i + 1, _fmt(v)] for i, v in enumerate(result.history)])
    print(f"trained {args.arch} autoencoder: loss {result.initial_loss:.6g} -> {result.history[-1]:.6g}")


def cmd_fit_base(args, out: Path) -> None:
    path = Path(args.bundle)
    bundle = load_bundle(path)
    ds = _data_from(args, bundle)
    codes = bundle.mapping.encode(ds.x)
    rng = make_rng(args.seed, "base")
    if args.kind == "gmm":
        res = gmm_fit_em(codes, args.components, rng, max_iters=args.max_iters)
    else:
        if bundle.mapping_kind != "conv":
            log.warning("fitting an HMM to non-sequential data; items are taken as frames in order")
        res = hmm_fit_baum_welch([codes], args.components, rng, max_iters=args.max_iters)
    if not np.all(np.isfinite(res.trace)):
        raise NonFiniteLoss("EM produced a non-finite log-likelihood", res.trace)
    bundle.base = res.model
    bundle.training = {**bundle.training, "base": {"kind": args.kind, "components": args.components,
                                                   "max_iters": args.max_iters, "seed": args.seed}}
    save_bundle(bundle, path)
    write_rows(out / "em_trace.csv", ["iteration", "log_likelihood"],
               [[i, _fmt(v)] for i, v in enumerate(res.trace)])
    print(f"fitted {args.kind} with {args.components} components: log-likelihood {res.trace[-1]:.6g}")


def _generate_wav(model: ImplicitModel, seed: int, frames: int, path: Path) -> Path:
    if not isinstance(model.base, GaussianHMM) or not isinstance(model.mapping, Conv1dAutoencoder):
        raise BundleError("audio generation needs a conv autoencoder with an HMM base")
    if frames < 1:
        raise ConfigError("frame count must be >= 1")
    gen = audio.generate_audio(model, make_rng(seed, "sample"), frames)
    audio.save_wav(gen.signal, path)
    return path


def cmd_sample(args, out: Path) -> None:
    bundle = load_bundle(args.bundle)
    model = _complete(bundle, args.bundle)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    if bundle.mapping_kind == "conv" and isinstance(model.base, GaussianHMM):
        path = _generate_wav(model, args.seed, args.n, out / (args.out or "generated.wav"))
    else:
        x, labels = model.sample(make_rng(args.seed, "sample"), args.n)
        name = "state" if isinstance(model.base, GaussianHMM) else "component"
        path = write_matrix(out / (args.out or "samples.csv"), x, extra=(name, labels))
    print(f"wrote {path}")


def cmd_score(args, out: Path) -> None:
    bundle = load_bundle(args.bundle)
    model = _complete(bundle, args.bundle)
    test = resolve_data(args.test, args.seed, args.labels, _classes(args.classes))
    samples, _ = model.sample(make_rng(args.seed, "sample"), args.n_samples)
    rows = kde_compare(test.x, {args.name: samples},
                       KdeConfig(bandwidth_variance=args.bandwidth, samples_per_batch=args.n_samples))
    write_kde_csv(rows, out / "kde.csv")
    print(f"kde_score {rows[0]['kde_score']!r} log_kde_score {rows[0]['log_kde_score']!r}")


def cmd_demo_fig1(args, out: Path) -> None:
    res = run_fig1(args.seed, epochs=args.epochs)
    for tag, model, trace in (("fixed", res.fixed, res.fixed_trace), ("learned", res.learned, res.learned_trace)):
        rng = make_rng(args.seed, f"sample-{tag}")
        h, labels = model.base.sample(rng, args.n_generated)
        write_matrix(out / f"fig1_{tag}_data.csv", res.train.x, extra=("label", res.train.labels))
        write_matrix(out / f"fig1_{tag}_generated.csv", model.decode(h), extra=("component", labels))
        write_matrix(out / f"fig1_{tag}_latent.csv", h, prefix="h", extra=("component", labels))
        write_matrix(out / f"fig1_{tag}_embedded.csv", model.encode(res.train.x), prefix="h",
                     extra=("label", res.train.labels))
    write_rows(out / "fig1_summary.csv", ["run", "train_log_likelihood", "test_log_likelihood"],
               [["fixed", _fmt(res.fixed_trace[-1]), _fmt(res.fixed_ll)],
                ["learned", _fmt(res.learned_trace[-1]), _fmt(res.learned_ll)],
                ["oracle_gmm", "", _fmt(res.oracle_ll)]])
    print(f"held-out log-likelihood: fixed {res.fixed_ll:.4f}  learned {res.learned_ll:.4f}  "
          f"oracle {res.oracle_ll:.4f}")


def cmd_demo_fig2(args, out: Path) -> None:
    data = None
    if args.data is not None:
        data = resolve_data(args.data, args.seed, args.labels, _classes(args.classes) or [0, 1])
        if data.labels is None:
            raise NoLabels("demo-fig2 needs labelled data")
    res = run_fig2(args.seed, data=data, epochs=args.epochs, n_components=args.components,
                   n_samples=args.n_samples)
    labels = data.labels if data is not None else synthetic_digits(make_rng(args.seed, "data"), 100).labels
    emb = np.column_stack([res.embeddings, labels, res.assignments])
    write_rows(out / "fig2_embeddings.csv", ["z0", "z1", "label", "component"],
               [[_fmt(a), _fmt(b), int(c), int(d)] for a, b, c, d in emb])
    b = res.base
    write_rows(out / "fig2_ellipses.csv",
               ["component", "weight", "mean0", "mean1", "cov00", "cov01", "cov11"],
               [[k, _fmt(b.weights[k]), _fmt(b.means[k, 0]), _fmt(b.means[k, 1]), _fmt(b.covariances[k, 0, 0]),
                 _fmt(b.covariances[k, 0, 1]), _fmt(b.covariances[k, 1, 1])] for k in range(b.n_components)])
    _, comp = b.sample(make_rng(args.seed, "sample"), args.n_samples)
    order = np.argsort(comp, kind="stable")
    write_matrix(out / "fig2_samples.csv", res.samples[order], extra=("component", comp[order]))
    print(f"component purity {res.purity:.4f}; max nearest-neighbour distance "
          f"{res.nearest_distances.max():.4f} (inter-class 95th percentile {res.inter_class_p95:.4f})")


def cmd_audio_prep(args, out: Path) -> None:
    if args.wav == "synthetic:multitone":
        sig = synth_multitone(make_rng(args.seed, "data"), seconds=args.seconds)
        audio.save_wav(sig, out / "source.wav")
    else:
        sig = audio.load_wav(args.wav)
    chunks = audio.chunk(sig)
    path = out / args.out
    save_raw(LabeledDataset(chunks.chunks, None, str(args.wav)), path)
    print(f"wrote {len(chunks.chunks)} chunks to {path}")


def cmd_audio_gen(args, out: Path) -> None:
    bundle = load_bundle(args.bundle)
    path = _generate_wav(_complete(bundle, args.bundle), args.seed, args.frames, out / args.out)
    print(f"wrote {path}")


def cmd_spectrogram(args, out: Path) -> None:
    sig = audio.load_wav(args.wav)
    grid = audio.spectrogram(sig, args.fft_size, args.hop)
    audio.write_spectrogram_csv(grid, out / args.out)
    print(f"wrote {grid.shape[0]}x{grid.shape[1]} spectrogram to {out / args.out}")


# -- argument parsing -------------------------------------------------------------

def _data_flags(p, required=False):
    p.add_argument("--data", required=False, default=None,
                   help="dataset path (IDX images, .csv or raw .f64) or synthetic:toy|digits|multitone"
                        + (" (required)" if required else ""))
    p.add_argument("--labels", default=None, help="IDX labels file accompanying IDX images")
    p.add_argument("--classes", default=None, help="comma-separated labels to keep, e.g. 0,1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latent-base", description=__doc__.split("\n\n")[0])
    parser.add_argument("--seed", type=int, default=None, help="master random seed (required)")
    parser.add_argument("--out-dir", default=".", help="directory for output files")
    parser.add_argument("--config", default=None, help="JSON file of flag values; explicit flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("train-ae", help="stage 1: train an autoencoder and write a bundle")
    _data_flags(p, required=True)
    p.add_argument("--arch", choices=["dense", "invertible", "conv"], default="dense")
    p.add_argument("--latent-dim", type=int, default=2)
    p.add_argument("--hidden", default="64", help="comma-separated hidden widths")
    p.add_argument("--hidden-act", default="relu", choices=["tanh", "sigmoid", "relu", "identity"])
    p.add_argument("--output-act", default="sigmoid", choices=["tanh", "sigmoid", "relu", "identity"])
    p.add_argument("--channels", default="16,32", help="conv hidden channel widths")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--bundle", default="model", help="bundle directory name inside --out-dir")
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("fit-base", help="stage 2: fit a GMM or HMM on the bundle's embeddings")
    p.add_argument("--bundle", required=False, default=None, help="bundle directory (updated in place)")
    _data_flags(p)
    p.add_argument("--kind", choices=["gmm", "hmm"], default="gmm")
    p.add_argument("--components", type=int, default=3, help="mixture components M or HMM states S")
    p.add_argument("--max-iters", type=int, default=200)
    p.set_defaults(func=cmd_fit_base)

    p = sub.add_parser("sample", help="draw decoded samples (CSV, or WAV for audio bundles)")
    p.add_argument("--bundle", default=None)
    p.add_argument("--n", type=int, default=10, help="samples, or frames for audio bundles")
    p.add_argument("--out", default=None, help="output file name inside --out-dir")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("score", help="KDE score of test data under model samples")
    p.add_argument("--bundle", default=None)
    p.add_argument("--test", default=None, help="test dataset path or synthetic token")
    p.add_argument("--labels", default=None)
    p.add_argument("--classes", default=None)
    p.add_argument("--bandwidth", type=float, default=0.1, help="kernel variance")
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--name", default="model")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("demo-fig1", help="fixed vs learned base on the two-Gaussian toy")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--n-generated", type=int, default=500)
    p.set_defaults(func=cmd_demo_fig1)

    p = sub.add_parser("demo-fig2", help="2-D latent autoencoder + 3-component GMM on 0/1 digits")
    _data_flags(p)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--components", type=int, default=3)
    p.add_argument("--n-samples", type=int, default=64)
    p.set_defaults(func=cmd_demo_fig2)

    p = sub.add_parser("audio-prep", help="cut a WAV into windowed chunks for train-ae --arch conv")
    p.add_argument("--wav", default=None, help="8 kHz 16-bit mono WAV or synthetic:multitone")
    p.add_argument("--seconds", type=float, default=4.0, help="length of the synthetic signal")
    p.add_argument("--out", default="chunks.f64")
    p.set_defaults(func=cmd_audio_prep)

    p = sub.add_parser("audio-gen", help="generate a WAV from a conv + HMM bundle")
    p.add_argument("--bundle", default=None)
    p.add_argument("--frames", type=int, default=19)
    p.add_argument("--out", default="generated.wav")
    p.set_defaults(func=cmd_audio_gen)

    p = sub.add_parser("spectrogram", help="magnitude spectrogram of a WAV as CSV")
    p.add_argument("--wav", default=None)
    p.add_argument("--fft-size", type=int, default=256)
    p.add_argument("--hop", type=int, default=128)
    p.add_argument("--out", default="spectrogram.csv")
    p.set_defaults(func=cmd_spectrogram)
    return parser


_REQUIRED = {"train-ae": ["data"], "fit-base": ["bundle"], "sample": ["bundle"], "score": ["bundle", "test"],
             "audio-prep": ["wav"], "audio-gen": ["bundle"], "spectrogram": ["wav"]}


def parse_args(argv) -> argparse.Namespace:
    """Parse flags; values from ``--config`` act as defaults so explicit flags win."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise ConfigError("config file must hold a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
        known = set(vars(args)) - {"func", "command", "config"}
        unknown = sorted(set(config) - known)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {unknown}")
        parser = build_parser()
        parser.set_defaults(**{k: v for k, v in config.items() if k in ("seed", "out_dir", "verbose")})
        parser.subcommands[args.command].set_defaults(**config)
        args = parser.parse_args(argv)
    if args.seed is None:
        raise ConfigError("--seed is required")
    if not isinstance(args.seed, int) or args.seed < 0:
        raise ConfigError("--seed must be a non-negative integer")
    for name in _REQUIRED.get(args.command, []):
        if getattr(args, name) is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required for {args.command}")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(f"latent-base: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, out)
    except ConfigError as exc:
        print(f"latent-base: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, BundleError, BadMagic, TruncatedFile, CountMismatch, NoLabels,
            UnsupportedFormat, TooShort, DimensionMismatch) as exc:
        print(f"latent-base: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLoss, NotPositiveDefinite, FloatingPointError) as exc:
        print(f"latent-base: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"latent-base: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
