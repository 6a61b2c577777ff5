"""Command-line surface: train, encode, sample, classify, manipulate, eval."""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import storage, tasks
from .autoencoder import train_autoencoder
from .config import ExperimentConfig, load_config
from .errors import ConfigError, FlowPluginError
from .flow import build_flow
from .numerics import Rng
from .synthetic import one_hot
from .trainer import build_latent_dataset, train_flow


def _load_attribute_rows(cfg: ExperimentConfig, n_rows: int) -> np.ndarray:
    labels_path = cfg.dataset_path("labels", required=False)
    attrs_path = cfg.dataset_path("attributes", required=False)
    if labels_path is not None:
        y = storage.load_labels_csv(labels_path, cfg.dataset.get("classes"))
    elif attrs_path is not None:
        y = storage.load_matrix(attrs_path)
    else:
        raise ConfigError("config dataset section needs 'labels' or 'attributes'")
    if y.shape[0] != n_rows:
        raise ConfigError(f"dataset has {n_rows} object rows but {y.shape[0]} attribute rows")
    return y


def _parse_attr_vector(text: str, expected: int, flag: str) -> np.ndarray:
    try:
        values = np.array([float(v) for v in text.split(",")], dtype=np.float64)
    except ValueError:
        raise ConfigError(f"{flag} must be a comma-separated list of numbers, got {text!r}")
    if values.size != expected:
        raise ConfigError(f"{flag} has {values.size} entries, flow expects {expected}")
    return values.reshape(1, -1)


def cmd_train_ae(args) -> int:
    cfg = load_config(args.config)
    x = storage.load_matrix(cfg.dataset_path("objects"))
    model, history = train_autoencoder(x, cfg.autoencoder_config(x.shape[1]))
    model.freeze()
    out = cfg.artifact_path("autoencoder")
    storage.save_autoencoder(out, model)
    print(f"trained {model.variant} base model: {x.shape[1]} -> {model.latent_dim}, "
          f"final loss {history[-1][1]:.6f}, saved to {out}")
    return 0


def cmd_encode(args) -> int:
    cfg = load_config(args.config)
    model = storage.load_autoencoder(cfg.artifact_path("autoencoder"))
    model.frozen = True
    x = storage.load_matrix(cfg.dataset_path("objects"))
    y = _load_attribute_rows(cfg, x.shape[0])
    fraction = cfg.train.get("validation_fraction", 0.1)
    ds = build_latent_dataset(model, x, y, seed=cfg.seed, validation_fraction=fraction)
    out = cfg.artifact_path("latent_dataset")
    storage.save_latent_dataset(out, ds)
    print(f"encoded {ds.z.shape[0]} rows to {ds.latent_dim}-dim latents "
          f"({len(ds.train_idx)} train / {len(ds.val_idx)} validation), saved to {out}")
    return 0


def cmd_train_flow(args) -> int:
    cfg = load_config(args.config)
    ds = storage.load_latent_dataset(cfg.artifact_path("latent_dataset"))
    flow_path = cfg.artifact_path("flow")
    model = build_flow(cfg.flow_family, ds.latent_dim, ds.attribute_dim,
                       rng=Rng(cfg.seed), **cfg.flow_kwargs())
    model, history = train_flow(model, ds, cfg.train_config(checkpoint_path=flow_path))
    storage.write_loss_history(cfg.artifact_path("loss_history"), history)
    best = min(h[2] for h in history)
    print(f"trained {cfg.flow_family} flow for {len(history)} epochs, "
          f"best validation nll {best:.6f}, saved to {flow_path}")
    return 0


def cmd_sample(args) -> int:
    cfg = load_config(args.config)
    flow = storage.load_flow_model(cfg.artifact_path("flow"))
    base = storage.load_autoencoder(cfg.artifact_path("autoencoder"))
    count = args.count if args.count is not None else cfg.tasks.get("sample_count", 64)
    y = one_hot(np.full(count, args.class_index), flow.context_dim)
    objects = tasks.conditional_generate(flow, base, y, Rng(args.seed))
    storage.save_matrix(args.output, objects)
    print(f"wrote {count} samples of class {args.class_index} to {args.output}")
    if args.pgm is not None:
        side = int(math.isqrt(objects.shape[1]))
        shape = tuple(cfg.tasks.get("image_shape", (side, side)))
        if shape[0] * shape[1] != objects.shape[1]:
            raise ConfigError(f"cannot reshape {objects.shape[1]}-dim rows to {shape} images")
        storage.write_pgm_grid(args.pgm, objects, shape)
        print(f"wrote image grid to {args.pgm}")
    return 0


def cmd_classify(args) -> int:
    cfg = load_config(args.config)
    flow = storage.load_flow_model(cfg.artifact_path("flow"))
    ds = storage.load_latent_dataset(args.dataset if args.dataset is not None
                                     else cfg.artifact_path("latent_dataset"))
    if args.split == "val":
        z, y = ds.val_split()
    elif args.split == "train":
        z, y = ds.train_split()
    else:
        z, y = ds.z, ds.y
    prior = tasks.flow_prior(flow, fallback_uniform=cfg.prior_mode() == "uniform")
    predicted = tasks.classify(flow, prior, z)
    truth = y.argmax(axis=1)
    k = flow.context_dim
    confusion = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(truth, predicted):
        confusion[t, p] += 1
    print(f"accuracy,{float((predicted == truth).mean())!r}")
    print("true\\predicted," + ",".join(str(j) for j in range(k)))
    for t in range(k):
        print(f"{t}," + ",".join(str(confusion[t, j]) for j in range(k)))
    return 0


def cmd_manipulate(args) -> int:
    cfg = load_config(args.config)
    flow = storage.load_flow_model(cfg.artifact_path("flow"))
    base = storage.load_autoencoder(cfg.artifact_path("autoencoder"))
    x = storage.load_matrix(args.input if args.input is not None
                            else cfg.dataset_path("objects"))
    y_dst = np.repeat(_parse_attr_vector(args.dst_attrs, flow.context_dim, "--dst-attrs"),
                      x.shape[0], axis=0)
    if args.src_attrs is not None:
        y_src = np.repeat(_parse_attr_vector(args.src_attrs, flow.context_dim,
                                             "--src-attrs"), x.shape[0], axis=0)
    else:
        y_src = _load_attribute_rows(cfg, x.shape[0])
    edited = tasks.manipulate_attributes(flow, base, x, y_src, y_dst)
    storage.save_matrix(args.output, edited)
    print(f"wrote {edited.shape[0]} edited objects to {args.output}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    flow = storage.load_flow_model(cfg.artifact_path("flow"))
    flow.set_training(False)
    rng = Rng(args.seed)
    y = rng.normal(args.rows, flow.context_dim)
    u = rng.standard_normal(args.rows, flow.dim)
    z, ld_fwd = flow.forward(u, y)
    back, ld_inv = flow.inverse(z, y)
    round_trip = float(np.abs(back - u).max())
    logdet_gap = float(np.abs(ld_fwd + ld_inv).max())
    print(f"round_trip_max_error,{round_trip:.3e}")
    print(f"logdet_antisymmetry_max,{logdet_gap:.3e}")
    jac_gap = None
    if flow.dim <= 8:
        point = rng.standard_normal(1, flow.dim)
        ctx = rng.normal(1, flow.context_dim)

        def fwd(vec):
            out, _ = flow.forward(vec.reshape(1, -1), ctx)
            return out[0]

        h = 1e-6
        jac = np.zeros((flow.dim, flow.dim))
        for j in range(flow.dim):
            xp, xm = point[0].copy(), point[0].copy()
            xp[j] += h
            xm[j] -= h
            jac[:, j] = (fwd(xp) - fwd(xm)) / (2 * h)
        _, expected = np.linalg.slogdet(jac)
        _, reported = flow.forward(point, ctx)
        jac_gap = float(abs(reported[0] - expected))
        print(f"logdet_vs_numeric_jacobian,{jac_gap:.3e}")
    ok = round_trip <= 1e-8 and logdet_gap <= 1e-10 and (jac_gap is None or jac_gap <= 1e-5)
    print(f"status,{'ok' if ok else 'degraded'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowplugin",
        description="Conditional normalizing flows on frozen autoencoder latents.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ae", help="train and save the base autoencoder")
    p.add_argument("config")
    p.set_defaults(fn=cmd_train_ae)

    p = sub.add_parser("encode", help="encode the dataset into a latent dataset")
    p.add_argument("config")
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("train-flow", help="train the flow plugin on saved latents")
    p.add_argument("config")
    p.set_defaults(fn=cmd_train_flow)

    p = sub.add_parser("sample", help="conditionally generate objects")
    p.add_argument("config")
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--pgm", default=None, help="also write a PGM image grid")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("classify", help="classify latents and print accuracy + confusion")
    p.add_argument("config")
    p.add_argument("--dataset", default=None, help="latent dataset file (default: config)")
    p.add_argument("--split", choices=("val", "train", "all"), default="val")
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("manipulate", help="edit object attributes through the flow")
    p.add_argument("config")
    p.add_argument("--src-attrs", default=None,
                   help="comma-separated source attributes (default: dataset ground truth)")
    p.add_argument("--dst-attrs", required=True)
    p.add_argument("--input", default=None, help="objects MatrixFile (default: config)")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_manipulate)

    p = sub.add_parser("eval", help="invertibility and log-det diagnostics on a saved flow")
    p.add_argument("config")
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FlowPluginError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
