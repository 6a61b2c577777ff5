"""Binary artifact formats and file I/O.

Matrices use a minimal self-describing container (magic ``FPNM``, u32 rows,
u32 cols, row-major little-endian float64 payload).  Models and latent
datasets share one container (magic ``FPN1``) with a kind byte, layer-type
tags, and raw parameter blobs; round-trips are bit-exact.  All writes go to a
temp file in the target directory and are renamed into place.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .autoencoder import Autoencoder
from .errors import ParseError
from .flow import FlowModel
from .numerics import Rng
from .synthetic import one_hot
from .trainer import LatentDataset
from .transforms import (
    AffineCouplingLayer,
    InvertibleBatchNorm,
    MaskedAutoregressiveLayer,
    ReversePermutation,
)

MATRIX_MAGIC = b"FPNM"
MODEL_MAGIC = b"FPN1"

KIND_FLOW = 1
KIND_AUTOENCODER = 2
KIND_LATENT_DATASET = 3

LAYER_MAF = 1
LAYER_COUPLING = 2
LAYER_REVERSE = 3
LAYER_BATCHNORM = 4


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-write-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def raw(self, data: bytes):
        self.parts.append(data)

    def u8(self, v: int):
        self.parts.append(struct.pack("<B", v))

    def u32(self, v: int):
        self.parts.append(struct.pack("<I", v))

    def f64(self, v: float):
        self.parts.append(struct.pack("<d", v))

    def matrix(self, arr: np.ndarray):
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        self.u32(arr.shape[0])
        self.u32(arr.shape[1])
        self.raw(arr.astype("<f8").tobytes())

    def blob(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        avail = len(self.blob) - self.offset
        if avail < n:
            raise ParseError(f"{self.path}: truncated reading {what} at byte "
                             f"{self.offset}: expected {n} bytes, found {avail}")
        out = self.blob[self.offset:self.offset + n]
        self.offset += n
        return out

    def u8(self, what: str) -> int:
        return struct.unpack("<B", self.take(1, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]

    def matrix(self, what: str) -> np.ndarray:
        rows = self.u32(f"{what} rows")
        cols = self.u32(f"{what} cols")
        payload = self.take(rows * cols * 8, f"{what} payload")
        return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()

    def expect_end(self):
        if self.offset != len(self.blob):
            raise ParseError(f"{self.path}: {len(self.blob) - self.offset} trailing "
                             f"bytes after byte {self.offset}")


# ---------------------------------------------------------------------------
# Matrix files
# ---------------------------------------------------------------------------

def save_matrix(path: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if arr.ndim != 2:
        raise ParseError(f"matrices must be 2-D, got shape {arr.shape}")
    w = _Writer()
    w.raw(MATRIX_MAGIC)
    w.matrix(arr)
    atomic_write_bytes(path, w.blob())


def load_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    magic = r.take(4, "magic")
    if magic != MATRIX_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r} at byte 0, expected {MATRIX_MAGIC!r}")
    arr = r.matrix("matrix")
    r.expect_end()
    return arr


def load_labels_csv(path: str, classes: int | None = None) -> np.ndarray:
    """One integer class per line, expanded to one-hot rows."""
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise ParseError(f"{path}:{line_no}: expected an integer class, got {line!r}")
    arr = np.asarray(labels, dtype=np.int64)
    k = classes if classes is not None else (int(arr.max()) + 1 if arr.size else 0)
    return one_hot(arr, k)


def write_loss_history(path: str, history: list[tuple[int, float, float]]) -> None:
    lines = ["epoch,train_nll,val_nll"]
    lines += [f"{epoch},{train!r},{val!r}" for epoch, train, val in history]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_pgm_grid(path: str, images: np.ndarray, image_shape: tuple[int, int],
                   grid_cols: int = 8) -> None:
    """Binary PGM (P5) grid of row-vectors reshaped to image_shape, values in [0,1]."""
    h, wd = image_shape
    if images.shape[1] != h * wd:
        raise ParseError(f"rows of length {images.shape[1]} cannot reshape to {image_shape}")
    n = images.shape[0]
    cols = max(1, min(grid_cols, n))
    rows = (n + cols - 1) // cols
    canvas = np.zeros((rows * h, cols * wd))
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * h:(r + 1) * h, c * wd:(c + 1) * wd] = images[i].reshape(h, wd)
    pixels = np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + pixels.tobytes())


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------

def _write_params(w: _Writer, obj) -> None:
    for p in obj.parameters():
        w.matrix(p.data)


def _read_params(r: _Reader, obj, what: str) -> None:
    for i, p in enumerate(obj.parameters()):
        arr = r.matrix(f"{what} parameter {i}")
        if arr.shape != p.data.shape:
            raise ParseError(f"{r.path}: {what} parameter {i} has shape {arr.shape}, "
                             f"expected {p.data.shape}")
        p.data[:] = arr


def save_flow_model(path: str, model: FlowModel) -> None:
    w = _Writer()
    w.raw(MODEL_MAGIC)
    w.u8(KIND_FLOW)
    w.u32(model.dim)
    w.u32(model.context_dim)
    prior = model.class_prior
    w.u32(0 if prior is None else prior.size)
    if prior is not None:
        w.raw(np.ascontiguousarray(prior, dtype="<f8").tobytes())
    w.u32(len(model.layers))
    for layer in model.layers:
        if isinstance(layer, MaskedAutoregressiveLayer):
            w.u8(LAYER_MAF)
            w.u32(layer.conditioner.hidden)
            w.u32(layer.conditioner.blocks)
            w.f64(layer.clamp)
            _write_params(w, layer)
        elif isinstance(layer, AffineCouplingLayer):
            w.u8(LAYER_COUPLING)
            w.u32(layer.split)
            w.u8(layer.parity)
            w.u32(layer.scale_net.hidden)
            w.u32(layer.scale_net.blocks)
            w.f64(layer.clamp)
            _write_params(w, layer)
        elif isinstance(layer, ReversePermutation):
            w.u8(LAYER_REVERSE)
        elif isinstance(layer, InvertibleBatchNorm):
            w.u8(LAYER_BATCHNORM)
            w.f64(layer.momentum)
            w.f64(layer.eps)
            w.matrix(layer.running_mean)
            w.matrix(layer.running_var)
        else:
            raise ParseError(f"cannot serialize layer type {type(layer).__name__}")
    atomic_write_bytes(path, w.blob())


def _load_flow(r: _Reader) -> FlowModel:
    dim = r.u32("flow dim")
    context_dim = r.u32("flow context dim")
    prior_len = r.u32("prior length")
    prior = None
    if prior_len:
        prior = np.frombuffer(r.take(prior_len * 8, "prior"), dtype="<f8").copy()
    n_layers = r.u32("layer count")
    layers = []
    for i in range(n_layers):
        tag = r.u8(f"layer {i} tag")
        if tag == LAYER_MAF:
            hidden = r.u32("maf hidden")
            blocks = r.u32("maf blocks")
            clamp = r.f64("maf clamp")
            layer = MaskedAutoregressiveLayer(dim, context_dim, hidden=hidden,
                                              blocks=blocks, clamp=clamp, rng=Rng(0))
            _read_params(r, layer, f"layer {i}")
        elif tag == LAYER_COUPLING:
            split = r.u32("coupling split")
            parity = r.u8("coupling parity")
            hidden = r.u32("coupling hidden")
            blocks = r.u32("coupling blocks")
            clamp = r.f64("coupling clamp")
            layer = AffineCouplingLayer(dim, context_dim, split=split, parity=parity,
                                        hidden=hidden, blocks=blocks, clamp=clamp,
                                        rng=Rng(0))
            _read_params(r, layer, f"layer {i}")
        elif tag == LAYER_REVERSE:
            layer = ReversePermutation(dim, context_dim)
        elif tag == LAYER_BATCHNORM:
            momentum = r.f64("batchnorm momentum")
            eps = r.f64("batchnorm eps")
            layer = InvertibleBatchNorm(dim, context_dim, momentum=momentum, eps=eps)
            layer.running_mean[:] = r.matrix("running mean")
            layer.running_var[:] = r.matrix("running var")
        else:
            raise ParseError(f"{r.path}: unknown layer tag {tag} at byte {r.offset - 1}")
        layers.append(layer)
    model = FlowModel(dim, context_dim, layers)
    model.class_prior = prior
    return model


def save_autoencoder(path: str, model: Autoencoder) -> None:
    w = _Writer()
    w.raw(MODEL_MAGIC)
    w.u8(KIND_AUTOENCODER)
    w.u32(model.input_dim)
    w.u32(model.latent_dim)
    w.u8(1 if model.variant == "vae" else 0)
    w.u8(1 if model.frozen else 0)
    w.u32(len(model.hidden))
    for h in model.hidden:
        w.u32(h)
    _write_params(w, model)
    atomic_write_bytes(path, w.blob())


def _load_autoencoder(r: _Reader) -> Autoencoder:
    input_dim = r.u32("input dim")
    latent_dim = r.u32("latent dim")
    variant = "vae" if r.u8("variant") else "ae"
    frozen = bool(r.u8("frozen flag"))
    hidden = tuple(r.u32(f"hidden size {i}") for i in range(r.u32("hidden count")))
    model = Autoencoder(input_dim, latent_dim, hidden, variant, rng=Rng(0))
    _read_params(r, model, "autoencoder")
    model.frozen = frozen
    return model


def save_latent_dataset(path: str, ds: LatentDataset) -> None:
    w = _Writer()
    w.raw(MODEL_MAGIC)
    w.u8(KIND_LATENT_DATASET)
    w.matrix(ds.z)
    w.matrix(ds.y)
    w.matrix(ds.train_idx.astype(np.float64).reshape(1, -1))
    w.matrix(ds.val_idx.astype(np.float64).reshape(1, -1))
    atomic_write_bytes(path, w.blob())


def _load_latent_dataset(r: _Reader) -> LatentDataset:
    z = r.matrix("latents")
    y = r.matrix("attributes")
    train_idx = r.matrix("train indices").astype(np.int64).ravel()
    val_idx = r.matrix("validation indices").astype(np.int64).ravel()
    return LatentDataset(z=z, y=y, train_idx=train_idx, val_idx=val_idx)


_LOADERS = {
    KIND_FLOW: _load_flow,
    KIND_AUTOENCODER: _load_autoencoder,
    KIND_LATENT_DATASET: _load_latent_dataset,
}


def load_artifact(path: str):
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    magic = r.take(4, "magic")
    if magic != MODEL_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r} at byte 0, expected {MODEL_MAGIC!r}")
    kind = r.u8("artifact kind")
    if kind not in _LOADERS:
        raise ParseError(f"{path}: unknown artifact kind {kind} at byte 4")
    artifact = _LOADERS[kind](r)
    r.expect_end()
    return artifact


def _load_expecting(path: str, expected_type, what: str):
    artifact = load_artifact(path)
    if not isinstance(artifact, expected_type):
        raise ParseError(f"{path}: contains {type(artifact).__name__}, expected {what}")
    return artifact


def load_flow_model(path: str) -> FlowModel:
    return _load_expecting(path, FlowModel, "a flow model")


def load_autoencoder(path: str) -> Autoencoder:
    return _load_expecting(path, Autoencoder, "an autoencoder")


def load_latent_dataset(path: str) -> LatentDataset:
    return _load_expecting(path, LatentDataset, "a latent dataset")
