"""Dataset readers and the binary parameter formats.

``VIBP`` holds float (mu, rho) parameters, ``VIBQ`` holds quantized
(mu, sigma) raws.  Both are little-endian; see :func:`write_params` and
:func:`write_quant` for the exact layout.
"""
from __future__ import annotations

import csv
import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .bnn import QuantizedParams, VariationalParams
from .fxp import FixedSpec

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
PARAMS_MAGIC = b"VIBP"
QUANT_MAGIC = b"VIBQ"
FORMAT_VERSION = 1
MNIST_ENV = "HWBNN_MNIST"
MNIST_DEFAULT = "/root/data/mnist"


class FormatError(ValueError):
    """Malformed input file; the message names the byte offset."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if len(self.y) else 0


# -- IDX ------------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def parse_idx(data: bytes, expect_magic: int | None = None) -> np.ndarray:
    """Decode an unsigned-byte IDX blob into an array of its declared shape."""
    if len(data) < 4:
        raise FormatError(f"offset 0: need 4 header bytes, file has {len(data)}")
    magic = struct.unpack(">I", data[:4])[0]
    if expect_magic is not None and magic != expect_magic:
        raise FormatError(f"offset 0: magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    if magic >> 8 != 0x08:
        raise FormatError(f"offset 0: magic 0x{magic:08x} is not an unsigned-byte IDX file")
    ndim = magic & 0xFF
    if ndim == 0:
        raise FormatError("offset 3: zero dimensions")
    hdr = 4 + 4 * ndim
    if len(data) < hdr:
        raise FormatError(f"offset {len(data)}: header needs {hdr} bytes, file has {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:hdr])
    need = hdr + int(np.prod(dims, dtype=np.int64))
    if len(data) != need:
        raise FormatError(f"offset {hdr}: payload expected {need - hdr} bytes "
                          f"(file length {need}), actual file length {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, offset=hdr).reshape(dims)


def read_idx(path) -> np.ndarray:
    """Images come back as (count, rows*cols) float in [0, 1]; labels as int64."""
    raw = parse_idx(_read_bytes(path))
    if raw.ndim == 1:
        return raw.astype(np.int64)
    return raw.reshape(raw.shape[0], -1).astype(np.float64) / 255.0


def mnist_dir(path=None) -> str:
    return path or os.environ.get(MNIST_ENV, MNIST_DEFAULT)


def load_mnist(path=None, split: str = "train") -> Dataset:
    base = mnist_dir(path)
    prefix = "train" if split == "train" else "t10k"
    X = read_idx(os.path.join(base, f"{prefix}-images-idx3-ubyte"))
    y = read_idx(os.path.join(base, f"{prefix}-labels-idx1-ubyte"))
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise FormatError(f"{base}: {split} images {X.shape} do not pair with labels {y.shape}")
    return Dataset(X, y)


def load_dataset(path, split: str = "train", label: int | str = -1) -> Dataset:
    """MNIST directory, or a CSV file (``<name>_train.csv``/``<name>_test.csv`` or single)."""
    if os.path.isdir(path):
        return load_mnist(path, split)
    if split == "test":
        root, ext = os.path.splitext(path)
        alt = root.replace("_train", "_test") + ext
        if alt != path and os.path.exists(alt):
            # test features are scaled with the training split's statistics
            _, _, train_stats = read_csv_labeled(path, label=label, return_stats=True)
            X, y = read_csv_labeled(alt, label=label, normalize_with=train_stats)
            return Dataset(X, y.astype(np.int64))
    X, y = read_csv_labeled(path, label=label)
    return Dataset(X, y.astype(np.int64))


# -- CSV ------------------------------------------------------------------------

def read_csv_labeled(path, label: int | str = -1, features=None, header: bool | None = None,
                     normalize_with: tuple | None = None, return_stats: bool = False):
    """Numeric CSV with one label column.

    ``label``/``features`` are column indices or header names.  Features are
    z-scored with ``normalize_with=(mean, std)`` when given, otherwise with the
    file's own statistics (pass the training stats when reading a test split).
    """
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and any(c.strip() for c in r)]
    if not rows:
        raise FormatError(f"{path}: empty CSV")

    def numeric(cell):
        try:
            float(cell)
            return True
        except ValueError:
            return False

    if header is None:
        header = not all(numeric(c) for c in rows[0])
    names = [c.strip() for c in rows[0]] if header else None
    body = rows[1:] if header else rows
    width = len(rows[0])

    def col(ref):
        if isinstance(ref, str) and not ref.lstrip("-").isdigit():
            if names is None or ref not in names:
                raise FormatError(f"{path}: no column named {ref!r}")
            return names.index(ref)
        i = int(ref)
        return i % width

    lab = col(label)
    feats = [col(c) for c in features] if features is not None else [i for i in range(width) if i != lab]
    data = np.empty((len(body), width))
    for r, row in enumerate(body):
        line = r + (2 if header else 1)
        if len(row) != width:
            raise FormatError(f"{path}: row {line} has {len(row)} cells, expected {width}")
        for c, cell in enumerate(row):
            try:
                data[r, c] = float(cell)
            except ValueError:
                raise FormatError(f"{path}: row {line}, column {c + 1}: non-numeric cell {cell!r}") from None
    X = data[:, feats]
    y = data[:, lab]
    if normalize_with is None:
        mean, std = X.mean(axis=0), X.std(axis=0)
    else:
        mean, std = (np.asarray(a, dtype=np.float64) for a in normalize_with)
    zero = std == 0
    if np.any(zero):
        warnings.warn(f"{path}: zero-variance feature columns {np.flatnonzero(zero).tolist()} set to 0",
                      stacklevel=2)
    Xn = np.where(zero, 0.0, (X - mean) / np.where(zero, 1.0, std))
    if return_stats:
        return Xn, y, (mean, std)
    return Xn, y


# -- parameter files ------------------------------------------------------------

def _shapes_header(shapes) -> bytes:
    return b"".join(struct.pack("<II", r, c) for r, c in shapes)


def write_params(path, params: VariationalParams):
    """Layout: magic, u16 version, u16 layers, (u32 rows, u32 cols) per layer,
    then f32 payload: all mu_w, all rho_w, all mu_b, all rho_b."""
    shapes = [w.shape for w in params.mu_w]
    blob = [PARAMS_MAGIC, struct.pack("<HH", FORMAT_VERSION, len(shapes)), _shapes_header(shapes)]
    for group in (params.mu_w, params.rho_w, params.mu_b, params.rho_b):
        blob += [np.ascontiguousarray(t, dtype="<f4").tobytes() for t in group]
    with open(path, "wb") as f:
        f.write(b"".join(blob))


def _read_shapes(data, magic, path):
    if len(data) < 8:
        raise FormatError(f"{path}: offset {len(data)}: truncated header")
    if data[:4] != magic:
        raise FormatError(f"{path}: offset 0: magic {data[:4]!r}, expected {magic!r}")
    version, layers = struct.unpack("<HH", data[4:8])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: offset 4: unsupported version {version}")
    if layers == 0:
        raise FormatError(f"{path}: offset 6: zero layers")
    return version, layers


def _parse_shapes(data, off, layers, path):
    end = off + 8 * layers
    if len(data) < end:
        raise FormatError(f"{path}: offset {len(data)}: shape table needs {end} bytes")
    shapes = [struct.unpack("<II", data[off + 8 * k: off + 8 * k + 8]) for k in range(layers)]
    for k, (r, c) in enumerate(shapes):
        if r == 0 or c == 0:
            raise FormatError(f"{path}: offset {off + 8 * k}: layer {k} has empty shape {(r, c)}")
        if k and r != shapes[k - 1][1]:
            raise FormatError(f"{path}: offset {off + 8 * k}: layer {k} fan-in {r} "
                              f"does not match previous fan-out {shapes[k - 1][1]}")
    return shapes, end


def _split_payload(payload, shapes, itemsize, dtype, off, path):
    w_sizes = [r * c for r, c in shapes]
    b_sizes = [c for _, c in shapes]
    need = (2 * sum(w_sizes) + 2 * sum(b_sizes)) * itemsize
    if len(payload) != need:
        raise FormatError(f"{path}: offset {off}: payload expected {need} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=dtype)
    out, pos = [], 0
    for sizes, dims in ((w_sizes, shapes), (w_sizes, shapes), (b_sizes, None), (b_sizes, None)):
        group = []
        for k, n in enumerate(sizes):
            t = arr[pos:pos + n]
            group.append(t.reshape(dims[k]) if dims else t)
            pos += n
        out.append(group)
    return out


def read_params(path) -> VariationalParams:
    data = _read_bytes(path)
    _, layers = _read_shapes(data, PARAMS_MAGIC, path)
    shapes, off = _parse_shapes(data, 8, layers, path)
    groups = _split_payload(data[off:], shapes, 4, "<f4", off, path)
    groups = [[t.astype(np.float64) for t in g] for g in groups]
    return VariationalParams(*groups)


def write_quant(path, qp: QuantizedParams):
    """Layout: magic, u16 version, u16 layers, u8 total_bits, u8 frac_bits,
    shape table, then little-endian two's-complement raws (1, 2 or 4 bytes by
    width): all mu_w, all sigma_w, all mu_b, all sigma_b."""
    spec = qp.spec
    dtype = _raw_dtype(spec)
    shapes = [w.shape for w in qp.mu_w]
    blob = [QUANT_MAGIC, struct.pack("<HH", FORMAT_VERSION, len(shapes)),
            struct.pack("<BB", spec.total_bits, spec.frac_bits), _shapes_header(shapes)]
    for group in (qp.mu_w, qp.sigma_w, qp.mu_b, qp.sigma_b):
        blob += [np.ascontiguousarray(t).astype(dtype).tobytes() for t in group]
    with open(path, "wb") as f:
        f.write(b"".join(blob))


def _raw_dtype(spec: FixedSpec):
    if spec.total_bits <= 8:
        return np.dtype("<i1")
    if spec.total_bits <= 16:
        return np.dtype("<i2")
    return np.dtype("<i4")


def read_quant(path) -> QuantizedParams:
    data = _read_bytes(path)
    _, layers = _read_shapes(data, QUANT_MAGIC, path)
    if len(data) < 10:
        raise FormatError(f"{path}: offset {len(data)}: truncated spec")
    total, frac = struct.unpack("<BB", data[8:10])
    try:
        spec = FixedSpec(total, frac, True)
    except ValueError as e:
        raise FormatError(f"{path}: offset 8: {e}") from None
    shapes, off = _parse_shapes(data, 10, layers, path)
    dtype = _raw_dtype(spec)
    groups = _split_payload(data[off:], shapes, dtype.itemsize, dtype, off, path)
    groups = [[t.astype(np.int64) for t in g] for g in groups]
    for g in groups:
        for t in g:
            if t.size and (t.min() < spec.raw_min or t.max() > spec.raw_max):
                raise FormatError(f"{path}: raw value outside {spec}")
    return QuantizedParams(*groups, spec=spec)


def read_any_params(path):
    """Dispatch on magic: VIBP -> VariationalParams, VIBQ -> QuantizedParams."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == PARAMS_MAGIC:
        return read_params(path)
    if magic == QUANT_MAGIC:
        return read_quant(path)
    raise FormatError(f"{path}: offset 0: unknown magic {magic!r}")


def quantize_params(params: VariationalParams, spec: FixedSpec) -> QuantizedParams:
    if not isinstance(spec, FixedSpec):
        raise TypeError("spec must be a FixedSpec")
    return QuantizedParams.from_params(params, spec)
