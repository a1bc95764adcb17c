"""Datasets: seeded synthetic images, IDX loading, PGM/PPM dumps and CSV writing."""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset", "IDXFormatError", "synth_dataset", "load_idx", "write_idx",
    "dump_images", "read_pnm", "write_csv", "quantize",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    """An IDX file is malformed or inconsistent with its companion file."""


@dataclass
class Dataset:
    inputs: np.ndarray            # (N, C, H, W) in [0, 1]
    labels: np.ndarray            # (N,) int64
    classes: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 4 or self.labels.shape != (self.inputs.shape[0],):
            raise ValueError(
                f"inputs {self.inputs.shape} and labels {self.labels.shape} disagree")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise ValueError("inputs must lie in [0, 1]")

    def __len__(self):
        return self.labels.size

    @property
    def shape(self):
        return self.inputs.shape[1:]

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.labels[idx], self.classes,
                       dict(self.provenance, subset=np.asarray(idx).tolist()))


# ---------------------------------------------------------------- synthetic

def _stripes(rng, label, classes, shape):
    c, h, w = shape
    angle = np.pi * label / classes
    freq = 1.0 + (label % 3)
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    phase = rng.uniform(0, 2 * np.pi)
    wave = 0.5 + 0.4 * np.sin(np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)
    tint = 0.75 + 0.25 * np.cos(2 * np.pi * (np.arange(c) / max(c, 1) + label / classes))
    img = wave[None] * tint[:, None, None]
    return img + rng.normal(0, 0.03, size=img.shape)


def _blobs(rng, label, classes, shape):
    c, h, w = shape
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    theta = 2 * np.pi * label / classes
    cy, cx = 0.5 * np.sin(theta), 0.5 * np.cos(theta)
    cy, cx = cy + rng.normal(0, 0.1), cx + rng.normal(0, 0.1)
    width = 0.35 + 0.1 * rng.uniform()
    blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    second = np.exp(-((yy + cy) ** 2 + (xx + cx) ** 2) / (2 * (0.6 * width) ** 2))
    tint = 0.6 + 0.4 * np.cos(2 * np.pi * (np.arange(c) / max(c, 1) + label / classes))
    img = (0.85 * blob + 0.35 * second)[None] * tint[:, None, None] + 0.05
    return img + rng.normal(0, 0.02, size=img.shape)


_GENERATORS = {"striped-patterns": _stripes, "gaussian-blobs": _blobs}


def synth_dataset(kind, n, shape=(1, 8, 8), classes=10, seed=0, labels=None):
    """Class-structured synthetic images clipped to [0, 1].

    Labels cycle through the classes unless given explicitly; images carry a
    class-dependent pattern plus seeded jitter and pixel noise.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {sorted(_GENERATORS)}")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = rng.permutation(np.arange(n) % classes)
    labels = np.asarray(labels, dtype=np.int64)
    gen = _GENERATORS[kind]
    images = np.stack([gen(rng, int(y), classes, tuple(shape)) for y in labels])
    prov = {"source": "synthetic", "kind": kind, "seed": int(seed), "n": int(n)}
    return Dataset(np.clip(images, 0.0, 1.0), labels, classes, prov)


# ---------------------------------------------------------------- IDX

def _read_idx(path, magic, kind):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: truncated {kind} header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IDXFormatError(f"{path}: bad {kind} magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{path}: truncated {kind} header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IDXFormatError(f"{path}: truncated {kind} payload, "
                             f"expected {count} bytes, found {len(raw) - header}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return data.reshape(dims)


def load_idx(images_path, labels_path, take=None, normalize=True, classes=None):
    """Read an IDX image/label file pair (big-endian, unsigned-byte payloads).

    Returns a :class:`Dataset` of the first ``take`` samples. With
    ``normalize=False`` the raw 0-255 ``(inputs, labels)`` arrays are returned
    instead, since they fall outside the dataset's [0, 1] range.
    """
    images = _read_idx(images_path, IMAGE_MAGIC, "image")
    labels = _read_idx(labels_path, LABEL_MAGIC, "label")
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}")
    available = images.shape[0]
    if take is None:
        take = available
    if take > available:
        raise IDXFormatError(f"requested {take} samples but the files hold {available}")
    x = images[:take].astype(np.float64)[:, None, :, :]
    if normalize:
        x = x / 255.0
    y = labels[:take].astype(np.int64)
    if classes is None:
        classes = int(labels.max()) + 1 if labels.size else 1
    prov = {"source": "idx", "images": str(images_path), "labels": str(labels_path),
            "subset": list(range(take))}
    if not normalize:
        return x, y
    return Dataset(x, y, classes, prov)


def write_idx(images_path, labels_path, images, labels):
    """Write (N, H, W) uint8 images and (N,) uint8 labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IMAGE_MAGIC))
        fh.write(struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">I", LABEL_MAGIC))
        fh.write(struct.pack(">I", labels.shape[0]))
        fh.write(labels.tobytes())


# ---------------------------------------------------------------- images

def quantize(img):
    """Map [0, 1] floats to bytes, rounding half up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def dump_images(batch, directory, prefix="img"):
    """Write each (C, H, W) image as binary PGM (C=1) or PPM (C=3)."""
    batch = np.asarray(batch, dtype=np.float64)
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, img in enumerate(batch):
        c, h, w = img.shape
        if c == 1:
            magic, ext, body = b"P5", "pgm", quantize(img[0])
        elif c == 3:
            magic, ext, body = b"P6", "ppm", quantize(np.transpose(img, (1, 2, 0)))
        else:
            raise ValueError(f"cannot dump an image with {c} channels")
        path = os.path.join(directory, f"{prefix}_{i:03d}.{ext}")
        with open(path, "wb") as fh:
            fh.write(magic + b"\n%d %d\n255\n" % (w, h))
            fh.write(body.tobytes())
        paths.append(path)
    return paths


def read_pnm(path):
    """Read a binary PGM/PPM written by :func:`dump_images` as (C, H, W) in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    c = {b"P5": 1, b"P6": 3}.get(magic)
    if c is None or maxval != 255:
        raise ValueError(f"{path}: unsupported image header")
    body = np.frombuffer(raw, dtype=np.uint8, count=w * h * c, offset=pos)
    img = body.reshape(h, w, c).transpose(2, 0, 1)
    return img.astype(np.float64) / 255.0


# ---------------------------------------------------------------- CSV

def write_csv(path, rows, columns, append=False):
    """Write dict rows with a header line; appending skips the header if present."""
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\r\n",
                                quoting=csv.QUOTE_MINIMAL)
        if not exists:
            writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})
    return path
