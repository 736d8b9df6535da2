"""Dataset container, image-folder persistence and the desk benchmark.

Datasets live in memory as uint8 (N, H, W, 3) arrays and on disk as
``root/<split>/<class_id>/<name>.png`` plus a TSV manifest with columns
(index, relative_path, label). Images are exposed to the rest of the
toolkit as float arrays in [0, 1]; 8-bit quantization is the storage
contract, so per-sample metrics are always computed on quantized images.
"""

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

TRAIN = "train"
TEST = "test"


@dataclass
class LabeledDataset:
    images: np.ndarray  # uint8, (N, H, W, 3)
    labels: np.ndarray  # int64, (N,)
    num_classes: int
    split: str

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ValueError(f"images must be (N, H, W, 3), got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError("labels/images length mismatch")
        if self.split not in (TRAIN, TEST):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ValueError("label outside class range")

    def __len__(self):
        return len(self.images)

    def image(self, i: int) -> np.ndarray:
        """Sample i as float64 in [0, 1]."""
        return self.images[i].astype(np.float64) / 255.0

    def images_float(self) -> np.ndarray:
        """All images as float32 in [0, 1] (training/forging dtype)."""
        return self.images.astype(np.float32) / 255.0

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.images.tobytes())
        h.update(self.labels.tobytes())
        h.update(str(self.num_classes).encode())
        return h.hexdigest()[:16]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.images[idx], self.labels[idx], self.num_classes, self.split
        )


def quantize(img: np.ndarray) -> np.ndarray:
    """[0, 1] float image -> uint8 via round-to-nearest."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_image_folder(dataset: LabeledDataset, root: str):
    """Write ``root/<split>/<class_id>/<index>.png`` and the TSV manifest."""
    split_dir = os.path.join(root, dataset.split)
    os.makedirs(split_dir, exist_ok=True)
    rows = []
    for i in range(len(dataset)):
        y = int(dataset.labels[i])
        cls_dir = os.path.join(split_dir, str(y))
        os.makedirs(cls_dir, exist_ok=True)
        rel = os.path.join(dataset.split, str(y), f"{i:06d}.png")
        Image.fromarray(dataset.images[i]).save(os.path.join(root, rel))
        rows.append((i, rel, y))
    with open(os.path.join(split_dir, "manifest.tsv"), "w") as fh:
        fh.write("index\trelative_path\tlabel\n")
        for i, rel, y in rows:
            fh.write(f"{i}\t{rel}\t{y}\n")
    meta = os.path.join(root, f"{dataset.split}_meta.tsv")
    with open(meta, "w") as fh:
        fh.write(f"num_classes\t{dataset.num_classes}\n")


def load_image_folder(root: str, split: str) -> LabeledDataset:
    """Load a dataset written by :func:`save_image_folder`."""
    manifest = os.path.join(root, split, "manifest.tsv")
    if not os.path.isfile(manifest):
        raise FileNotFoundError(f"dataset manifest not found: {manifest}")
    images, labels = [], []
    with open(manifest) as fh:
        next(fh)  # header
        for line in fh:
            _, rel, y = line.rstrip("\n").split("\t")
            img = np.asarray(Image.open(os.path.join(root, rel)).convert("RGB"))
            images.append(img)
            labels.append(int(y))
    with open(os.path.join(root, f"{split}_meta.tsv")) as fh:
        num_classes = int(fh.readline().split("\t")[1])
    return LabeledDataset(np.stack(images), np.asarray(labels), num_classes, split)


def _smooth_field(rng: np.random.Generator, size: int, grid: int) -> np.ndarray:
    """Low-frequency random field in [0, 1] via bilinear upsampling."""
    coarse = rng.random((grid, grid, 3))
    xi = np.linspace(0, grid - 1, size)
    # separable bilinear interpolation
    x0 = np.clip(np.floor(xi).astype(int), 0, grid - 2)
    fx = (xi - x0)[None, :, None]
    rows = coarse[:, x0] * (1 - fx) + coarse[:, x0 + 1] * fx
    fy = (xi - x0)[:, None, None]
    return rows[x0] * (1 - fy) + rows[x0 + 1] * fy


def make_desk_dataset(
    num_classes: int = 10,
    size: int = 32,
    n_train: int = 10_000,
    n_test: int = 2_000,
    seed: int = 0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Synthetic desk-scale benchmark: smooth class prototypes plus noise.

    Each class is a fixed low-frequency color field; samples mix the
    prototype with sample-specific smooth noise, a small translation and
    brightness jitter. Small CNNs reach high accuracy in a few epochs.
    """
    rng = np.random.default_rng(seed)
    protos = [_smooth_field(rng, size, 4) for _ in range(num_classes)]

    def _make(n, split, rng):
        labels = np.arange(n) % num_classes
        rng.shuffle(labels)
        imgs = np.empty((n, size, size, 3), dtype=np.uint8)
        for i, y in enumerate(labels):
            noise = _smooth_field(rng, size, 8)
            img = 0.62 * protos[y] + 0.38 * noise
            shift = rng.integers(-2, 3, size=2)
            img = np.roll(img, tuple(shift), axis=(0, 1))
            img = img + rng.normal(0.0, 0.03) + rng.normal(0.0, 0.02, img.shape)
            imgs[i] = quantize(np.clip(img, 0.0, 1.0))
        return LabeledDataset(imgs, labels, num_classes, split)

    train = _make(n_train, TRAIN, np.random.default_rng(seed + 1))
    test = _make(n_test, TEST, np.random.default_rng(seed + 2))
    return train, test
