"""Datasets: XOR truth table, IDX (MNIST) files and class-per-directory images."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IMAGE_SUFFIXES = (".png", ".pgm", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff")

# IDX type codes -> (numpy big-endian dtype)
_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray      # (n, d), values in [0, 1]
    targets: np.ndarray     # (n, k): one-hot rows, or a single 0/1 column
    train_idx: np.ndarray
    test_idx: np.ndarray
    classes: Optional[list] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        self.train_idx = np.asarray(self.train_idx, dtype=int)
        self.test_idx = np.asarray(self.test_idx, dtype=int)
        n = len(self.inputs)
        if len(self.targets) != n:
            raise ValueError(f"{n} inputs but {len(self.targets)} targets")
        for name, idx in (("train", self.train_idx), ("test", self.test_idx)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValueError(f"{name} indices out of range")
        if len(np.intersect1d(self.train_idx, self.test_idx)) and \
                not np.array_equal(self.train_idx, self.test_idx):
            raise ValueError("train and test splits overlap")

    def __len__(self):
        return len(self.inputs)

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.targets.shape[1]

    def with_bias(self) -> "Dataset":
        """Copy with a constant-1 feature appended to every input."""
        ones = np.ones((len(self), 1))
        return Dataset(np.hstack([self.inputs, ones]), self.targets, self.train_idx,
                       self.test_idx, self.classes)

    def subset(self, n_train: int, n_test: int, seed=0) -> "Dataset":
        """Deterministic random subset of each split."""
        rng = np.random.default_rng(seed)
        tr = np.sort(rng.permutation(self.train_idx)[:n_train])
        te = np.sort(rng.permutation(self.test_idx)[:n_test])
        return Dataset(self.inputs, self.targets, tr, te, self.classes)


def xor_dataset() -> Dataset:
    """The four XOR rows; the same rows serve as train and test set."""
    x = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    t = np.array([[0], [1], [1], [0]], dtype=float)
    idx = np.arange(4)
    return Dataset(x, t, idx, idx.copy())


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def stratified_split(labels, train_frac: float, seed=0):
    """Per-class seeded shuffle; each class contributes round(train_frac * size) training samples."""
    if not 0 < train_frac < 1:
        raise ValueError("train fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    train, test = [], []
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_train = int(round(train_frac * len(members)))
        train.extend(members[:n_train])
        test.extend(members[n_train:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


# -- IDX ---------------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzipped) into an array of its declared shape."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header at offset 0")
    zero, type_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or type_code not in _IDX_TYPES or ndim == 0:
        raise IdxFormatError(f"{path}: bad magic number 0x{int.from_bytes(raw[:4], 'big'):08x} at offset 0")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated dimension list at offset 4")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    dtype = np.dtype(_IDX_TYPES[type_code])
    expected = int(np.prod(dims)) * dtype.itemsize
    body = raw[header:]
    if len(body) < expected:
        raise IdxFormatError(f"{path}: truncated data at offset {header + len(body)}; "
                             f"expected {expected} bytes after the header")
    return np.frombuffer(body[:expected], dtype=dtype).reshape(dims)


def write_idx(path, array) -> None:
    array = np.asarray(array)
    codes = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_TYPES.items()}
    code = codes.get(array.dtype.newbyteorder("="))
    if code is None:
        raise ValueError(f"dtype {array.dtype} has no IDX type code")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(">" + "I" * array.ndim, *array.shape)
    payload = array.astype(_IDX_TYPES[code]).tobytes()
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as f:
        f.write(header + payload)


def _read_mnist_pair(image_path, label_path):
    for path, magic in ((image_path, IDX_IMAGES_MAGIC), (label_path, IDX_LABELS_MAGIC)):
        with _open(path) as f:
            head = f.read(4)
        if len(head) < 4 or int.from_bytes(head, "big") != magic:
            found = int.from_bytes(head, "big") if len(head) == 4 else None
            raise IdxFormatError(f"{path}: expected magic 0x{magic:08x} at offset 0, found "
                                 + (f"0x{found:08x}" if found is not None else "end of file"))
    images = read_idx(image_path)
    labels = read_idx(label_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{image_path}: expected a 3-d image array, got {images.ndim} dims")
    if len(images) != len(labels):
        raise IdxFormatError(f"{image_path} holds {len(images)} images but {label_path} "
                             f"holds {len(labels)} labels")
    if labels.size and labels.max() > 9:
        raise IdxFormatError(f"{label_path}: label {labels.max()} outside 0-9")
    return images.reshape(len(images), -1).astype(float) / 255.0, labels.astype(int)


def load_mnist(image_path, label_path, test_image_path=None, test_label_path=None,
               train_frac: float = 0.86, seed=0, reshuffle: bool = False) -> Dataset:
    """MNIST from IDX files.

    With separate test files and ``reshuffle=False`` the canonical train/test
    partition is kept; otherwise all samples are pooled and split
    ``train_frac`` / ``1 - train_frac`` by a seeded stratified shuffle.
    """
    x, y = _read_mnist_pair(image_path, label_path)
    if test_image_path is not None:
        xt, yt = _read_mnist_pair(test_image_path, test_label_path)
        n_train = len(x)
        x, y = np.vstack([x, xt]), np.concatenate([y, yt])
        if not reshuffle:
            idx = np.arange(len(x))
            return Dataset(x, one_hot(y, 10), idx[:n_train], idx[n_train:], list(range(10)))
    train, test = stratified_split(y, train_frac, seed)
    return Dataset(x, one_hot(y, 10), train, test, list(range(10)))


# -- image directories -------------------------------------------------------

def _to_gray_float(img):
    from PIL import Image

    if img.mode in ("F", "I", "I;16", "I;16B", "I;16L"):
        arr = np.asarray(img, dtype=float)
        scale = 255.0 if img.mode == "F" else 65535.0
        return Image.fromarray((arr / scale * 255.0).astype(np.float32), mode="F")
    return img.convert("L").convert("F")


def load_image(path, side: int = 32) -> np.ndarray:
    """Grayscale image rescaled to side x side (bilinear), flattened to [0, 1]."""
    from PIL import Image

    try:
        with Image.open(path) as img:
            img.load()
            gray = _to_gray_float(img)
    except OSError as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    resized = gray.resize((side, side), Image.BILINEAR)
    return np.clip(np.asarray(resized, dtype=float).ravel() / 255.0, 0.0, 1.0)


def load_image_dir(path, side: int = 32, train_frac: float = 0.45, seed=0) -> Dataset:
    """``<path>/<class>/*.png|pgm|jpg...``, one class per subdirectory."""
    root = Path(path)
    if not root.is_dir():
        raise ValueError(f"{root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"{root} has no class subdirectories")
    inputs, labels = [], []
    for c, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"class directory {d} holds no images")
        for f in files:
            inputs.append(load_image(f, side))
            labels.append(c)
    train, test = stratified_split(labels, train_frac, seed)
    return Dataset(np.array(inputs), one_hot(labels, len(class_dirs)), train, test,
                   [d.name for d in class_dirs])


def _blob_image(rng, yy, xx, n_blobs):
    img = np.zeros_like(yy)
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        sig = rng.uniform(0.08, 0.22)
        img += rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig ** 2))
    return img


def synthetic_faces(n_classes: int = 15, per_class: int = 11, side: int = 32,
                    train_frac: float = 0.45, seed=0, separation: float = 0.35,
                    noise: float = 0.25, max_shift: int = 2) -> Dataset:
    """Stand-in for a small face set.

    All classes share one smooth base image; each class adds its own component
    scaled by ``separation``. Samples then get a random shift of up to
    ``max_shift`` pixels, an illumination gradient and Gaussian pixel noise.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    base = _blob_image(rng, yy, xx, 8)
    inputs, labels = [], []
    for c in range(n_classes):
        template = base + separation * _blob_image(rng, yy, xx, 6)
        template = (template - template.min()) / (np.ptp(template) + 1e-12)
        for _ in range(per_class):
            dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
            img = np.roll(template, (dy, dx), axis=(0, 1))
            light = 1.0 + rng.uniform(-0.3, 0.3) * (xx - 0.5) + rng.uniform(-0.3, 0.3) * (yy - 0.5)
            img = img * light + rng.normal(0, noise, size=img.shape)
            inputs.append(np.clip(img, 0, 1).ravel())
            labels.append(c)
    train, test = stratified_split(labels, train_frac, seed)
    return Dataset(np.array(inputs), one_hot(labels, n_classes), train, test,
                   [f"class{c:02d}" for c in range(n_classes)])
