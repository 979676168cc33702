"""Bi-view datasets: file formats, scaling, corruption protocol and pair sampling.

Manifest grammar
----------------
A manifest is a UTF-8 text file of ``key = value`` lines. Blank lines and
lines starting with ``#`` are ignored. Relative paths resolve against the
manifest's directory. Recognised keys::

    name      = free text (optional)
    view1     = path to a matrix file (.csv or .mvc)
    view2     = path to a matrix file
    labels    = path to a labels file (one integer per line)
    dims      = 20, 30            # declared per-view column counts (optional)
    n_classes = 10                # optional; defaults to max(label) + 1

Matrix files are either header-free comma-separated decimals (``.csv``) or the
binary ``MVC1`` layout: 4 magic bytes, little-endian u32 rows, u32 cols, then
rows*cols little-endian float64 values in row-major order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateBatchError, DerangementError, LoadError, RatioError

MVC_MAGIC = b"MVC1"


@dataclass
class Scaling:
    mins: list[np.ndarray]
    ranges: list[np.ndarray]

    def apply(self, views):
        return [_scale(x, lo, rng) for x, lo, rng in zip(views, self.mins, self.ranges)]


@dataclass
class MultiViewDataset:
    views: list[np.ndarray]
    labels: np.ndarray
    n_classes: int
    name: str = ""
    scaling: Scaling | None = None

    def __post_init__(self):
        self.views = [np.asarray(v, dtype=np.float64) for v in self.views]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.labels.shape[0]
        for v, x in enumerate(self.views, start=1):
            if x.ndim != 2 or x.shape[0] != n:
                raise LoadError(f"view {v} has shape {x.shape}, expected {n} rows")
            if not np.all(np.isfinite(x)):
                raise LoadError(f"view {v} contains non-finite values")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise LoadError(f"labels must lie in [0, {self.n_classes})")
        missing = set(range(self.n_classes)) - set(np.unique(self.labels).tolist())
        if missing:
            raise LoadError(f"classes never observed: {sorted(missing)}")

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def view_dims(self) -> list[int]:
        return [x.shape[1] for x in self.views]


# ---------------------------------------------------------------------------
# matrix and label files
# ---------------------------------------------------------------------------

def write_matrix(path, x) -> None:
    path = Path(path)
    x = np.asarray(x, dtype=np.float64)
    if path.suffix == ".mvc":
        rows, cols = x.shape
        with open(path, "wb") as fh:
            fh.write(MVC_MAGIC + struct.pack("<II", rows, cols))
            fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())
    else:
        np.savetxt(path, x, delimiter=",", fmt="%.17g")


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"matrix file not found: {path}")
    if path.suffix == ".mvc":
        raw = path.read_bytes()
        if raw[:4] != MVC_MAGIC or len(raw) < 12:
            raise LoadError(f"{path}: not an MVC1 matrix file")
        rows, cols = struct.unpack("<II", raw[4:12])
        body = raw[12:]
        if len(body) != rows * cols * 8:
            raise LoadError(f"{path}: expected {rows * cols} values, found {len(body) // 8}")
        x = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(rows, cols)
    else:
        try:
            x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise LoadError(f"{path}: {exc}") from exc
    if not np.all(np.isfinite(x)):
        row = int(np.argwhere(~np.isfinite(x))[0, 0])
        raise LoadError(f"{path}: non-finite value in row {row}")
    return x


def read_labels(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"labels file not found: {path}")
    labels = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            labels.append(int(line))
        except ValueError:
            raise LoadError(f"{path}: line {lineno} is not an integer: {line!r}") from None
    return np.asarray(labels, dtype=np.int64)


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def parse_manifest(path) -> dict[str, str]:
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise LoadError(f"{path}: line {lineno} is not 'key = value'")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.split("#", 1)[0].strip()
    return entries


def load_dataset(manifest_path) -> MultiViewDataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise LoadError(f"manifest not found: {manifest_path}")
    entries = parse_manifest(manifest_path)
    base = manifest_path.parent
    for key in ("view1", "view2", "labels"):
        if key not in entries:
            raise LoadError(f"{manifest_path}: missing key {key!r}")

    views = [read_matrix(base / entries[f"view{v}"]) for v in (1, 2)]
    labels = read_labels(base / entries["labels"])

    for v, x in enumerate(views, start=1):
        if x.shape[0] != labels.shape[0]:
            raise LoadError(
                f"{entries[f'view{v}']}: {x.shape[0]} rows but labels file has {labels.shape[0]}")
    if "dims" in entries:
        declared = [int(s) for s in entries["dims"].split(",")]
        for v, (x, d) in enumerate(zip(views, declared), start=1):
            if x.shape[1] != d:
                raise LoadError(f"{entries[f'view{v}']}: {x.shape[1]} columns, manifest declares {d}")
    if "n_classes" in entries:
        n_classes = int(entries["n_classes"])
    else:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    bad = np.flatnonzero((labels < 0) | (labels >= n_classes))
    if bad.size:
        raise LoadError(f"{entries['labels']}: label out of range at row {int(bad[0])}")
    return MultiViewDataset(views, labels, n_classes, name=entries.get("name", ""))


def save_dataset(ds: MultiViewDataset, directory, fmt: str = "csv") -> Path:
    """Write views, labels and a manifest into ``directory``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = {"csv": ".csv", "binary": ".mvc", "mvc": ".mvc"}[fmt]
    lines = [f"name = {ds.name or directory.name}"]
    for v, x in enumerate(ds.views, start=1):
        write_matrix(directory / f"view{v}{ext}", x)
        lines.append(f"view{v} = view{v}{ext}")
    write_labels(directory / "labels.txt", ds.labels)
    lines += ["labels = labels.txt",
              "dims = " + ", ".join(str(d) for d in ds.view_dims),
              f"n_classes = {ds.n_classes}"]
    manifest = directory / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def _scale(x, lo, rng):
    safe = np.where(rng > 0, rng, 1.0)
    return np.where(rng > 0, (x - lo) / safe, 0.0)


def normalize(ds: MultiViewDataset) -> MultiViewDataset:
    """Per-feature min-max scaling to [0, 1]; constant features map to 0."""
    mins = [x.min(axis=0) for x in ds.views]
    ranges = [x.max(axis=0) - lo for x, lo in zip(ds.views, mins)]
    scaling = Scaling(mins, ranges)
    views = [np.clip(x, 0.0, 1.0) for x in scaling.apply(ds.views)]
    return replace(ds, views=views, scaling=scaling)


# ---------------------------------------------------------------------------
# corruption protocol
# ---------------------------------------------------------------------------

@dataclass
class PartitionMasks:
    """Complete (X), unaligned (S) and missing (W) index sets.

    ``shuffle_perm[k] = l`` means the view-2 row observed at ``unaligned_idx[k]``
    is really the view-2 sample of ``unaligned_idx[l]``. ``missing_view`` holds
    the dropped view (1 or 2) for each entry of ``missing_idx``.
    """

    n_samples: int
    complete_idx: np.ndarray
    unaligned_idx: np.ndarray
    missing_idx: np.ndarray
    shuffle_perm: np.ndarray
    missing_view: np.ndarray
    alpha: float = 0.0
    beta: float = 0.0
    seed: int | None = None

    @property
    def gamma(self) -> float:
        return self.complete_idx.size / self.n_samples if self.n_samples else 0.0

    def to_text(self) -> str:
        def row(a):
            return " ".join(str(int(v)) for v in a)

        return "\n".join([
            "# hmimvc partition masks v1",
            f"n_samples = {self.n_samples}",
            f"alpha = {self.alpha!r}",
            f"beta = {self.beta!r}",
            f"gamma = {1.0 - self.alpha - self.beta!r}",
            f"seed = {self.seed}",
            f"complete = {row(self.complete_idx)}",
            f"unaligned = {row(self.unaligned_idx)}",
            f"shuffle_perm = {row(self.shuffle_perm)}",
            f"missing = {row(self.missing_idx)}",
            f"missing_view = {row(self.missing_view)}",
        ]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PartitionMasks":
        fields_ = {}
        for line in text.splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                key, value = line.split("=", 1)
                fields_[key.strip()] = value.strip()

        def idx(key):
            return np.array([int(t) for t in fields_[key].split()], dtype=np.int64)

        seed = fields_.get("seed", "None")
        return cls(
            n_samples=int(fields_["n_samples"]),
            complete_idx=idx("complete"),
            unaligned_idx=idx("unaligned"),
            missing_idx=idx("missing"),
            shuffle_perm=idx("shuffle_perm"),
            missing_view=idx("missing_view"),
            alpha=float(fields_["alpha"]),
            beta=float(fields_["beta"]),
            seed=None if seed == "None" else int(seed),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "PartitionMasks":
        return cls.from_text(Path(path).read_text())


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5 + 1e-9))


def random_derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform fixed-point-free permutation of range(n) by rejection sampling."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if n == 1:
        raise DerangementError("a single unaligned instance cannot be deranged")
    ar = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == ar):
            return perm.astype(np.int64)


def simulate_corruption(ds, alpha: float = 0.25, beta: float = 0.25, seed=0) -> PartitionMasks:
    """Split instances into complete / unaligned / missing sets.

    ``ds`` may be a dataset or a plain sample count.
    """
    n = ds if isinstance(ds, (int, np.integer)) else ds.n_samples
    if alpha < 0 or beta < 0:
        raise RatioError("alpha and beta must be non-negative")
    if alpha + beta > 1.0 + 1e-12:
        raise RatioError(f"alpha + beta = {alpha + beta} exceeds 1")
    n_w = _round_half_up(alpha * n)
    n_s = _round_half_up(beta * n)
    if n_w + n_s > n:
        n_s = n - n_w
    if n_s == 1:
        raise DerangementError(
            "beta yields exactly one unaligned instance; widen beta or set it to zero")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    missing_idx = np.sort(order[:n_w])
    unaligned_idx = np.sort(order[n_w:n_w + n_s])
    complete_idx = np.sort(order[n_w + n_s:])
    perm = random_derangement(n_s, rng)
    missing_view = rng.integers(1, 3, size=n_w).astype(np.int64)
    return PartitionMasks(n, complete_idx.astype(np.int64), unaligned_idx.astype(np.int64),
                          missing_idx.astype(np.int64), perm, missing_view,
                          alpha=float(alpha), beta=float(beta),
                          seed=None if seed is None else int(seed))


def observed_views(ds: MultiViewDataset, masks: PartitionMasks) -> list[np.ndarray]:
    """The data an analyst would actually hold after corruption.

    View-2 rows of the unaligned set are scrambled by ``shuffle_perm`` and the
    dropped view of every missing instance is replaced by NaN.
    """
    x1 = ds.views[0].copy()
    x2 = ds.views[1].copy()
    s = masks.unaligned_idx
    if s.size:
        x2[s] = ds.views[1][s[masks.shuffle_perm]]
    w = masks.missing_idx
    x1[w[masks.missing_view == 1]] = np.nan
    x2[w[masks.missing_view == 2]] = np.nan
    return [x1, x2]


# ---------------------------------------------------------------------------
# pair sampling
# ---------------------------------------------------------------------------

@dataclass
class PairBatch:
    anchor_idx: np.ndarray
    partner_idx: np.ndarray
    y: np.ndarray

    def __len__(self):
        return int(self.y.size)

    @property
    def n_pos(self) -> int:
        return int(self.y.sum())

    @property
    def n_neg(self) -> int:
        return len(self) - self.n_pos

    def relative_to(self, batch_indices) -> "PairBatch":
        """Re-express dataset indices as row positions within ``batch_indices``."""
        batch_indices = np.asarray(batch_indices)
        lookup = {int(j): k for k, j in enumerate(batch_indices)}
        anchor = np.array([lookup[int(i)] for i in self.anchor_idx], dtype=np.int64)
        partner = np.array([lookup[int(i)] for i in self.partner_idx], dtype=np.int64)
        return PairBatch(anchor, partner, self.y.copy())


def sample_pairs(masks: PartitionMasks | None, batch_indices, seed, neg_per_pos: int = 1) -> PairBatch:
    """One positive (i, i) and ``neg_per_pos`` negatives (i, j != i) per batch index."""
    batch = np.asarray(batch_indices, dtype=np.int64)
    b = batch.size
    if b < 2:
        raise DegenerateBatchError("need at least two indices to form a negative pair")
    if masks is not None and not np.all(np.isin(batch, masks.complete_idx)):
        raise ValueError("pair sampling is restricted to the complete set")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, b - 1, size=(neg_per_pos, b))
    pos = np.arange(b)
    partner_pos = np.where(draws < pos, draws, draws + 1)
    anchor = np.concatenate([batch] + [batch] * neg_per_pos)
    partner = np.concatenate([batch] + [batch[row] for row in partner_pos])
    y = np.concatenate([np.ones(b, dtype=np.int64), np.zeros(b * neg_per_pos, dtype=np.int64)])
    return PairBatch(anchor, partner, y)


# ---------------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------------

SYNTH_NOISE = 0.3


def make_synthetic(n_samples=2000, n_classes=10, view_dims=(20, 30), center_scale=1.0,
                   noise=SYNTH_NOISE, cross_noise=0.1, seed=0) -> MultiViewDataset:
    """Gaussian class blobs in view 1, mapped to view 2 by a random linear map plus noise.

    Labels cycle through the classes so every class is present.
    """
    d1, d2 = view_dims
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(n_classes, d1))
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    x1 = centers[labels] + rng.normal(0.0, noise, size=(n_samples, d1))
    cross = rng.normal(0.0, 1.0 / np.sqrt(d1), size=(d2, d1))
    x2 = x1 @ cross.T + rng.normal(0.0, cross_noise, size=(n_samples, d2))
    return MultiViewDataset([x1, x2], labels, n_classes, name="synthetic")
