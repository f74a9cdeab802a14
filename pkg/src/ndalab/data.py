"""Datasets: synthetic Gaussian blobs, shifted OOD sets, and feature CSVs."""
from __future__ import annotations

import csv
import os
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParseError


def sub_seed(seed: int, name: str) -> int:
    """Derive an independent named seed from a run seed.

    Lets data, init, pairing and perturbation streams vary independently
    while all flowing from one number.
    """
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"
    provenance: dict = field(default_factory=dict)
    ids: np.ndarray | None = None
    ood: bool = False

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ContractError(f"features must be N x D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if n < 1:
            raise ContractError("dataset must hold at least one sample")
        if self.labels.shape != (n,):
            raise ContractError(f"{n} feature rows but labels have shape {self.labels.shape}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ContractError("features must be finite")
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index, name=None) -> "Dataset":
        index = np.asarray(index, dtype=np.intp)
        return Dataset(self.features[index], self.labels[index], self.num_classes,
                       name=name or self.name, provenance=dict(self.provenance),
                       ids=self.ids[index], ood=self.ood)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class BlobSpec:
    num_classes: int = 4
    dim: int = 8
    per_class: int = 100
    spread: float = 3.0
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0 or self.spread <= 0:
            raise ContractError("sigma and spread must be positive")
        if self.num_classes < 1 or self.dim < 1 or self.per_class < 1:
            raise ContractError("num_classes, dim and per_class must be >= 1")


def blob_centroids(spec: BlobSpec) -> np.ndarray:
    rng = np.random.default_rng(sub_seed(spec.seed, "centroids"))
    return rng.normal(0.0, spec.spread, size=(spec.num_classes, spec.dim))


def _sample_around(centroids, spec, rng, name, provenance, ood=False):
    k = centroids.shape[0]
    labels = np.repeat(np.arange(k), spec.per_class)
    noise = rng.normal(0.0, spec.sigma, size=(labels.size, spec.dim))
    return Dataset(centroids[labels] + noise, labels, k, name=name,
                   provenance=provenance, ood=ood)


def gen_blobs(spec: BlobSpec) -> Dataset:
    """Isotropic Gaussian classes around centroids drawn from N(0, spread^2)."""
    rng = np.random.default_rng(sub_seed(spec.seed, "samples"))
    prov = {"generator": "blobs", **spec.__dict__}
    return _sample_around(blob_centroids(spec), spec, rng, "blobs", prov)


def gen_ood_set(spec: BlobSpec, shift: float) -> Dataset:
    """Same class structure as :func:`gen_blobs`, displaced by ``shift``.

    All centroids move together along one seeded random unit direction.
    Labels keep the source cluster index; ``ood`` is set on the result.
    """
    if shift < 0:
        raise ContractError(f"shift must be >= 0, got {shift}")
    rng = np.random.default_rng(sub_seed(spec.seed, "ood"))
    direction = rng.normal(size=spec.dim)
    direction /= np.linalg.norm(direction)
    centroids = blob_centroids(spec) + shift * direction
    prov = {"generator": "blobs-ood", "shift": shift, **spec.__dict__}
    return _sample_around(centroids, spec, rng, "blobs-ood", prov, ood=True)


# --- feature CSV -----------------------------------------------------------


def atomic_write_text(path, text: str):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_features(dataset: Dataset, path):
    # repr() gives the shortest string that round-trips a double exactly
    lines = [",".join([f"f{j}" for j in range(dataset.dim)] + ["label"])]
    for row, label in zip(dataset.features, dataset.labels):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(label))]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_features(path) -> Dataset:
    """Parse ``f0,...,f{D-1},label`` CSV; K is inferred as max label + 1."""
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        dim = len(header) - 1
        expected = [f"f{j}" for j in range(dim)] + ["label"]
        if dim < 1 or [h.strip() for h in header] != expected:
            raise ParseError("header must be f0,...,f{D-1},label", line=1)
        for line_no, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != dim + 1:
                raise ParseError(f"expected {dim + 1} cells, got {len(cells)}", line=line_no)
            try:
                values = [float(c) for c in cells[:-1]]
            except ValueError:
                raise ParseError("non-numeric feature cell", line=line_no) from None
            if not all(np.isfinite(values)):
                raise ParseError("non-finite feature value", line=line_no)
            try:
                label = int(cells[-1])
            except ValueError:
                raise ParseError(f"label {cells[-1]!r} is not an integer", line=line_no) from None
            if label < 0:
                raise ParseError(f"negative label {label}", line=line_no)
            rows.append(values)
            labels.append(label)
    if not rows:
        raise ParseError("no data rows", line=2)
    labels = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(rows, dtype=np.float64), labels, int(labels.max()) + 1,
                   name=os.path.basename(os.fspath(path)),
                   provenance={"source": os.fspath(path)})
