"""Synthetic multi-domain long-tailed benchmark and CSV loaders.

The generator mirrors the structure of the image benchmarks at desk scale:
class anchors in input space give the shared geometry, semantic rows are a
noisy projection of those anchors (so semantic similarity tracks visual
similarity, which the covariance blending relies on), and each domain is an
invertible affine distortion of the shared geometry, i.e. a style that
shifts P(X|Y) while leaving class semantics alone. Training counts follow
the long-tail curve, non-head classes are carried by only a few domains, and
the last domain is held out entirely: it appears only in the class-balanced
test split.

File formats (UTF-8, comma-separated, round-trip-exact floats):

- dataset CSV:   header ``domain,label,split,x_0,...,x_{d_x-1}``, one row per
  sample, split in {train, val, test}.
- embedding CSV: header ``label,s_0,...,s_{d_s-1}``, exactly one row per
  class; rows are re-normalized on load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .banks import SemanticTable
from .errors import ConfigError, DataFormatError
from .losses import DomainClassCounts
from .mathcore import Rng, unit_normalize

SPLITS = ("train", "val", "test")


def longtail_counts(rank: int, n_max: int, n_min: int, n_classes: int,
                    curve_scale: float) -> int:
    """Training-sample count of the class at 1-based sorted rank.

        n = floor( n_max * (n_min/n_max) ** (sqrt(rank-1) / curve_scale) )

    Non-increasing in rank; rank 1 gives n_max, and rank C lands exactly on
    n_min when curve_scale = sqrt(C-1).
    """
    if not 1 <= rank <= n_classes:
        raise ValueError("rank out of range")
    if n_max < n_min or n_min < 1:
        raise ValueError("need n_max >= n_min >= 1")
    ratio = n_min / n_max
    return int(math.floor(n_max * ratio ** (math.sqrt(rank - 1) / curve_scale)))


def default_tail_budget(n_classes: int, n_train_domains: int) -> tuple[int, ...]:
    """Thirds rule: head third in all domains, middle third in 2, tail in 1."""
    head = math.ceil(n_classes / 3)
    mid = math.ceil(2 * n_classes / 3)
    out = []
    for c in range(n_classes):
        if c < head:
            out.append(n_train_domains)
        elif c < mid:
            out.append(min(2, n_train_domains))
        else:
            out.append(1)
    return tuple(out)


@dataclass(frozen=True)
class SyntheticConfig:
    n_classes: int = 20
    n_train_domains: int = 4
    d_x: int = 12
    d_s: int = 8
    n_max: int = 200
    n_min: int = 5
    curve_scale: float | None = None          # None -> sqrt(n_classes - 1)
    anchor_spread: float = 3.0
    noise_scale: float = 0.6
    semantic_noise: float = 0.1
    transform_strength: float = 0.4
    tail_domain_budget: tuple[int, ...] | None = None
    n_val_per_pair: int = 4
    n_test_per_pair: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.n_train_domains < 1:
            raise ConfigError("n_train_domains must be >= 1")
        if not (self.n_max >= self.n_min >= 1):
            raise ConfigError("need n_max >= n_min >= 1")
        if self.tail_domain_budget is not None:
            b = tuple(int(v) for v in self.tail_domain_budget)
            if len(b) != self.n_classes:
                raise ConfigError("tail_domain_budget must have one entry per class")
            if any(v < 1 for v in b):
                raise ConfigError("tail_domain_budget entries must be >= 1 "
                                  "(a class assigned 0 domains cannot be trained)")
            if any(v > self.n_train_domains for v in b):
                raise ConfigError("tail_domain_budget exceeds the number of train domains")
            if b[0] != self.n_train_domains:
                raise ConfigError("head class (rank 1) must be present in all train domains")
            object.__setattr__(self, "tail_domain_budget", b)

    @property
    def scale(self) -> float:
        if self.curve_scale is not None:
            return float(self.curve_scale)
        return math.sqrt(self.n_classes - 1)

    @property
    def budget(self) -> tuple[int, ...]:
        if self.tail_domain_budget is not None:
            return self.tail_domain_budget
        return default_tail_budget(self.n_classes, self.n_train_domains)

    @property
    def heldout_domain(self) -> int:
        return self.n_train_domains


@dataclass
class Dataset:
    """Columnar sample store plus the derived training-count table.

    Domains 0..K-1 are the training domains (they own train/val/test data);
    any domain >= K is held out and appears only in the test split.
    """

    x: np.ndarray          # (N, d_x) float64
    y: np.ndarray          # (N,) int64
    d: np.ndarray          # (N,) int64
    split: np.ndarray      # (N,) str in SPLITS
    counts: DomainClassCounts
    semantic: SemanticTable | None = None

    @property
    def n_classes(self) -> int:
        return self.counts.n_classes

    @property
    def n_train_domains(self) -> int:
        return self.counts.n_domains

    @property
    def domains(self) -> np.ndarray:
        return np.unique(self.d)

    @property
    def heldout_domains(self) -> list[int]:
        return [int(k) for k in self.domains if k >= self.n_train_domains]

    def indices(self, split: str, domain: int | None = None) -> np.ndarray:
        sel = self.split == split
        if domain is not None:
            sel &= self.d == domain
        return np.nonzero(sel)[0]

    def with_semantic(self, table: SemanticTable) -> "Dataset":
        if table.n_classes != self.n_classes:
            raise ValueError("semantic table class count mismatch")
        return Dataset(self.x, self.y, self.d, self.split, self.counts, table)


def make_dataset(x, y, d, split, semantic: SemanticTable | None = None) -> Dataset:
    """Assemble and validate a dataset from columns.

    Checks the split invariants: train domains are contiguous from 0, every
    validation (domain, class) pair has training data in that domain, and
    each domain's test split is class-balanced over all classes.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    d = np.asarray(d, dtype=np.int64)
    split = np.asarray(split, dtype=str)
    if not (len(x) == len(y) == len(d) == len(split)):
        raise ValueError("column lengths differ")
    if not np.isfinite(x).all():
        raise ValueError("features must be finite")
    bad = set(np.unique(split)) - set(SPLITS)
    if bad:
        raise ValueError(f"unknown split tags {sorted(bad)}")

    n_classes = semantic.n_classes if semantic is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels out of range")

    train = split == "train"
    train_domains = np.unique(d[train])
    if train_domains.size == 0:
        raise ValueError("dataset has no training samples")
    k = int(train_domains.max()) + 1
    if not np.array_equal(train_domains, np.arange(k)):
        raise ValueError("train domains must be contiguous from 0")
    counts = np.zeros((k, n_classes), dtype=np.int64)
    np.add.at(counts, (d[train], y[train]), 1)
    counts = DomainClassCounts(counts)

    val = split == "val"
    if val.any():
        if (d[val] >= k).any():
            raise ValueError("validation data in a held-out domain")
        if (counts.counts[d[val], y[val]] <= 0).any():
            raise ValueError("validation split contains a class unseen in its domain")

    test = split == "test"
    for dom in np.unique(d):
        yd = y[test & (d == dom)]
        per_class = np.bincount(yd, minlength=n_classes)
        if (per_class == 0).any() or per_class.max() != per_class.min():
            raise ValueError(f"test split of domain {dom} is not class-balanced")

    return Dataset(x, y, d, split, counts, semantic)


def generate(cfg: SyntheticConfig) -> Dataset:
    """Draw a complete synthetic benchmark from the config seed."""
    c_total, k_train = cfg.n_classes, cfg.n_train_domains
    root = Rng(cfg.seed)
    anchor_rng, sem_rng, style_rng, assign_rng, sample_rng = root.split(5)

    anchors = cfg.anchor_spread * anchor_rng.normal(size=(c_total, cfg.d_x))

    proj = sem_rng.normal(size=(cfg.d_s, cfg.d_x)) / math.sqrt(cfg.d_x)
    sem_rows = np.stack([
        unit_normalize(proj @ anchors[c] + cfg.semantic_noise * sem_rng.normal(size=cfg.d_s))
        for c in range(c_total)
    ])
    table = SemanticTable(sem_rows)

    transforms = []
    for _ in range(k_train + 1):
        for _attempt in range(100):
            a = np.eye(cfg.d_x) + cfg.transform_strength \
                * style_rng.normal(size=(cfg.d_x, cfg.d_x)) / math.sqrt(cfg.d_x)
            if abs(np.linalg.det(a)) > 1e-3:
                break
        else:
            raise ConfigError("could not draw an invertible domain transform")
        t = cfg.transform_strength * style_rng.normal(size=cfg.d_x)
        transforms.append((a, t))

    budget = cfg.budget
    per_class_counts = [longtail_counts(c + 1, cfg.n_max, cfg.n_min, c_total, cfg.scale)
                        for c in range(c_total)]
    placement = np.zeros((k_train, c_total), dtype=np.int64)
    for c in range(c_total):
        m = budget[c]
        if per_class_counts[c] < m:
            raise ConfigError(f"class rank {c + 1}: count {per_class_counts[c]} "
                              f"cannot cover {m} domains")
        assigned = np.sort(assign_rng.choice(k_train, size=m, replace=False))
        base, rem = divmod(per_class_counts[c], m)
        order = assign_rng.permutation(assigned)
        for j, dom in enumerate(order):
            placement[dom, c] = base + (1 if j < rem else 0)

    def draw(dom: int, cls: int, n: int) -> np.ndarray:
        a, t = transforms[dom]
        eps = cfg.noise_scale * sample_rng.normal(size=(n, cfg.d_x))
        return (anchors[cls] + eps) @ a.T + t

    xs, ys, ds, tags = [], [], [], []

    def emit(dom: int, cls: int, n: int, tag: str):
        if n <= 0:
            return
        xs.append(draw(dom, cls, n))
        ys.append(np.full(n, cls, dtype=np.int64))
        ds.append(np.full(n, dom, dtype=np.int64))
        tags.extend([tag] * n)

    for dom in range(k_train):
        for cls in range(c_total):
            emit(dom, cls, int(placement[dom, cls]), "train")
    for dom in range(k_train):
        for cls in range(c_total):
            if placement[dom, cls] > 0:
                emit(dom, cls, cfg.n_val_per_pair, "val")
    for dom in range(k_train + 1):
        for cls in range(c_total):
            emit(dom, cls, cfg.n_test_per_pair, "test")

    return make_dataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(ds),
                        np.array(tags), semantic=table)


def sample_batch(dataset: Dataset, domain: int, batch_size: int, rng: Rng):
    """Uniform draw with replacement from a domain's training split, so the
    batch preserves the domain's long-tailed class frequencies."""
    idx = dataset.indices("train", domain)
    if idx.size == 0:
        raise ValueError(f"domain {domain} has no training samples")
    sel = idx[rng.integers(0, idx.size, size=batch_size)]
    return dataset.x[sel], dataset.y[sel]


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(dataset: Dataset, path) -> None:
    d_x = dataset.x.shape[1]
    header = "domain,label,split," + ",".join(f"x_{i}" for i in range(d_x))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for i in range(len(dataset.y)):
            row = [str(int(dataset.d[i])), str(int(dataset.y[i])), str(dataset.split[i])]
            row.extend(_fmt(v) for v in dataset.x[i])
            fh.write(",".join(row) + "\n")


def load_dataset(path, semantic: SemanticTable | None = None) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError("empty dataset file")
    header = lines[0].split(",")
    if header[:3] != ["domain", "label", "split"]:
        raise DataFormatError("header must start with domain,label,split", line=1)
    d_x = len(header) - 3
    if d_x < 1 or header[3:] != [f"x_{i}" for i in range(d_x)]:
        raise DataFormatError("feature columns must be x_0..x_{d-1}", line=1)

    xs, ys, ds, tags = [], [], [], []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3 + d_x:
            raise DataFormatError(f"expected {3 + d_x} fields, got {len(parts)}", line=ln)
        try:
            ds.append(int(parts[0]))
            ys.append(int(parts[1]))
            xs.append([float(v) for v in parts[3:]])
        except ValueError as exc:
            raise DataFormatError(str(exc), line=ln) from exc
        if parts[2] not in SPLITS:
            raise DataFormatError(f"unknown split tag {parts[2]!r}", line=ln)
        tags.append(parts[2])
    try:
        return make_dataset(np.array(xs), ys, ds, tags, semantic=semantic)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc


def save_embeddings(table: SemanticTable, path) -> None:
    header = "label," + ",".join(f"s_{i}" for i in range(table.dim))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for c in range(table.n_classes):
            fh.write(",".join([str(c)] + [_fmt(v) for v in table.s[c]]) + "\n")


def load_embeddings(path, n_classes: int, d_s: int) -> SemanticTable:
    """Parse one embedding row per class; rows are re-normalized."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError("empty embedding file")
    header = lines[0].split(",")
    if header != ["label"] + [f"s_{i}" for i in range(d_s)]:
        raise DataFormatError("embedding header must be label,s_0..s_{d_s-1}", line=1)
    rows = np.full((n_classes, d_s), np.nan)
    seen: set[int] = set()
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 1 + d_s:
            raise DataFormatError(f"expected {1 + d_s} fields, got {len(parts)}", line=ln)
        try:
            label = int(parts[0])
            vec = np.array([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise DataFormatError(str(exc), line=ln) from exc
        if label in seen:
            raise DataFormatError(f"duplicate class {label}", line=ln)
        if not 0 <= label < n_classes:
            raise DataFormatError(f"class {label} out of range", line=ln)
        seen.add(label)
        rows[label] = unit_normalize(vec)
    missing = sorted(set(range(n_classes)) - seen)
    if missing:
        raise DataFormatError(f"missing class {missing[0]}")
    return SemanticTable(rows)
