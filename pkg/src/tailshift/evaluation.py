"""Leave-one-domain-out evaluation with confidence-thresholded open-class
detection, plus distribution diagnostics.

Metrics:

- ``acc_u``  accuracy on non-open classes in the held-out domain's test data.
- ``acc``    mean over all domains of per-domain accuracy on non-open classes
  (a pooled variant is reported alongside).
- ``h``      harmonic mean of pooled non-open accuracy and open-class
  detection accuracy; when the dataset has no open classes the open side is
  undefined and ``h`` falls back to ``acc`` with a flag.

Open classes are those absent from every training domain. A prediction is
OPEN when the maximum softmax probability (optionally the maximum logit,
rescaled) falls below the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .mathcore import psd_sqrt
from .model import ModelConfig, Params, embed, predict_logits

OPEN = -1  # predicted-class sentinel for "open class"


@dataclass(frozen=True)
class OpenDecision:
    predicted: int        # class index, or OPEN
    confidence: float

    @property
    def is_open(self) -> bool:
        return self.predicted == OPEN


@dataclass
class MetricReport:
    acc_u: float
    acc: float
    h: float
    threshold: float
    pooled_acc: float
    open_acc: float | None = None                    # None when no open classes exist
    per_domain: dict = field(default_factory=dict)   # domain -> accuracy (non-open classes)
    per_class: dict = field(default_factory=dict)    # class -> accuracy (all domains pooled)
    h_fallback: bool = False                         # no open classes in the data

    def to_dict(self) -> dict:
        return {
            "acc_u": self.acc_u, "acc": self.acc, "h": self.h,
            "threshold": self.threshold, "pooled_acc": self.pooled_acc,
            "open_acc": self.open_acc,
            "per_domain": {str(k): v for k, v in self.per_domain.items()},
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "h_fallback": self.h_fallback,
        }


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_open(logits: np.ndarray, threshold: float,
                 confidence: str = "softmax") -> OpenDecision:
    """Classify one logit vector, or reject it as an open class.

    Confidence is the max softmax probability by default ("logit" uses the
    max raw logit squashed through a sigmoid instead). OPEN iff confidence
    falls strictly below the threshold; argmax ties go to the lowest index.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if confidence == "softmax":
        conf = float(softmax(logits).max())
    elif confidence == "logit":
        conf = float(1.0 / (1.0 + np.exp(-logits.max())))
    else:
        raise ValueError(f"unknown confidence rule {confidence!r}")
    if conf < threshold:
        return OpenDecision(OPEN, conf)
    return OpenDecision(int(np.argmax(logits)), conf)


def _decide(logits: np.ndarray, threshold: float, confidence: str) -> np.ndarray:
    """Vectorized predict_open over rows; returns int predictions."""
    if confidence == "softmax":
        conf = softmax(logits).max(axis=-1)
    elif confidence == "logit":
        conf = 1.0 / (1.0 + np.exp(-logits.max(axis=-1)))
    else:
        raise ValueError(f"unknown confidence rule {confidence!r}")
    pred = logits.argmax(axis=-1)
    return np.where(conf < threshold, OPEN, pred)


def harmonic(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2.0 * a * b / (a + b)


def metrics_from_predictions(y: np.ndarray, d: np.ndarray, pred: np.ndarray,
                             open_classes: np.ndarray, heldout_domain: int,
                             threshold: float) -> MetricReport:
    """Assemble the report from per-sample decisions (OPEN = -1)."""
    y = np.asarray(y)
    d = np.asarray(d)
    pred = np.asarray(pred)
    is_open_class = open_classes[y]
    known = ~is_open_class
    correct_known = (pred == y) & known
    correct_open = (pred == OPEN) & is_open_class

    held = d == heldout_domain
    acc_u = float(correct_known[held & known].mean()) if (held & known).any() else 0.0

    per_domain = {}
    for dom in np.unique(d):
        sel = (d == dom) & known
        per_domain[int(dom)] = float(correct_known[sel].mean()) if sel.any() else 0.0
    acc = float(np.mean(list(per_domain.values()))) if per_domain else 0.0
    pooled = float(correct_known[known].mean()) if known.any() else 0.0

    per_class = {}
    for cls in np.unique(y):
        sel = y == cls
        ok = correct_open[sel] if open_classes[cls] else correct_known[sel]
        per_class[int(cls)] = float(ok.mean())

    if is_open_class.any():
        b = float(correct_open[is_open_class].mean())
        h = harmonic(pooled, b)
        open_acc = 100.0 * b
        fallback = False
    else:
        h = acc
        open_acc = None
        fallback = True

    return MetricReport(acc_u=100.0 * acc_u, acc=100.0 * acc, h=100.0 * h,
                        threshold=threshold, pooled_acc=100.0 * pooled,
                        open_acc=open_acc,
                        per_domain={k: 100.0 * v for k, v in per_domain.items()},
                        per_class={k: 100.0 * v for k, v in per_class.items()},
                        h_fallback=fallback)


def evaluate(params: Params, mcfg: ModelConfig, dataset: Dataset,
             heldout_domain: int, threshold: float, split: str = "test",
             confidence: str = "softmax") -> MetricReport:
    """Run the model over a split and score it under the open-class protocol."""
    idx = dataset.indices(split)
    if idx.size == 0:
        raise ValueError(f"no {split} data to evaluate")
    if heldout_domain not in set(int(v) for v in np.unique(dataset.d[idx])):
        raise ValueError(f"held-out domain {heldout_domain} absent from {split} split")
    logits = predict_logits(params, dataset.x[idx], mcfg)
    pred = _decide(logits, threshold, confidence)
    open_classes = dataset.counts.counts.sum(axis=0) == 0
    return metrics_from_predictions(dataset.y[idx], dataset.d[idx], pred,
                                    open_classes, heldout_domain, threshold)


def select_threshold(params: Params, mcfg: ModelConfig, dataset: Dataset,
                     grid, heldout_domain: int | None = None,
                     split: str = "val", confidence: str = "softmax") -> float:
    """Grid point maximizing H on the given split; ties -> smallest value."""
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("threshold grid is empty")
    if len(grid) == 1:
        return grid[0]
    if heldout_domain is None:
        doms = dataset.heldout_domains
        heldout_domain = doms[0] if doms else int(dataset.domains[0])
    idx = dataset.indices(split)
    logits = predict_logits(params, dataset.x[idx], mcfg)
    open_classes = dataset.counts.counts.sum(axis=0) == 0
    scores = []
    for th in grid:
        pred = _decide(logits, th, confidence)
        rep = metrics_from_predictions(dataset.y[idx], dataset.d[idx], pred,
                                       open_classes, heldout_domain, th)
        scores.append(rep.h)
    return grid[int(np.argmax(scores))]


# ---------------------------------------------------------------------------
# distribution diagnostics
# ---------------------------------------------------------------------------

def frechet_distance(mu1, sigma1, mu2, sigma2) -> float:
    """Fréchet distance between Gaussians:
    ||mu1-mu2||^2 + Tr(S1 + S2 - 2 sqrt(sqrt(S1) S2 sqrt(S1)))."""
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    r1 = psd_sqrt(np.asarray(sigma1, dtype=np.float64))
    cross = psd_sqrt(r1 @ np.asarray(sigma2, dtype=np.float64) @ r1)
    diff = mu1 - mu2
    val = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def covariance_distance_matrix(bank) -> np.ndarray:
    """d(i, j) = exp(-||Sigma_i - Sigma_j||_F) over the bank's classes."""
    sig = np.asarray(bank.sigma, dtype=np.float64)
    c = sig.shape[0]
    out = np.ones((c, c))
    for i in range(c):
        for j in range(i + 1, c):
            dist = np.exp(-np.linalg.norm(sig[i] - sig[j]))
            out[i, j] = out[j, i] = dist
    return out


@dataclass(frozen=True)
class RetrievalResult:
    indices: np.ndarray     # gallery indices, best first
    similarities: np.ndarray
    truncated: bool         # k exceeded the available gallery


def topk_retrieval(params: Params, mcfg: ModelConfig, query_x: np.ndarray,
                   gallery_x: np.ndarray, k: int,
                   exclude: int | None = None) -> RetrievalResult:
    """Nearest gallery samples by semantic-embedding inner product.

    Ordering is by descending similarity with ties broken by the lower
    gallery index; `exclude` drops the query's own row when the query is a
    member of the gallery.
    """
    q = embed(params, np.asarray(query_x, dtype=np.float64)[None, :], mcfg)[0]
    g = embed(params, gallery_x, mcfg)
    sims = g @ q
    order = np.argsort(-sims, kind="stable")
    if exclude is not None:
        order = order[order != exclude]
    truncated = k > order.size
    top = order[:k]
    return RetrievalResult(indices=top, similarities=sims[top], truncated=truncated)


def dump_features(params: Params, mcfg: ModelConfig, dataset: Dataset, path,
                  split: str | None = None) -> int:
    """Write ``domain,label,z_0,...`` rows of extracted features; returns the
    row count. Floats are formatted losslessly (repr round-trip)."""
    idx = (np.arange(len(dataset.y)) if split is None else dataset.indices(split))
    header = "domain,label," + ",".join(f"z_{i}" for i in range(_feature_dim(mcfg)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        if idx.size:
            z = predict_features(params, dataset.x[idx], mcfg)
            for row_i, i in enumerate(idx):
                cells = [str(int(dataset.d[i])), str(int(dataset.y[i]))]
                cells.extend(repr(float(v)) for v in z[row_i])
                fh.write(",".join(cells) + "\n")
    return int(idx.size)


def _feature_dim(mcfg: ModelConfig) -> int:
    return mcfg.d_v


def predict_features(params: Params, x: np.ndarray, mcfg: ModelConfig) -> np.ndarray:
    from .model import forward_features
    return forward_features(params, np.asarray(x, dtype=np.float64), mcfg).data
