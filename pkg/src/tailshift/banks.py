"""Stateful per-domain prototype and per-class covariance tracking.

Prototypes are EMA-tracked mean features per (domain, class); classes a
domain never sees stay identically zero behind a presence mask, and the
masked table is completed with semantic rows before alignment. Class
covariances are streamed exactly (population statistics, merged batch by
batch) and blended across semantically similar classes so tail classes can
borrow second-order structure from related heads.

Update operations return new bank objects; callers own the state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import Tensor, as_tensor

UNIT_TOL = 1e-10


@dataclass(frozen=True)
class SemanticTable:
    """Unit-normalized per-class semantic embeddings, shape (C, d_s)."""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 2:
            raise ValueError("semantic table must be (C >= 2, d_s)")
        if not np.isfinite(s).all():
            raise ValueError("semantic table has non-finite entries")
        norms = np.linalg.norm(s, axis=1)
        if np.abs(norms - 1.0).max() > UNIT_TOL:
            raise ValueError("semantic table rows must be unit-normalized")
        object.__setattr__(self, "s", s)

    @property
    def n_classes(self) -> int:
        return self.s.shape[0]

    @property
    def dim(self) -> int:
        return self.s.shape[1]


@dataclass
class PrototypeBank:
    """EMA visual prototypes v[domain, class] with presence masks."""

    v: np.ndarray          # (K, C, d_v)
    mask: np.ndarray       # (K, C) bool
    ema: float = 0.5       # weight on the incoming batch mean

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.v.ndim != 3 or self.mask.shape != self.v.shape[:2]:
            raise ValueError("prototype bank shapes are inconsistent")
        if not (0.0 < self.ema <= 1.0):
            raise ValueError("ema must lie in (0, 1]")

    @classmethod
    def zeros(cls, mask: np.ndarray, d_v: int, ema: float = 0.5) -> "PrototypeBank":
        mask = np.asarray(mask, dtype=bool)
        return cls(v=np.zeros((*mask.shape, d_v)), mask=mask, ema=ema)

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(v=self.v.copy(), mask=self.mask.copy(), ema=self.ema)


def update_prototypes(bank: PrototypeBank, domain: int, features, labels) -> PrototypeBank:
    """EMA step toward the per-class batch means of `features`.

    v_c <- ema * mean(features of class c) + (1 - ema) * v_c for every class
    present in the batch; other rows are untouched. A label whose presence
    mask is false in this domain is an error (the sample could not exist).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    out = bank.copy()
    for c in np.unique(labels):
        if not bank.mask[domain, c]:
            raise ValueError(f"update_prototypes: class {c} unseen in domain {domain}")
        batch_mean = features[labels == c].mean(axis=0)
        out.v[domain, c] = bank.ema * batch_mean + (1.0 - bank.ema) * bank.v[domain, c]
    return out


def complete_semantic(bank: PrototypeBank, encode, table: SemanticTable, domain: int):
    """Domain table in semantic space with missing classes filled in.

    Row c is the encoded prototype when the domain has seen class c, else the
    semantic row s_c. A masked row still at its all-zero initialization holds
    no estimate yet and is treated as missing too. `encode` maps a (C, d_v)
    matrix to unit (C, d_s) rows and may build a gradient graph; filled rows
    contribute no gradient.
    """
    enc = as_tensor(encode(Tensor(bank.v[domain])))
    live = bank.mask[domain] & (np.abs(bank.v[domain]).max(axis=1) > 0)
    m = live.astype(np.float64)[:, None]
    out = enc * m + table.s * (1.0 - m)
    return out


def decode_prototypes(s_hat, decode):
    """Row-wise application of the semantic -> visual decoder."""
    return decode(as_tensor(s_hat))


@dataclass
class CovarianceBank:
    """Streaming per-class mean/covariance over features from all domains.

    Covariances are population (divide-by-n) statistics, so any sequence of
    batch updates reproduces the one-shot statistics of the union exactly.
    Classes with n <= 1 have a zero covariance.
    """

    mu: np.ndarray      # (C, d_v)
    sigma: np.ndarray   # (C, d_v, d_v)
    n: np.ndarray       # (C,) int64

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.n = np.asarray(self.n, dtype=np.int64)

    @classmethod
    def zeros(cls, n_classes: int, d_v: int) -> "CovarianceBank":
        return cls(mu=np.zeros((n_classes, d_v)),
                   sigma=np.zeros((n_classes, d_v, d_v)),
                   n=np.zeros(n_classes, dtype=np.int64))

    def copy(self) -> "CovarianceBank":
        return CovarianceBank(mu=self.mu.copy(), sigma=self.sigma.copy(), n=self.n.copy())


def update_covariance(bank: CovarianceBank, features, labels) -> CovarianceBank:
    """Merge a batch into the running per-class statistics.

    With n existing and m incoming samples of a class:
        mu'    = (n mu + m mu_b) / (n + m)
        Sigma' = (n Sigma + m Sigma_b)/(n + m) + n m (mu - mu_b)(mu - mu_b)'/(n + m)^2
    where Sigma_b is the population covariance of the batch.
    """
    features = np.asarray(features, dtype=np.float64)
    if not np.isfinite(features).all():
        raise ValueError("update_covariance: non-finite features")
    labels = np.asarray(labels, dtype=np.int64)
    out = bank.copy()
    for c in np.unique(labels):
        x = features[labels == c]
        m = x.shape[0]
        mu_b = x.mean(axis=0)
        centered = x - mu_b
        sig_b = centered.T @ centered / m
        n = int(bank.n[c])
        if n == 0:
            out.mu[c] = mu_b
            out.sigma[c] = sig_b
        else:
            tot = n + m
            delta = out.mu[c] - mu_b
            out.mu[c] = (n * out.mu[c] + m * mu_b) / tot
            sig = (n * out.sigma[c] + m * sig_b) / tot \
                + (n * m) / (tot * tot) * np.outer(delta, delta)
            out.sigma[c] = 0.5 * (sig + sig.T)
        out.n[c] = n + m
    return out


def topk_similar(table: SemanticTable, c: int, k: int) -> np.ndarray:
    """Indices of the k classes most similar to c (c itself always first;
    remaining slots by descending similarity, ties to the lower index)."""
    sims = table.s @ table.s[c]
    order = np.argsort(-sims, kind="stable")
    picked = [c] + [int(j) for j in order if j != c][: k - 1]
    return np.asarray(picked, dtype=np.int64)


def blend_covariance(bank: CovarianceBank, table: SemanticTable, k: int,
                     weighted: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Count-weighted mix of the covariances of each class's top-k semantic
    neighbours. Returns (sigma_prime stack, empty-flag per class); a class
    whose selected neighbours are all unseen gets a zero matrix and a flag.
    """
    c_total = table.n_classes
    if not (1 <= k <= c_total):
        raise ValueError("blend_covariance: k must lie in [1, C]")
    if bank.sigma.shape[0] != c_total:
        raise ValueError("blend_covariance: bank/table class count mismatch")
    sigma_prime = np.zeros_like(bank.sigma)
    empty = np.zeros(c_total, dtype=bool)
    for c in range(c_total):
        sel = topk_similar(table, c, k)
        if weighted:
            n_sel = bank.n[sel].astype(np.float64)
            total = n_sel.sum()
            if total <= 0:
                empty[c] = True
                continue
            sigma_prime[c] = np.einsum("i,ijk->jk", n_sel, bank.sigma[sel]) / total
        else:
            if bank.n[sel].sum() <= 0:
                empty[c] = True
                continue
            sigma_prime[c] = bank.sigma[sel].mean(axis=0)
    return sigma_prime, empty
