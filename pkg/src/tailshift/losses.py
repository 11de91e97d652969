"""Loss kernels for long-tailed multi-domain training.

Five kernels plus one closed-form bound:

- ``dc_loss``   count-calibrated softmax cross-entropy; classes absent from
  the sample's own domain are excluded from the normalizer and receive a
  gradient of exactly zero.
- ``z2s_loss``  margin contrastive alignment of a unit feature embedding to
  its class row in a semantic table.
- ``s2s_loss``  cross-table prototype contrast: positives are same-class rows
  across two tables, negatives are other classes in both tables.
- ``s2z_loss``  cycle-style constraint on reconstructed prototypes: classify
  each decoded prototype as its own class, and re-align its re-encoding to
  the semantic table.
- ``aug_loss``  implicit-augmentation surrogate: per-class quadratic
  penalties from a blended covariance inflate the softmax normalizer.
- ``aug_bound`` the moment-generating-function upper bound on the expected
  cross-entropy under a Gaussian feature perturbation; a Monte-Carlo
  estimate of that expectation must stay below it.

Every kernel is built from ``mathcore`` primitives, so it can be called with
plain arrays (returns a float) or with graph tensors (returns a Tensor with
analytic gradients, cross-checked against ``mathcore.fd_grad``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import Tensor, as_tensor, check_psd, log_softmax, stack

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class ContrastiveParams:
    """Margin and temperature of the contrastive kernels."""

    alpha: float = 0.1
    tau: float = 1.0 / 30.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True)
class AugParams:
    """Implicit-augmentation intensity and top-k neighbour count."""

    lam: float = 5.0
    k: int = 5

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class DomainClassCounts:
    """Per-domain training sample counts, shape (n_domains, n_classes).

    A zero entry marks a class unseen in that domain; the positivity pattern
    of a row is exactly the domain's prototype presence mask.
    """

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise ValueError("counts must be 2-D (domains x classes)")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(c == np.floor(c)):
                raise ValueError("counts must be integers")
        c = c.astype(np.int64)
        if (c < 0).any():
            raise ValueError("counts must be nonnegative")
        if (c.sum(axis=1) <= 0).any():
            raise ValueError("every domain must hold at least one sample")
        object.__setattr__(self, "counts", c)

    @property
    def n_domains(self) -> int:
        return self.counts.shape[0]

    @property
    def n_classes(self) -> int:
        return self.counts.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.counts > 0


def _rows(table) -> np.ndarray:
    """Accept a SemanticTable-like object or a plain (C, d) array."""
    return np.asarray(getattr(table, "s", table), dtype=np.float64)


def _check_unit_rows(x: np.ndarray, what: str):
    norms = np.linalg.norm(np.atleast_2d(x), axis=-1)
    if np.abs(norms - 1.0).max(initial=0.0) > UNIT_TOL:
        raise ValueError(f"{what}: rows must be unit-normalized (max deviation "
                         f"{np.abs(norms - 1.0).max():.3g})")


def _maybe_float(out: Tensor, live: bool):
    return out if live else float(out.data)


def _logsumexp(x: Tensor) -> Tensor:
    shift = float(np.max(x.data))
    return (x - shift).exp().sum().log() + shift


# ---------------------------------------------------------------------------
# calibrated classification
# ---------------------------------------------------------------------------

def dc_loss(logits, label: int, domain: int, counts: DomainClassCounts):
    """-log( n_y e^{z_y} / sum_c n_c e^{z_c} ) over classes with n_c > 0.

    The counts row is the sample's own training domain. Classes with a zero
    count are excluded from the normalizer, so their logits receive exactly
    zero gradient.
    """
    live = isinstance(logits, Tensor)
    z = as_tensor(logits)
    row = counts.counts[domain].astype(np.float64)
    if row[label] <= 0:
        raise ValueError("dc_loss: label has zero count in its own domain")
    out = -log_softmax(z, row)[label]
    return _maybe_float(out, live)


def dc_loss_mean(logits, labels, domains, counts: DomainClassCounts | None):
    """Mean calibrated loss over a batch; ``counts=None`` gives plain CE.

    `logits` is (B, C); `labels` and `domains` are int arrays of length B.
    """
    live = isinstance(logits, Tensor)
    z = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b = z.data.shape[0]
    if counts is None:
        lsm = log_softmax(z)
    else:
        domains = np.asarray(domains, dtype=np.int64)
        w = counts.counts[domains].astype(np.float64)
        if (w[np.arange(b), labels] <= 0).any():
            raise ValueError("dc_loss_mean: a label has zero count in its domain")
        lsm = log_softmax(z, w)
    out = -lsm[np.arange(b), labels].mean()
    return _maybe_float(out, live)


def cross_entropy_mean(logits, labels):
    return dc_loss_mean(logits, labels, None, None)


# ---------------------------------------------------------------------------
# visual -> semantic alignment
# ---------------------------------------------------------------------------

def z2s_loss(embedding, label: int, table, cp: ContrastiveParams):
    """Margin contrastive loss of one unit embedding against a semantic table.

    The positive similarity <e, s_y> is shifted down by the margin alpha, all
    similarities are scaled by 1/tau, and the result is a softmax
    cross-entropy at the class index.
    """
    live = isinstance(embedding, Tensor)
    e = as_tensor(embedding)
    s = _rows(table)
    _check_unit_rows(e.data, "z2s_loss embedding")
    _check_unit_rows(s, "z2s_loss table")
    sims = s @ e  # (C,)
    margin = np.zeros(s.shape[0])
    margin[label] = cp.alpha
    out = -log_softmax((sims - margin) / cp.tau)[label]
    return _maybe_float(out, live)


def z2s_loss_mean(embeddings, labels, table, cp: ContrastiveParams):
    """Mean ``z2s_loss`` over a batch of unit embeddings, vectorized."""
    live = isinstance(embeddings, Tensor) or isinstance(table, Tensor)
    e = as_tensor(embeddings)
    t = table if isinstance(table, Tensor) else Tensor(_rows(table))
    labels = np.asarray(labels, dtype=np.int64)
    _check_unit_rows(e.data, "z2s_loss embeddings")
    _check_unit_rows(t.data, "z2s_loss table")
    b = e.data.shape[0]
    c = t.data.shape[0]
    sims = e @ t.T  # (B, C)
    margin = np.zeros((b, c))
    margin[np.arange(b), labels] = cp.alpha
    lsm = log_softmax((sims - margin) / cp.tau)
    out = -lsm[np.arange(b), labels].mean()
    return _maybe_float(out, live)


def s2s_loss(s_m, s_n, cp: ContrastiveParams):
    """Cross-table prototype contrast, averaged over classes.

    For each class c the positive pair is (s_m_c, s_n_c); the negatives are
    s_n_j and s_m_j for j != c, pushing other classes away both across and
    within tables.
    """
    live = isinstance(s_m, Tensor) or isinstance(s_n, Tensor)
    a = s_m if isinstance(s_m, Tensor) else Tensor(_rows(s_m))
    b = s_n if isinstance(s_n, Tensor) else Tensor(_rows(s_n))
    if a.data.shape != b.data.shape:
        raise ValueError("s2s_loss: table shapes differ")
    _check_unit_rows(a.data, "s2s_loss s_m")
    _check_unit_rows(b.data, "s2s_loss s_n")
    c = a.data.shape[0]

    cross = (a @ b.T) / cp.tau        # (C, C), row c: s_m_c vs s_n_j
    intra = (a @ a.T) / cp.tau        # (C, C), row c: s_m_c vs s_m_j
    pos = cross[np.arange(c), np.arange(c)] - cp.alpha / cp.tau
    offdiag = 1.0 - np.eye(c)

    # One detached global shift keeps every exponent in range; similarities
    # are bounded by 1 so the spread is at most ~2/tau.
    shift = float(max(pos.data.max(), cross.data.max(), intra.data.max()))
    epos = (pos - shift).exp()
    ecross = ((cross - shift).exp() * offdiag).sum(axis=1)
    eintra = ((intra - shift).exp() * offdiag).sum(axis=1)
    out = (-(pos - shift) + (epos + ecross + eintra).log()).mean()
    return _maybe_float(out, live)


def s2z_loss(v_hat, w, b, encode, table, cp: ContrastiveParams):
    """Cycle constraint on reconstructed prototypes.

    Each decoded prototype row i is classified by the linear head (w, b) with
    a plain cross-entropy against label i, and the re-encoded rows are pulled
    back onto the semantic table with ``s2s_loss``. `encode` maps a (C, d_v)
    matrix to unit (C, d_s) rows.
    """
    live = isinstance(v_hat, Tensor) or isinstance(w, Tensor)
    v = as_tensor(v_hat)
    if not np.isfinite(v.data).all():
        raise ValueError("s2z_loss: non-finite prototypes")
    c = v.data.shape[0]
    logits = v @ as_tensor(w).T + as_tensor(b)
    ce = -log_softmax(logits)[np.arange(c), np.arange(c)].mean()
    out = ce + as_tensor(s2s_loss(encode(v), table, cp))
    return _maybe_float(out, live)


# ---------------------------------------------------------------------------
# implicit augmentation
# ---------------------------------------------------------------------------

def _aug_logits(feature, label, w, b, sigma_prime, lam, variant):
    wt = as_tensor(w)
    bt = as_tensor(b)
    f = as_tensor(feature)
    sig = sigma_prime if isinstance(sigma_prime, Tensor) else Tensor(check_psd(sigma_prime))
    d = wt - wt[label]                      # (C, d_v); row `label` is exactly 0
    quad = ((d @ sig) * d).sum(axis=1)      # (C,)
    base = wt @ f + bt
    if variant == "derivation":
        return base + (lam / 2.0) * quad
    if variant == "as_printed":
        # Main-text form: every denominator term carries w_y.f and no bias.
        anchor = wt[label] @ f
        zeros = Tensor(np.zeros(wt.data.shape[0]))
        return zeros + anchor + (lam / 2.0) * quad
    raise ValueError(f"unknown aug denominator variant {variant!r}")


def aug_loss(feature, label: int, w, b, sigma_prime, ap: AugParams,
             variant: str = "derivation"):
    """Cross-entropy with per-class augmentation penalties in the normalizer.

    Penalty for class c is (lam/2)(w_c - w_y)' Sigma'_y (w_c - w_y); it is
    identically zero for the true class, so lam = 0 or Sigma' = 0 recovers
    the plain cross-entropy on logits W f + b.
    """
    live = isinstance(feature, Tensor) or isinstance(w, Tensor)
    logits = _aug_logits(feature, label, w, b, sigma_prime, ap.lam, variant)
    if variant == "as_printed":
        wt, bt, f = as_tensor(w), as_tensor(b), as_tensor(feature)
        numer = wt[label] @ f
        out = -(numer - _logsumexp(logits))
    else:
        out = -log_softmax(logits)[label]
    return _maybe_float(out, live)


def aug_loss_mean(features, labels, w, b, sigma_primes, ap: AugParams,
                  variant: str = "derivation"):
    """Mean ``aug_loss`` over a batch; `sigma_primes` stacks one blended
    covariance per class, and penalties are shared across samples of a class."""
    live = isinstance(features, Tensor) or isinstance(w, Tensor)
    f = as_tensor(features)
    wt = as_tensor(w)
    bt = as_tensor(b)
    labels = np.asarray(labels, dtype=np.int64)
    nb = f.data.shape[0]
    if variant != "derivation":
        total = as_tensor(0.0)
        for i in range(nb):
            total = total + as_tensor(
                aug_loss(f[i], int(labels[i]), wt, bt, sigma_primes[int(labels[i])],
                         ap, variant))
        return _maybe_float(total / float(nb), live)

    quad_by_class: dict[int, Tensor] = {}
    for y in np.unique(labels):
        sig = check_psd(np.asarray(sigma_primes[int(y)], dtype=np.float64))
        d = wt - wt[int(y)]
        quad_by_class[int(y)] = ((d @ Tensor(sig)) * d).sum(axis=1)
    pen = stack([quad_by_class[int(y)] for y in labels], axis=0)  # (B, C)
    logits = f @ wt.T + bt + (ap.lam / 2.0) * pen
    out = -log_softmax(logits)[np.arange(nb), labels].mean()
    return _maybe_float(out, live)


def aug_bound(mu_y, sigma_y, w, b, label: int, lam: float):
    """Closed-form upper bound on E[cross-entropy] for f ~ N(mu_y, lam Sigma_y):

        log sum_c exp( (w_c-w_y)'mu_y + (b_c-b_y) + (lam/2)(w_c-w_y)'Sigma_y(w_c-w_y) )
    """
    live = any(isinstance(x, Tensor) for x in (mu_y, sigma_y, w, b))
    wt = as_tensor(w)
    bt = as_tensor(b)
    mu = as_tensor(mu_y)
    sig = sigma_y if isinstance(sigma_y, Tensor) else Tensor(check_psd(sigma_y))
    d = wt - wt[label]
    quad = ((d @ sig) * d).sum(axis=1)
    exponents = d @ mu + (bt - bt[label]) + (lam / 2.0) * quad
    out = _logsumexp(exponents)
    return _maybe_float(out, live)
