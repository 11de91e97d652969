"""Analytic-vs-finite-difference gradient verification for every loss kernel.

Each check draws random float64 inputs, routes constrained quantities
(unit embeddings, PSD covariances) through unconstrained raw parameters, and
compares the reverse-mode gradient with central differences coordinate by
coordinate. The largest relative error over all parameter blocks and points
must stay under the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses as L
from .mathcore import Rng, fd_grad, grad, normalize_rows


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _max_rel_err(fn, params, eps: float) -> float:
    analytic = grad(fn, params)
    oracle = fd_grad(fn, params, eps)
    worst = 0.0
    for key in params:
        rel = np.abs(analytic.grads[key] - oracle.grads[key]) \
            / (np.abs(oracle.grads[key]) + 1e-8)
        worst = max(worst, float(rel.max()))
    return worst


def _case_dc(rng: Rng, n_classes: int):
    counts = L.DomainClassCounts(
        rng.integers(0, 6, size=(2, n_classes)) + np.eye(2, n_classes, dtype=np.int64))
    labels = [0, 1]
    domains = [0, 1]

    def fn(t):
        return L.dc_loss_mean(t["z"], labels, domains, counts)

    return fn, {"z": rng.normal(size=(2, n_classes))}


def _case_z2s(rng: Rng, n_classes: int, d_s: int, cp):
    labels = rng.integers(0, n_classes, size=3)

    def fn(t):
        return L.z2s_loss_mean(normalize_rows(t["e"]), labels,
                               normalize_rows(t["tab"]), cp)

    return fn, {"e": rng.normal(size=(3, d_s)), "tab": rng.normal(size=(n_classes, d_s))}


def _case_s2s(rng: Rng, n_classes: int, d_s: int, cp):
    def fn(t):
        return L.s2s_loss(normalize_rows(t["a"]), normalize_rows(t["b"]), cp)

    return fn, {"a": rng.normal(size=(n_classes, d_s)),
                "b": rng.normal(size=(n_classes, d_s))}


def _case_s2z(rng: Rng, n_classes: int, d_v: int, d_s: int, cp):
    table = np.stack([v / np.linalg.norm(v) for v in rng.normal(size=(n_classes, d_s))])

    def fn(t):
        enc = lambda v: normalize_rows((v @ t["We"].T + t["be"]).relu() + 1e-3)
        return L.s2z_loss(t["vhat"], t["W"], t["b"], enc, table, cp)

    return fn, {"vhat": rng.normal(size=(n_classes, d_v)),
                "W": 0.5 * rng.normal(size=(n_classes, d_v)),
                "b": rng.normal(size=n_classes),
                "We": rng.normal(size=(d_s, d_v)),
                "be": rng.normal(size=d_s)}


def _case_aug(rng: Rng, n_classes: int, d_v: int, ap):
    labels = rng.integers(0, n_classes, size=3)
    factors = 0.3 * rng.normal(size=(n_classes, d_v, d_v))
    sigmas = np.stack([f.T @ f for f in factors])

    def fn(t):
        return L.aug_loss_mean(t["F"], labels, t["W"], t["b"], sigmas, ap)

    return fn, {"F": rng.normal(size=(3, d_v)),
                "W": 0.3 * rng.normal(size=(n_classes, d_v)),
                "b": rng.normal(size=n_classes)}


def _case_aug_bound(rng: Rng, n_classes: int, d_v: int, lam: float):
    label = int(rng.integers(0, n_classes))

    def fn(t):
        sigma = t["Ls"].T @ t["Ls"]
        return L.aug_bound(t["mu"], sigma, t["W"], t["b"], label, lam)

    return fn, {"mu": rng.normal(size=d_v),
                "Ls": 0.3 * rng.normal(size=(d_v, d_v)),
                "W": 0.3 * rng.normal(size=(n_classes, d_v)),
                "b": rng.normal(size=n_classes)}


def gradient_check_suite(n_points: int = 20, eps: float = 1e-5, tol: float = 1e-4,
                         seed: int = 0, n_classes: int = 5, d_v: int = 6,
                         d_s: int = 4) -> list[CheckResult]:
    """Run every kernel's check at `n_points` random points; one result each."""
    rng = Rng(seed)
    # Moderate temperature keeps every gradient coordinate well above the
    # roundoff floor of the central-difference oracle (~loss * 1e-16 / eps);
    # at the saturated training temperature (1/30) far-class gradients fall
    # to ~1e-9 and the oracle itself becomes the noise source.
    cp = L.ContrastiveParams(alpha=0.1, tau=0.5)
    ap = L.AugParams(lam=2.0, k=3)
    cases = {
        "dc_loss": lambda r: _case_dc(r, n_classes),
        "z2s_loss": lambda r: _case_z2s(r, n_classes, d_s, cp),
        "s2s_loss": lambda r: _case_s2s(r, n_classes, d_s, cp),
        "s2z_loss": lambda r: _case_s2z(r, n_classes, d_v, d_s, cp),
        "aug_loss": lambda r: _case_aug(r, n_classes, d_v, ap),
        "aug_bound": lambda r: _case_aug_bound(r, n_classes, d_v, ap.lam),
    }
    results = []
    for name, case in cases.items():
        worst = 0.0
        for point_rng in rng.split(n_points):
            fn, params = case(point_rng)
            worst = max(worst, _max_rel_err(fn, params, eps))
        results.append(CheckResult(name=name, max_rel_err=worst, tol=tol))
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'loss':<12} {'max rel err':>12}   status"]
    for r in results:
        lines.append(f"{r.name:<12} {r.max_rel_err:>12.3e}   "
                     f"{'pass' if r.passed else 'FAIL'} (tol {r.tol:g})")
    return "\n".join(lines)
