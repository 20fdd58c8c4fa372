"""Objective functions for differencing-based self-supervised pretraining.

The pretraining signal has three parts: a redundancy-reduction loss on the
cross-correlation matrix of the two absolute-difference embeddings, a
Jensen-Shannon consistency term between the two augmented views of each
timestamp, and a Frobenius penalty between cross-temporal Gram matrices of
the two augmentation branches. All functions build differentiation graphs,
so they can sit directly in a training step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as tk
from .tensor import Tensor

DEGENERATE_NORM_TOL = 1e-12


class DegenerateColumnWarning(UserWarning):
    """A difference dimension was zero across the whole batch; its
    cross-correlation entries were set to 0."""


@dataclass
class ProjectionSet:
    """Projector outputs for the four augmented streams, each (b, d)."""

    z0p: Tensor
    z0pp: Tensor
    z1p: Tensor
    z1pp: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in (self.z0p, self.z0pp, self.z1p, self.z1pp)}
        if len(shapes) != 1:
            raise tk.ShapeError(f"projection streams differ in shape: {shapes}")
        b, d = self.z0p.shape
        if b < 2 or d < 2:
            raise ValueError(f"projections need batch >= 2 and dim >= 2, got ({b}, {d})")


@dataclass
class LossWeights:
    lam: float = 0.005   # redundancy trade-off
    alpha: float = 100.0
    beta: float = 3000.0

    def __post_init__(self):
        if min(self.lam, self.alpha, self.beta) < 0:
            raise ValueError("loss weights must be nonnegative")


def feature_difference(za: Tensor, zb: Tensor) -> Tensor:
    """Elementwise absolute difference |za - zb|; symmetric in its arguments."""
    if za.shape != zb.shape:
        raise tk.ShapeError(f"feature_difference: shapes {za.shape} vs {zb.shape}")
    return tk.abs_(tk.sub(za, zb))


def cross_correlation(d1: Tensor, d2: Tensor, center_columns: bool = False) -> Tensor:
    """Batch cross-correlation matrix C[i,j] = sum_b d1[b,i] d2[b,j] / (|d1[:,i]| |d2[:,j]|).

    ``center_columns`` subtracts per-column batch means first (the variant
    used by the usual redundancy-reduction objective); off by default.
    Columns whose norm falls below 1e-12 have their entries zeroed and a
    DegenerateColumnWarning is issued, since the quotient is undefined there.
    """
    if d1.shape != d2.shape:
        raise tk.ShapeError(f"cross_correlation: shapes {d1.shape} vs {d2.shape}")
    if d1.ndim != 2 or d1.shape[0] < 2:
        raise ValueError(f"cross_correlation: need (b>=2, d) inputs, got {d1.shape}")
    if center_columns:
        d1 = tk.sub(d1, tk.reduce_mean(d1, axes=(0,), keepdims=True))
        d2 = tk.sub(d2, tk.reduce_mean(d2, axes=(0,), keepdims=True))

    def column_norms(d: Tensor) -> tuple[Tensor, np.ndarray]:
        sq = tk.reduce_sum(tk.square(d), axes=(0,))
        keep = (sq.data > DEGENERATE_NORM_TOL**2).astype(d.dtype)
        # swap degenerate columns' squared norms for 1 before the sqrt so no
        # infinite derivative leaks in; their entries are masked out below
        safe = tk.add(tk.mul(sq, Tensor(keep)), Tensor(1.0 - keep))
        return tk.sqrt(safe), keep

    n1, keep1 = column_norms(d1)
    n2, keep2 = column_norms(d2)
    if not keep1.all() or not keep2.all():
        bad = sorted(set(np.flatnonzero(keep1 == 0)) | set(np.flatnonzero(keep2 == 0)))
        warnings.warn(
            f"zero-norm difference dimensions {bad}; correlations zeroed",
            DegenerateColumnWarning,
            stacklevel=2,
        )
    raw = tk.matmul(tk.transpose(d1), d2)
    denom = tk.mul(tk.reshape(n1, (-1, 1)), tk.reshape(n2, (1, -1)))
    mask = Tensor(np.outer(keep1, keep2).astype(d1.dtype.type))
    return tk.mul(tk.div(raw, denom), mask)


def barlow_loss(c: Tensor, lam: float) -> Tensor:
    """sum_i (1 - C_ii^2) + lam * sum_{i != j} C_ij^2."""
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise tk.ShapeError(f"barlow_loss: expected a square matrix, got {c.shape}")
    d = c.shape[0]
    eye = Tensor(np.eye(d, dtype=c.dtype.type))
    sq = tk.square(c)
    diag_sq = tk.reduce_sum(tk.mul(sq, eye))
    off_sq = tk.sub(tk.reduce_sum(sq), diag_sq)
    invariance = tk.sub(Tensor(np.asarray(float(d), dtype=c.dtype.type)), diag_sq)
    return tk.add(invariance, tk.mul(off_sq, float(lam)))


def kl_divergence(p: Tensor, q: Tensor) -> Tensor:
    """sum_i p_i ln(p_i / q_i) per row, averaged over the batch.

    Rows must sum to 1 within 1e-5. Uses the 0 * ln(0/q) = 0 convention and
    floors both arguments of the log at 1e-12.
    """
    if p.shape != q.shape:
        raise tk.ShapeError(f"kl_divergence: shapes {p.shape} vs {q.shape}")
    pv, qv = (t.reshape(1, -1) if t.ndim == 1 else t for t in (p, q))
    for name, t in (("p", pv), ("q", qv)):
        if np.any(t.data < 0):
            raise tk.DomainError(f"kl_divergence: {name} has negative entries")
        sums = t.data.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-5):
            raise tk.DomainError(
                f"kl_divergence: {name} rows must sum to 1, worst deviation "
                f"{np.abs(sums - 1.0).max():.3g}"
            )
    floor = 1e-12
    log_ratio = tk.sub(tk.log(tk.clamp(pv, lo=floor)), tk.log(tk.clamp(qv, lo=floor)))
    per_row = tk.reduce_sum(tk.mul(pv, log_ratio), axes=(1,))
    return tk.reduce_mean(per_row)


def js_divergence(p: Tensor, q: Tensor) -> Tensor:
    """Jensen-Shannon divergence: half the sum of each side's KL to the mean."""
    m = tk.mul(tk.add(p, q), 0.5)
    return tk.mul(tk.add(kl_divergence(p, m), kl_divergence(q, m)), 0.5)


def invariant_prediction_loss(proj: ProjectionSet) -> Tensor:
    """Jensen-Shannon consistency between the two views of each timestamp.

    Each embedding is turned into a distribution with a softmax over the
    embedding dimension (temperature 1); the loss is the sum of the two
    per-timestamp JS divergences, so it is bounded by 2 ln 2.
    """
    p0, p0b = tk.softmax(proj.z0p, axis=1), tk.softmax(proj.z0pp, axis=1)
    p1, p1b = tk.softmax(proj.z1p, axis=1), tk.softmax(proj.z1pp, axis=1)
    return tk.add(js_divergence(p0, p0b), js_divergence(p1, p1b))


def gram_similarity(fa: Tensor, fb: Tensor, normalize_rows: bool = False) -> Tensor:
    """Pairwise sample similarities G[i,j] = <flatten(fa_i), flatten(fb_j)>.

    Inputs are (b, ...) feature maps with identical shapes. Rows are not
    normalized unless ``normalize_rows`` is set.
    """
    if fa.shape != fb.shape:
        raise tk.ShapeError(f"gram_similarity: shapes {fa.shape} vs {fb.shape}")
    b = fa.shape[0]
    fa2 = tk.reshape(fa, (b, -1))
    fb2 = tk.reshape(fb, (b, -1))
    if normalize_rows:
        def norm_rows(f: Tensor) -> Tensor:
            n = tk.sqrt(tk.reduce_sum(tk.square(f), axes=(1,), keepdims=True))
            return tk.div(f, tk.clamp(n, lo=1e-12))
        fa2, fb2 = norm_rows(fa2), norm_rows(fb2)
    return tk.matmul(fa2, tk.transpose(fb2))


def change_consistency_loss(gp: Tensor, gpp: Tensor) -> Tensor:
    """Squared Frobenius distance between the two Gram matrices over b^2."""
    if gp.shape != gpp.shape:
        raise tk.ShapeError(f"change_consistency_loss: shapes {gp.shape} vs {gpp.shape}")
    b = gp.shape[0]
    return tk.div(
        tk.reduce_sum(tk.square(tk.sub(gp, gpp))),
        Tensor(np.asarray(float(b * b), dtype=gp.dtype.type)),
    )


def total_loss(ssl: Tensor, ip: Tensor, cr: Tensor, weights: LossWeights) -> Tensor:
    """ssl + alpha * ip + beta * cr, rejecting non-finite components by name."""
    for name, t in (("ssl", ssl), ("ip", ip), ("cr", cr)):
        if not np.isfinite(t.data).all():
            raise ValueError(f"total_loss: component {name!r} is non-finite")
    return tk.add(ssl, tk.add(tk.mul(ip, float(weights.alpha)), tk.mul(cr, float(weights.beta))))
