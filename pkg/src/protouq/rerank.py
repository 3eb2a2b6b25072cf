"""Uncertainty-weighted re-ranking of a cross-modal similarity matrix.

High-uncertainty instances tend to sit close to many things at once and
hub the top of ranked lists.  Discounting each entry by exponential
penalties on both sides' uncertainties pushes such instances down without
touching the confident ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import PairSet, SimilarityMatrix
from .errors import EmptyGrid, InvalidConfig, LengthMismatch
from .metrics import T2V, V2T, evaluate_retrieval

# 0.0, 0.25, ..., 5.0 inclusive
DEFAULT_BETA_GRID = tuple(round(0.25 * i, 2) for i in range(21))


@dataclass(frozen=True)
class RerankParams:
    """Penalty strengths for the vision side (beta1) and text side (beta2)."""

    beta1: float = 0.0
    beta2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.beta1) and np.isfinite(self.beta2)):
            raise InvalidConfig("beta1 and beta2 must be finite")
        if self.beta1 < 0.0 or self.beta2 < 0.0:
            raise InvalidConfig("beta1 and beta2 must be nonnegative")


def apply_rerank(m, u_v, u_t, params: RerankParams) -> SimilarityMatrix:
    """Discount each similarity by both endpoints' uncertainties.

    Entry (i, j) becomes exp(-beta1 * u_v[i]) * exp(-beta2 * u_t[j]) * m[i, j].
    Both scale factors lie in (0, 1] because uncertainties and betas are
    nonnegative, so the result still lives in [-1, 1].  With beta1 = beta2
    = 0 both factors are exactly 1.0 and the values pass through bit for
    bit.
    """
    values = m.values if isinstance(m, SimilarityMatrix) else np.asarray(m, dtype=np.float64)
    if values.ndim != 2:
        raise LengthMismatch("similarity matrix must be 2-D")
    u_v = np.asarray(u_v, dtype=np.float64).ravel()
    u_t = np.asarray(u_t, dtype=np.float64).ravel()
    if u_v.size != values.shape[0] or u_t.size != values.shape[1]:
        raise LengthMismatch(
            f"uncertainty lengths ({u_v.size}, {u_t.size}) "
            f"do not match matrix shape {values.shape}"
        )
    if np.any(u_v < 0.0) or np.any(u_t < 0.0):
        raise InvalidConfig("uncertainties must be nonnegative")
    row_scale = np.exp(-params.beta1 * u_v)
    col_scale = np.exp(-params.beta2 * u_t)
    return SimilarityMatrix(values=row_scale[:, None] * values * col_scale[None, :])


def fit_betas(
    m,
    u_v,
    u_t,
    pairs: PairSet,
    grid=DEFAULT_BETA_GRID,
) -> RerankParams:
    """Exhaustive grid search for the penalty pair with the best mean R@1.

    The objective is the mean of t2v and v2t R@1 on the given pairs,
    normally a validation split.  The grid must contain 0 so that the
    do-nothing baseline (0, 0) is always a candidate.  Both axes sweep in
    ascending order and a candidate must strictly improve to displace the
    incumbent, so ties resolve to the smallest beta1, then the smallest
    beta2.
    """
    candidates = sorted({float(g) for g in grid})
    if not candidates:
        raise EmptyGrid("beta grid has no candidates")
    if any(not np.isfinite(g) or g < 0.0 for g in candidates):
        raise InvalidConfig("beta grid entries must be finite and nonnegative")
    if 0.0 not in candidates:
        raise InvalidConfig("beta grid must contain 0 (the no-penalty baseline)")
    best_params = None
    best_score = -np.inf
    for b1 in candidates:
        for b2 in candidates:
            params = RerankParams(beta1=b1, beta2=b2)
            scored = apply_rerank(m, u_v, u_t, params)
            score = 0.5 * (
                evaluate_retrieval(scored, pairs, T2V).r1
                + evaluate_retrieval(scored, pairs, V2T).r1
            )
            if score > best_score:
                best_score = score
                best_params = params
    return best_params
