"""Evidence generation and Dirichlet-based uncertainty.

Similarities between an instance and a bank of prototypes are mapped
elementwise to nonnegative evidence e, which parameterizes a Dirichlet
via alpha = e + 1.  The Dirichlet strength S = sum(alpha) splits unit
mass into K belief masses b_k = e_k / S plus an overall mass psi = K / S.
The aleatoric uncertainty score is u = 1 - psi: massive accumulated
evidence means the instance sits close to many prototypes at once, which
is exactly the ambiguous case.

Instances are unit vectors; prototypes carry a learnable, unconstrained
norm.  The similarity fed to the evidence function is therefore the raw
dot product (a norm-scaled cosine), which is what lets training place
uncertainty anywhere in [0, 1) instead of being pinned near 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import EmbeddingSet
from .errors import (
    DimensionMismatch,
    EmptyVector,
    InvalidConfig,
    ModalityMismatch,
    NegativeEvidence,
)

RELU = "relu"
SOFTPLUS = "softplus"
EXPONENTIAL = "exponential"
EVIDENCE_KINDS = (RELU, SOFTPLUS, EXPONENTIAL)


@dataclass(frozen=True)
class EvidenceConfig:
    """Choice of evidence function and its shape parameters.

    kind: one of "relu", "softplus", "exponential".
    gamma: softplus sharpness (> 0).
    theta: softplus linear-regime threshold; for gamma * s > theta the
        function passes s through unchanged to avoid overflow.
    tau: exponential temperature (> 0), e = exp(s / tau).
    """

    kind: str = EXPONENTIAL
    gamma: float = 1.0
    theta: float = 20.0
    tau: float = 5.0

    def __post_init__(self) -> None:
        if self.kind not in EVIDENCE_KINDS:
            raise InvalidConfig(f"unknown evidence kind {self.kind!r}")
        for name in ("gamma", "theta", "tau"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise InvalidConfig(f"{name} must be finite and positive, got {value}")


def generate_evidence(s, cfg: EvidenceConfig = EvidenceConfig()):
    """Map similarity (scalar or array) to nonnegative evidence.

    relu:        max(0, s)
    softplus:    log(1 + exp(gamma s)) / gamma, switching to the identity
                 once gamma s exceeds theta
    exponential: exp(s / tau)
    """
    arr = np.asarray(s, dtype=np.float64)
    if cfg.kind == RELU:
        out = np.maximum(arr, 0.0)
    elif cfg.kind == SOFTPLUS:
        scaled = cfg.gamma * arr
        capped = np.minimum(scaled, cfg.theta)
        out = np.where(scaled <= cfg.theta, np.log1p(np.exp(capped)) / cfg.gamma, arr)
    else:
        out = np.exp(arr / cfg.tau)
    if arr.ndim == 0:
        return float(out)
    return out


def evidence_slope(s, cfg: EvidenceConfig = EvidenceConfig()):
    """Derivative of generate_evidence with respect to the similarity.

    The relu subgradient at exactly 0 is taken as 0.
    """
    arr = np.asarray(s, dtype=np.float64)
    if cfg.kind == RELU:
        out = (arr > 0.0).astype(np.float64)
    elif cfg.kind == SOFTPLUS:
        scaled = cfg.gamma * arr
        capped = np.minimum(scaled, cfg.theta)
        sigmoid = 1.0 / (1.0 + np.exp(-capped))
        out = np.where(scaled <= cfg.theta, sigmoid, 1.0)
    else:
        out = np.exp(arr / cfg.tau) / cfg.tau
    if arr.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class DirichletState:
    """Dirichlet summary for one instance against K prototypes."""

    evidence: np.ndarray
    alpha: np.ndarray
    strength: float
    beliefs: np.ndarray
    psi: float
    u: float

    @property
    def k(self) -> int:
        return self.evidence.shape[0]


def dirichlet_from_evidence(e, k: int | None = None) -> DirichletState:
    """Build the Dirichlet state for one evidence vector.

    alpha = e + 1, S = sum(alpha), b = e / S, psi = K / S, u = 1 - psi.
    The masses satisfy sum(b) + psi = 1 with every component nonnegative,
    and u is always in [0, 1).  k, when given, must equal len(e); it is
    otherwise inferred.

    Raises:
        EmptyVector: e has no entries, or k disagrees with len(e).
        NegativeEvidence: an entry is negative or not finite.
    """
    evidence = np.asarray(e, dtype=np.float64).ravel()
    if evidence.size == 0:
        raise EmptyVector("evidence vector has no entries")
    if k is not None and k != evidence.size:
        raise EmptyVector(f"k={k} disagrees with len(e)={evidence.size}")
    if not np.all(np.isfinite(evidence)) or np.any(evidence < 0.0):
        raise NegativeEvidence("evidence entries must be finite and nonnegative")
    evidence = evidence.copy()
    evidence.setflags(write=False)
    alpha = evidence + 1.0
    strength = float(alpha.sum())
    beliefs = evidence / strength
    beliefs.setflags(write=False)
    alpha.setflags(write=False)
    k = evidence.size
    psi = k / strength
    return DirichletState(
        evidence=evidence,
        alpha=alpha,
        strength=strength,
        beliefs=beliefs,
        psi=psi,
        u=1.0 - psi,
    )


def prototype_similarities(instances: EmbeddingSet, prototypes) -> np.ndarray:
    """(n, k) matrix of dot products between unit instances and prototypes."""
    vectors = getattr(prototypes, "vectors", prototypes)
    vectors = np.asarray(vectors, dtype=np.float64)
    if instances.d != vectors.shape[1]:
        raise DimensionMismatch(
            f"dimension mismatch: instances d={instances.d}, prototypes d={vectors.shape[1]}"
        )
    return instances.vectors @ vectors.T


def uncertainty_scores(instances: EmbeddingSet, prototypes, cfg: EvidenceConfig) -> np.ndarray:
    """Aleatoric uncertainty of each instance against a prototype bank.

    The bank must come from the opposite modality: vision instances are
    scored against text prototypes and vice versa, so that uncertainty
    reflects how many cross-modal semantics an instance matches.

    Returns:
        (n,) array of u values in [0, 1), one per instance row.  Raising
        every similarity of an instance strictly raises its u.
    """
    bank_modality = getattr(prototypes, "modality", None)
    if bank_modality is not None and bank_modality == instances.modality:
        raise ModalityMismatch(
            f"{instances.modality} instances must be scored against the "
            "opposite modality's prototypes"
        )
    p = prototype_similarities(instances, prototypes)
    e = generate_evidence(p, cfg)
    k = p.shape[1]
    strength = k + e.sum(axis=1)
    return 1.0 - k / strength
