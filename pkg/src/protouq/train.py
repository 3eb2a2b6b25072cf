"""Prototype banks and their training loop.

Each modality owns a bank of K prototype vectors.  Training fits both
banks so that the uncertainty of an instance (scored against the other
modality's bank) regresses onto that instance's mean cosine similarity
across the batch, while a diversity penalty keeps the prototypes of each
bank from collapsing onto one direction.  Everything is plain numpy with
analytic gradients; the optimizer is a from-scratch Adam (or SGD for
debugging).  Prototypes are never renormalized after an update: their
norm is a learnable scale that the evidence functions see through the
dot product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embed import (
    VISION,
    TEXT,
    EmbeddingSet,
    PairSet,
    aligned_batch,
)
from .errors import (
    DimensionMismatch,
    DimensionTooSmall,
    InsufficientPairs,
    InvalidConfig,
    InvariantViolation,
    LengthMismatch,
    ModalityMismatch,
    ZeroPrototype,
)
from .evidence import EvidenceConfig, evidence_slope, generate_evidence

ADAM = "adam"
SGD = "sgd"
OPTIMIZERS = (ADAM, SGD)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

H_CLAMP = "clamp"
H_AFFINE = "affine"
H_MAPPINGS = (H_CLAMP, H_AFFINE)

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class PrototypeBank:
    """K learnable prototype vectors for one modality, norms unconstrained."""

    modality: str
    vectors: np.ndarray

    def __post_init__(self) -> None:
        if self.modality not in (VISION, TEXT):
            raise ModalityMismatch(f"unknown modality {self.modality!r}")
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise InvariantViolation("prototype bank must be a nonempty 2-D array")
        if vectors.shape[1] < 2:
            raise DimensionTooSmall(
                f"prototype dimension must be >= 2, got {vectors.shape[1]}"
            )
        if not np.all(np.isfinite(vectors)):
            raise InvariantViolation("prototype entries must be finite")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms < _NORM_EPS):
            raise ZeroPrototype("a prototype row has near-zero norm")
        vectors = np.ascontiguousarray(vectors)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


def init_prototypes(k: int, d: int, seed: int, modality: str = VISION) -> PrototypeBank:
    """Seeded Xavier-uniform bank: entries drawn from +-sqrt(6 / (2 d))."""
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    if d < 2:
        raise DimensionTooSmall(f"d must be >= 2, got {d}")
    bound = np.sqrt(6.0 / (2.0 * d))
    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-bound, bound, size=(k, d))
    return PrototypeBank(modality=modality, vectors=vectors)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for prototype training.

    h_mapping selects how raw batch-mean cosines become regression targets:
    "clamp" (default) clips to [0, 1]; "affine" maps via (h + 1) / 2 and is
    kept only as an escape hatch for experiments.
    """

    epochs: int
    seed: int
    k: int = 8
    batch_size: int = 256
    learning_rate: float = 1e-4
    lambda_div: float = 1.0
    evidence: EvidenceConfig = field(default_factory=EvidenceConfig)
    optimizer: str = ADAM
    h_mapping: str = H_CLAMP

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if self.k < 1:
            raise InvalidConfig(f"k must be >= 1, got {self.k}")
        if self.batch_size < 2:
            raise InvalidConfig(f"batch_size must be >= 2, got {self.batch_size}")
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0.0:
            raise InvalidConfig(f"learning_rate must be positive, got {self.learning_rate}")
        if not np.isfinite(self.lambda_div) or self.lambda_div < 0.0:
            raise InvalidConfig(f"lambda_div must be >= 0, got {self.lambda_div}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidConfig(f"unknown optimizer {self.optimizer!r}")
        if self.h_mapping not in H_MAPPINGS:
            raise InvalidConfig(f"unknown h_mapping {self.h_mapping!r}")


@dataclass(frozen=True)
class BatchLosses:
    uct_v: float
    uct_t: float
    div_v: float
    div_t: float
    total: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    uct_v: float
    uct_t: float
    div_v: float
    div_t: float
    total: float


@dataclass(frozen=True)
class TrainHistory:
    records: tuple[EpochRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]


def map_targets(raw_means: np.ndarray, mode: str = H_CLAMP) -> np.ndarray:
    """Map raw batch-mean cosines into [0, 1] regression targets."""
    if mode == H_CLAMP:
        return np.clip(raw_means, 0.0, 1.0)
    if mode == H_AFFINE:
        return (raw_means + 1.0) / 2.0
    raise InvalidConfig(f"unknown h_mapping {mode!r}")


def loss_uct(u: np.ndarray, h: np.ndarray) -> float:
    """Mean squared error between uncertainties and their targets."""
    u = np.asarray(u, dtype=np.float64).ravel()
    h = np.asarray(h, dtype=np.float64).ravel()
    if u.shape != h.shape:
        raise LengthMismatch(f"lengths differ: {u.shape[0]} vs {h.shape[0]}")
    if u.size == 0:
        raise LengthMismatch("loss over zero instances is undefined")
    diff = u - h
    return float(np.mean(diff * diff))


def _cosine_rows(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms < _NORM_EPS):
        raise ZeroPrototype("a prototype row has near-zero norm")
    unit = vectors / norms[:, None]
    gram = np.clip(unit @ unit.T, -1.0, 1.0)
    return gram, unit, norms


def loss_div(bank: PrototypeBank) -> float:
    """Mean squared pairwise cosine over the bank, diagonal included.

    The i = j terms contribute exactly K, so the loss is bounded below by
    1 / K, attained when all off-diagonal cosines vanish.
    """
    gram, _, _ = _cosine_rows(np.asarray(bank.vectors, dtype=np.float64))
    return float(np.mean(gram * gram))


def _div_value_grad(vectors: np.ndarray) -> tuple[float, np.ndarray]:
    """Diversity loss and its gradient for one bank's raw (k, d) array."""
    gram, unit, norms = _cosine_rows(vectors)
    k = vectors.shape[0]
    value = float(np.mean(gram * gram))
    # d/dz_a of sum_ij cos^2: diagonal terms are constant, and including
    # j = a in both partial sums below cancels exactly, so no masking.
    row_sq = (gram * gram).sum(axis=1)
    grad = (4.0 / (k * k)) * (gram @ unit - row_sq[:, None] * unit) / norms[:, None]
    return value, grad


def _uct_value_grads(
    instances: np.ndarray,
    bank_vectors: np.ndarray,
    targets: np.ndarray,
    cfg: EvidenceConfig,
) -> tuple[float, np.ndarray]:
    """Uncertainty regression loss for one direction and its bank gradient.

    instances: (n, d) unit rows.  bank_vectors: (k, d).  targets: (n,).
    u_i = 1 - K / S_i with S_i = K + sum_k f(x_i . z_k), so

        dL/dz_k = sum_i (2/n) (u_i - h_i) (K / S_i^2) f'(p_ik) x_i.
    """
    n, _ = instances.shape
    k = bank_vectors.shape[0]
    p = instances @ bank_vectors.T
    e = generate_evidence(p, cfg)
    strength = k + e.sum(axis=1)
    u = 1.0 - k / strength
    diff = u - targets
    value = float(np.mean(diff * diff))
    weight = (2.0 / n) * diff * (k / (strength * strength))
    grad = (weight[:, None] * evidence_slope(p, cfg)).T @ instances
    return value, grad


def gradients(
    vis: EmbeddingSet,
    txt: EmbeddingSet,
    bank_v: PrototypeBank,
    bank_t: PrototypeBank,
    cfg: TrainConfig,
) -> tuple[np.ndarray, np.ndarray, BatchLosses]:
    """Analytic gradients of the total loss for one aligned batch.

    The batch similarity matrix M supplies the targets: row means for
    vision instances, column means for text instances, both mapped into
    [0, 1].  Vision uncertainty is scored against the text bank and text
    uncertainty against the vision bank, so the uncertainty terms push
    gradients into the opposite modality's prototypes.  The diversity
    penalty differentiates against each bank directly.

    Returns:
        (grad_v, grad_t, losses) where grad_v has bank_v's shape and
        grad_t has bank_t's.
    """
    aligned_batch(vis, txt)
    if vis.n < 2:
        raise InsufficientPairs("a batch needs at least 2 aligned pairs")
    if bank_v.d != vis.d or bank_t.d != vis.d:
        raise DimensionMismatch("banks and instances disagree on dimension")
    return _batch_gradients(vis.vectors, txt.vectors, bank_v.vectors, bank_t.vectors, cfg)


class _AdamState:
    """Adam with bias correction; one instance per parameter block."""

    def __init__(self, shape: tuple[int, ...], lr: float):
        self.lr = lr
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1.0 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1.0 - ADAM_BETA2) * grad * grad
        m_hat = self.m / (1.0 - ADAM_BETA1 ** self.t)
        v_hat = self.v / (1.0 - ADAM_BETA2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


class _SgdState:
    def __init__(self, shape: tuple[int, ...], lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad


def train(
    vis: EmbeddingSet,
    txt: EmbeddingSet,
    pairs: PairSet,
    cfg: TrainConfig,
) -> tuple[PrototypeBank, PrototypeBank, TrainHistory]:
    """Fit both prototype banks on a frozen corpus.

    Every epoch walks the vision instances in a fresh shuffled order; an
    instance with several paired texts contributes one uniformly chosen
    caption per epoch.  Trailing batches of a single pair are dropped
    (the batch loss needs at least two instances).  All randomness flows
    from cfg.seed, so identical configs give identical banks.
    """
    if vis.modality != VISION or txt.modality != TEXT:
        raise ModalityMismatch(
            f"expected (vision, text), got ({vis.modality}, {txt.modality})"
        )
    if vis.d != txt.d:
        raise DimensionMismatch(f"dimension mismatch: {vis.d} vs {txt.d}")
    pairs.check_against(vis.n, txt.n)
    if len(pairs) < 2:
        raise InsufficientPairs("training needs at least 2 pairs")

    seeds = np.random.SeedSequence(cfg.seed).generate_state(3)
    bank_v = init_prototypes(cfg.k, vis.d, int(seeds[0]), VISION)
    bank_t = init_prototypes(cfg.k, vis.d, int(seeds[1]), TEXT)
    sampler = np.random.default_rng(int(seeds[2]))

    z_v = np.array(bank_v.vectors)
    z_t = np.array(bank_t.vectors)
    opt_cls = _AdamState if cfg.optimizer == ADAM else _SgdState
    opt_v = opt_cls(z_v.shape, cfg.learning_rate)
    opt_t = opt_cls(z_t.shape, cfg.learning_rate)

    texts_of = pairs.texts_of()
    caption_lists = [texts_of[v] for v in range(vis.n)]

    records = []
    for epoch in range(cfg.epochs):
        order = sampler.permutation(vis.n)
        chosen = np.empty(vis.n, dtype=np.int64)
        for slot, v in enumerate(order):
            options = caption_lists[v]
            chosen[slot] = options[sampler.integers(options.size)] if options.size > 1 else options[0]

        sums = np.zeros(5)
        batches = 0
        for start in range(0, vis.n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            cols = chosen[start:start + cfg.batch_size]
            if rows.size < 2:
                continue
            xv = vis.vectors[rows]
            xt = txt.vectors[cols]
            grad_v, grad_t, losses = _batch_gradients(xv, xt, z_v, z_t, cfg)
            opt_v.step(z_v, grad_v)
            opt_t.step(z_t, grad_t)
            sums += (losses.uct_v, losses.uct_t, losses.div_v, losses.div_t, losses.total)
            batches += 1
        if batches == 0:
            raise InsufficientPairs("every batch in the epoch was smaller than 2")
        if not (np.all(np.isfinite(z_v)) and np.all(np.isfinite(z_t))):
            raise InvariantViolation(f"non-finite prototype entries after epoch {epoch}")
        means = sums / batches
        records.append(EpochRecord(epoch, *map(float, means)))

    return (
        PrototypeBank(modality=VISION, vectors=z_v),
        PrototypeBank(modality=TEXT, vectors=z_t),
        TrainHistory(records=tuple(records)),
    )


def _batch_gradients(
    xv: np.ndarray,
    xt: np.ndarray,
    z_v: np.ndarray,
    z_t: np.ndarray,
    cfg: TrainConfig,
) -> tuple[np.ndarray, np.ndarray, BatchLosses]:
    """gradients() on raw arrays; the hot path inside the epoch loop."""
    m = xv @ xt.T
    np.clip(m, -1.0, 1.0, out=m)
    h_v = map_targets(m.mean(axis=1), cfg.h_mapping)
    h_t = map_targets(m.mean(axis=0), cfg.h_mapping)
    uct_v, grad_t_uct = _uct_value_grads(xv, z_t, h_v, cfg.evidence)
    uct_t, grad_v_uct = _uct_value_grads(xt, z_v, h_t, cfg.evidence)
    div_v, grad_v_div = _div_value_grad(z_v)
    div_t, grad_t_div = _div_value_grad(z_t)
    grad_v = grad_v_uct + cfg.lambda_div * grad_v_div
    grad_t = grad_t_uct + cfg.lambda_div * grad_t_div
    total = uct_v + uct_t + cfg.lambda_div * (div_v + div_t)
    return grad_v, grad_t, BatchLosses(uct_v, uct_t, div_v, div_t, total)
