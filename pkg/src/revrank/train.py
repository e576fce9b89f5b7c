"""Low-rank residual adapter over frozen embeddings and its training loop.

The adapter maps an embedding ``e`` to ``normalize(e + B @ A.T @ e)`` and
scores a pair by the cosine of the mapped vectors. ``B`` starts at zero, so
an untrained adapter reproduces raw cosine similarity. Training minimises

    mean over triplets of  pair_loss + lambda_ce * ce_loss

where ``pair_loss = -log sigmoid((s_pos - s_neg) / T)`` and ``ce_loss`` is
softmax cross-entropy of the positive against every candidate in the
mini-batch. Gradients are analytic; ``grad_check`` compares them with
central finite differences.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, DimensionMismatch, EmptyInputError, NonFiniteLossError
from .prefgen import PreferenceTriplet

log = logging.getLogger(__name__)

_CKPT_MAGIC = b"RVAD"


@dataclass
class AdapterModel:
    A: np.ndarray  # (base_dim, rank)
    B: np.ndarray  # (base_dim, rank)
    temperature: float = 0.0634
    lambda_ce: float = 0.915
    seed: int = 622

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        if self.A.shape != self.B.shape or self.A.ndim != 2:
            raise ValueError(f"A {self.A.shape} and B {self.B.shape} must both be (dim, rank)")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.lambda_ce < 0:
            raise ValueError("lambda_ce must be non-negative")

    @classmethod
    def init(cls, base_dim: int, rank: int = 16, temperature: float = 0.0634, lambda_ce: float = 0.915,
             seed: int = 622, init_scale: float = 0.02) -> "AdapterModel":
        rng = np.random.default_rng(seed)
        A = rng.normal(0.0, init_scale, size=(base_dim, rank))
        return cls(A, np.zeros((base_dim, rank)), temperature, lambda_ce, seed)

    @property
    def base_dim(self) -> int:
        return self.A.shape[0]

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    def copy(self) -> "AdapterModel":
        return replace(self, A=self.A.copy(), B=self.B.copy())

    def transform(self, E) -> np.ndarray:
        """Map rows of ``E`` (or a single vector) through the adapter."""
        E = np.asarray(E, dtype=np.float64)
        single = E.ndim == 1
        E2 = E[None, :] if single else E
        if E2.shape[1] != self.base_dim:
            raise DimensionMismatch(f"expected dim {self.base_dim}, got {E2.shape[1]}")
        U = E2 + (E2 @ self.A) @ self.B.T
        H = U / np.linalg.norm(U, axis=1, keepdims=True)
        return H[0] if single else H

    # -- checkpoint --------------------------------------------------------

    def save(self, path) -> None:
        header = json.dumps({
            "base_dim": self.base_dim, "r": self.rank, "temperature": self.temperature,
            "lambda_ce": self.lambda_ce, "seed": self.seed,
        }, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.A, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.B, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "AdapterModel":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != _CKPT_MAGIC:
            raise DataError(f"{path}: not an adapter checkpoint")
        (n,) = struct.unpack_from("<I", blob, 4)
        header = json.loads(blob[8:8 + n])
        d, r = header["base_dim"], header["r"]
        body = np.frombuffer(blob, dtype="<f8", offset=8 + n)
        if body.size != 2 * d * r:
            raise DataError(f"{path}: expected {2 * d * r} parameters, found {body.size}")
        A = body[: d * r].reshape(d, r).copy()
        B = body[d * r:].reshape(d, r).copy()
        return cls(A, B, header["temperature"], header["lambda_ce"], header["seed"])


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 15
    batch_size: int = 4
    warmup_fraction: float = 0.05
    patience: int = 6
    seed: int = 622
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ValueError(f"invalid training configuration: {self}")
        if not 0 <= self.warmup_fraction <= 1 or not 0 <= self.val_fraction < 1:
            raise ValueError(f"invalid training configuration: {self}")


def _softplus_neg(x):
    # -log(sigmoid(x))
    return np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- single-example losses (public, used in tests and docs) ------------------


def score(model: AdapterModel, anchor_embedding, candidate_embedding) -> float:
    h = model.transform(np.stack([np.asarray(anchor_embedding, float), np.asarray(candidate_embedding, float)]))
    return float(h[0] @ h[1])


def loss_pair(model: AdapterModel, anchor, positive, negative) -> float:
    h = model.transform(np.stack([anchor, positive, negative]).astype(np.float64))
    x = (h[0] @ h[1] - h[0] @ h[2]) / model.temperature
    return float(_softplus_neg(x))


def loss_ce(model: AdapterModel, anchor, positive, batch_candidates) -> float:
    """Cross-entropy of the positive against ``batch_candidates``.

    The positive must appear (exactly) among the batch candidates.
    """
    cands = np.atleast_2d(np.asarray(batch_candidates, dtype=np.float64))
    positive = np.asarray(positive, dtype=np.float64)
    hits = np.flatnonzero(np.all(cands == positive, axis=1))
    if hits.size == 0:
        raise DataError("positive candidate is not part of the batch")
    H = model.transform(np.vstack([np.asarray(anchor, float)[None, :], cands]))
    logits = H[1:] @ H[0] / model.temperature
    m = logits.max()
    return float(m + math.log(np.exp(logits - m).sum()) - logits[hits[0]])


# -- batched forward/backward ------------------------------------------------


@dataclass
class Batch:
    """Index form of a triplet mini-batch over a stacked embedding matrix."""

    E: np.ndarray
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    cands: np.ndarray          # distinct candidate rows (positives and negatives)
    pos_col: np.ndarray        # column of each triplet's positive within cands
    ids: list = field(default_factory=list)

    @classmethod
    def from_triplets(cls, triplets: Sequence[PreferenceTriplet], embeddings: Mapping[str, np.ndarray]) -> "Batch":
        keys: dict[str, int] = {}
        rows = []

        def row(key):
            if key not in keys:
                try:
                    rows.append(np.asarray(embeddings[key], dtype=np.float64))
                except KeyError:
                    raise DataError(f"no embedding for {key}") from None
                keys[key] = len(rows) - 1
            return keys[key]

        a_idx, p_idx, n_idx = [], [], []
        for t in triplets:
            ka, kp, kn = t.keys()
            a_idx.append(row(ka))
            p_idx.append(row(kp))
            n_idx.append(row(kn))
        return cls.from_indices(np.stack(rows), a_idx, p_idx, n_idx,
                                ids=[(t.anchor_id, t.positive_id, t.negative_id) for t in triplets])

    @classmethod
    def from_indices(cls, E, anchor, positive, negative, ids=None) -> "Batch":
        positive = np.asarray(positive, dtype=np.int64)
        negative = np.asarray(negative, dtype=np.int64)
        cands = np.unique(np.concatenate([positive, negative]))
        pos_col = np.searchsorted(cands, positive)
        return cls(np.asarray(E, dtype=np.float64), np.asarray(anchor, dtype=np.int64), positive, negative,
                   cands, pos_col, list(ids or []))

    def __len__(self):
        return len(self.anchor)


def loss_and_grad(A, B, temperature: float, lambda_ce: float, batch: Batch, need_grad: bool = True):
    """Mean combined loss over the batch and its gradients w.r.t. A and B."""
    E = batch.E
    P = E @ A
    U = E + P @ B.T
    norms = np.linalg.norm(U, axis=1)
    H = U / norms[:, None]

    Ha = H[batch.anchor]
    s_pos = np.einsum("ij,ij->i", Ha, H[batch.positive])
    s_neg = np.einsum("ij,ij->i", Ha, H[batch.negative])
    x = (s_pos - s_neg) / temperature
    pair = _softplus_neg(x)

    S = Ha @ H[batch.cands].T
    logits = S / temperature
    m = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - m)
    lse = m[:, 0] + np.log(ex.sum(axis=1))
    rows = np.arange(len(batch))
    ce = lse - logits[rows, batch.pos_col]

    n = len(batch)
    loss = float(np.sum(pair + lambda_ce * ce) / n)
    if not need_grad:
        return loss, None, None

    # d loss / d similarity
    g_x = -_sigmoid(-x) / n
    g_spos = g_x / temperature
    g_sneg = -g_x / temperature
    g_S = (ex / ex.sum(axis=1, keepdims=True)) * (lambda_ce / n)
    g_S[rows, batch.pos_col] -= lambda_ce / n
    g_S /= temperature

    G_H = np.zeros_like(H)
    Hc = H[batch.cands]
    np.add.at(G_H, batch.anchor, g_spos[:, None] * H[batch.positive] + g_sneg[:, None] * H[batch.negative]
              + g_S @ Hc)
    np.add.at(G_H, batch.positive, g_spos[:, None] * Ha)
    np.add.at(G_H, batch.negative, g_sneg[:, None] * Ha)
    np.add.at(G_H, batch.cands, g_S.T @ Ha)

    G_U = (G_H - H * np.einsum("ij,ij->i", H, G_H)[:, None]) / norms[:, None]
    grad_B = G_U.T @ P
    grad_A = E.T @ (G_U @ B)
    return loss, grad_A, grad_B


def total_loss(model: AdapterModel, triplets: Sequence[PreferenceTriplet], embeddings: Mapping) -> float:
    if not triplets:
        raise EmptyInputError("empty batch")
    batch = Batch.from_triplets(triplets, embeddings)
    return loss_and_grad(model.A, model.B, model.temperature, model.lambda_ce, batch, need_grad=False)[0]


def grad_check(model: AdapterModel, batch: Batch, epsilon: float = 1e-5, n_coords: int = 20,
               seed: int = 0) -> float:
    """Largest relative gap between analytic and central-difference gradients
    over ``n_coords`` random entries of A and as many of B."""
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    rng = np.random.default_rng(seed)
    tau, lam = model.temperature, model.lambda_ce
    _, gA, gB = loss_and_grad(model.A, model.B, tau, lam, batch)
    worst = 0.0
    for which, grad in (("A", gA), ("B", gB)):
        flat = rng.choice(grad.size, size=min(n_coords, grad.size), replace=False)
        for k in flat:
            i, j = np.unravel_index(k, grad.shape)
            A, B = model.A.copy(), model.B.copy()
            target = A if which == "A" else B
            orig = target[i, j]
            target[i, j] = orig + epsilon
            up = loss_and_grad(A, B, tau, lam, batch, need_grad=False)[0]
            target[i, j] = orig - epsilon
            down = loss_and_grad(A, B, tau, lam, batch, need_grad=False)[0]
            fd = (up - down) / (2 * epsilon)
            an = grad[i, j]
            worst = max(worst, abs(fd - an) / max(1e-12, abs(fd) + abs(an)))
    return worst


# -- training loop -----------------------------------------------------------


def _evaluate(model: AdapterModel, batches: Sequence[Batch]) -> float:
    total, count = 0.0, 0
    for b in batches:
        loss = loss_and_grad(model.A, model.B, model.temperature, model.lambda_ce, b, need_grad=False)[0]
        total += loss * len(b)
        count += len(b)
    return total / count


def _chunks(items, size):
    return [items[i:i + size] for i in range(0, len(items), size)]


def split_train_val(triplets: Sequence[PreferenceTriplet], val_fraction: float, seed: int):
    order = np.random.default_rng(seed).permutation(len(triplets))
    n_val = int(round(val_fraction * len(triplets)))
    if n_val == 0 and val_fraction > 0 and len(triplets) >= 2:
        n_val = 1
    val = [triplets[i] for i in order[:n_val]]
    train = [triplets[i] for i in order[n_val:]]
    return train, val


def train_adapter(model: AdapterModel, triplets: Sequence[PreferenceTriplet], embeddings: Mapping,
                  config: TrainConfig | None = None):
    """Adam on A and B with linear warmup and early stopping on validation loss.

    Returns ``(best_model, history)`` where history holds one dict per epoch
    (epoch 0 is the untrained state) with train_loss, val_loss and lr.
    """
    config = config or TrainConfig()
    if not triplets:
        raise EmptyInputError("no triplets to train on")
    train, val = split_train_val(list(triplets), config.val_fraction, config.seed)
    if not val:
        val = train
    rng = np.random.default_rng(config.seed + 1)

    fixed_train = [Batch.from_triplets(c, embeddings) for c in _chunks(train, config.batch_size)]
    fixed_val = [Batch.from_triplets(c, embeddings) for c in _chunks(val, config.batch_size)]

    model = model.copy()
    steps_per_epoch = len(fixed_train)
    total_steps = steps_per_epoch * config.epochs
    warmup_steps = math.ceil(config.warmup_fraction * total_steps)

    mA, vA = np.zeros_like(model.A), np.zeros_like(model.A)
    mB, vB = np.zeros_like(model.B), np.zeros_like(model.B)
    b1, b2, eps = config.beta1, config.beta2, config.adam_epsilon

    best = model.copy()
    best_val = _evaluate(model, fixed_val)
    history = [{"epoch": 0, "train_loss": _evaluate(model, fixed_train), "val_loss": best_val, "lr": 0.0}]
    step = 0
    stale = 0
    lr = 0.0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        for chunk in _chunks([train[i] for i in order], config.batch_size):
            batch = Batch.from_triplets(chunk, embeddings)
            loss, gA, gB = loss_and_grad(model.A, model.B, model.temperature, model.lambda_ce, batch)
            step += 1
            if not (math.isfinite(loss) and np.all(np.isfinite(gA)) and np.all(np.isfinite(gB))):
                raise NonFiniteLossError(f"non-finite loss at step {step} on triplets {batch.ids}")
            lr = config.learning_rate * (min(1.0, step / warmup_steps) if warmup_steps else 1.0)
            mA = b1 * mA + (1 - b1) * gA
            vA = b2 * vA + (1 - b2) * gA * gA
            mB = b1 * mB + (1 - b1) * gB
            vB = b2 * vB + (1 - b2) * gB * gB
            c1 = 1 - b1 ** step
            c2 = 1 - b2 ** step
            model.A = model.A - lr * (mA / c1) / (np.sqrt(vA / c2) + eps)
            model.B = model.B - lr * (mB / c1) / (np.sqrt(vB / c2) + eps)
        val_loss = _evaluate(model, fixed_val)
        history.append({"epoch": epoch, "train_loss": _evaluate(model, fixed_train), "val_loss": val_loss, "lr": lr})
        log.info("epoch %d train %.6f val %.6f", epoch, history[-1]["train_loss"], val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = model.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop after epoch %d", epoch)
                break
    return best, history


def write_history(path, history: Sequence[Mapping]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in history:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"]), repr(row["lr"])])
