"""Negative sampling: uniform corruption and the Gumbel-Softmax generator.

The generator embeds the surviving entity, the relation, the time bucket and
a learned position vector (corrupt head / corrupt tail), concatenates them,
and maps the result through a linear layer whose output rows are indexed by
candidate entity. Candidate logits are relaxed with Gumbel-Softmax so the
discriminator's output can be differentiated with respect to them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import SparseGrad
from .numerics import EmbeddingTable, gumbel_noise, gumbel_softmax_backward, softmax

BACKBONES = ("ttranse", "diachronic")


def uniform_corrupt(quads, n_entities: int, rng: np.random.Generator, corrupt_head=None):
    """Replace head or tail (probability 1/2 each) with a different entity.

    Returns ``(negatives, corrupt_head)``.
    """
    q = np.atleast_2d(np.asarray(quads, dtype=np.int64))
    if n_entities < 2:
        raise ValueError("uniform corruption needs at least two entities")
    n = q.shape[0]
    if corrupt_head is None:
        corrupt_head = rng.random(n) < 0.5
    corrupt_head = np.broadcast_to(np.asarray(corrupt_head, dtype=bool), (n,))
    original = np.where(corrupt_head, q[:, 0], q[:, 2])
    draw = rng.integers(0, n_entities - 1, size=n)
    draw += draw >= original
    out = q.copy()
    out[corrupt_head, 0] = draw[corrupt_head]
    out[~corrupt_head, 2] = draw[~corrupt_head]
    return out, corrupt_head.copy()


def sample_candidates(true_ids, n_entities: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct entities per row, uniformly drawn from all but the true one."""
    true_ids = np.asarray(true_ids, dtype=np.int64)
    n = true_ids.size
    pool = n_entities - 1
    if not 1 <= k <= pool:
        raise ValueError(f"candidate count must lie in [1, {pool}], got {k}")
    if k == pool:
        idx = np.broadcast_to(np.arange(pool), (n, pool)).copy()
    else:
        keys = rng.random((n, pool))
        idx = np.argpartition(keys, k - 1, axis=1)[:, :k]
        idx.sort(axis=1)
    idx += idx >= true_ids[:, None]
    return idx


@dataclass
class GeneratorBatch:
    """Everything the generator produced for one batch, noise included."""

    quads: np.ndarray
    corrupt_head: np.ndarray
    candidates: np.ndarray
    logits: np.ndarray
    noise: np.ndarray
    soft: np.ndarray
    hard: np.ndarray
    temperature: float
    features: np.ndarray
    mask: np.ndarray

    @property
    def hard_entities(self) -> np.ndarray:
        return self.candidates[np.arange(len(self.hard)), self.hard]

    def negatives(self) -> np.ndarray:
        out = self.quads.copy()
        ents = self.hard_entities
        out[self.corrupt_head, 0] = ents[self.corrupt_head]
        out[~self.corrupt_head, 2] = ents[~self.corrupt_head]
        return out


class Generator:
    """Generator parameters plus forward/backward passes.

    Tables: ``entity``, ``relation``, ``time`` and ``position`` (two rows)
    of width ``dim``, and the output layer ``weight`` (|E| x 4*dim) and
    ``bias`` (|E| x 1). The ``diachronic`` backbone additionally embeds the
    surviving entity with a time-dependent sine part on its first half.
    """

    def __init__(self, n_entities, n_relations, n_buckets, dim, rng, backbone="ttranse"):
        if backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}")
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)
        self.n_buckets = int(n_buckets)
        self.dim = int(dim)
        self.backbone = backbone
        in_dim = 4 * dim
        self.tables = {
            "entity": EmbeddingTable.uniform(n_entities, dim, rng),
            "relation": EmbeddingTable.uniform(n_relations, dim, rng),
            "time": EmbeddingTable.uniform(n_buckets, dim, rng),
            "position": EmbeddingTable.uniform(2, dim, rng),
            "weight": EmbeddingTable.uniform(n_entities, in_dim, rng, 1.0 / math.sqrt(in_dim)),
            "bias": EmbeddingTable(np.zeros((n_entities, 1))),
        }
        if backbone == "diachronic":
            k = dim // 2
            self.tables["frequency"] = EmbeddingTable.uniform(n_entities, k, rng)
            self.tables["phase"] = EmbeddingTable.uniform(n_entities, k, rng)

    def copy(self) -> "Generator":
        import copy

        return copy.deepcopy(self)

    def _time_scalar(self, t):
        return np.asarray(t, dtype=np.float64) / max(self.n_buckets - 1, 1)

    def _known_embedding(self, known, t):
        e = self.tables["entity"].values[known]
        if self.backbone == "ttranse":
            return e
        k = self.dim // 2
        z = self.tables["frequency"].values[known] * self._time_scalar(t)[:, None] + self.tables["phase"].values[known]
        return np.concatenate([e[:, :k] * np.sin(z), e[:, k:]], axis=1)

    def features(self, quads, corrupt_head) -> np.ndarray:
        q = np.atleast_2d(np.asarray(quads, dtype=np.int64))
        ch = np.asarray(corrupt_head, dtype=bool)
        known = np.where(ch, q[:, 2], q[:, 0])
        return np.concatenate(
            [
                self._known_embedding(known, q[:, 3]),
                self.tables["relation"].values[q[:, 1]],
                self.tables["time"].values[q[:, 3]],
                self.tables["position"].values[ch.astype(np.int64)],
            ],
            axis=1,
        )

    def logits(self, quads, corrupt_head, candidates, features=None) -> np.ndarray:
        cand = np.asarray(candidates, dtype=np.int64)
        if cand.size == 0 or cand.shape[-1] == 0:
            raise ValueError("generator needs at least one candidate")
        x = self.features(quads, corrupt_head) if features is None else features
        full = x @ self.tables["weight"].values.T + self.tables["bias"].values[:, 0]
        return np.take_along_axis(full, cand, axis=1)

    def generate(
        self,
        quads,
        temperature: float,
        k: int,
        rng: np.random.Generator,
        corrupt_head=None,
        filter_index=None,
    ) -> GeneratorBatch:
        """Draw corruption positions, candidates, noise, and relax the choice.

        With ``filter_index``, candidates that form another known true fact are
        masked out of the softmax (unless every candidate would be masked).
        """
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        q = np.atleast_2d(np.asarray(quads, dtype=np.int64))
        n = q.shape[0]
        if corrupt_head is None:
            corrupt_head = rng.random(n) < 0.5
        corrupt_head = np.broadcast_to(np.asarray(corrupt_head, dtype=bool), (n,)).copy()
        true_ids = np.where(corrupt_head, q[:, 0], q[:, 2])
        k = min(int(k), self.n_entities - 1)
        cand = sample_candidates(true_ids, self.n_entities, k, rng)
        x = self.features(q, corrupt_head)
        logits = self.logits(q, corrupt_head, cand, x)
        noise = gumbel_noise(logits.shape, rng)
        if filter_index is None:
            mask = np.zeros(cand.shape)
        else:
            mask = _false_negative_mask(q, corrupt_head, cand, filter_index)
        soft = softmax((logits + mask + noise) / temperature)
        hard = np.argmax(soft, axis=1)
        return GeneratorBatch(q, corrupt_head, cand, logits, noise, soft, hard, float(temperature), x, mask)

    def relax(self, batch: GeneratorBatch) -> np.ndarray:
        """Recompute soft weights for ``batch`` with its noise held fixed."""
        logits = self.logits(batch.quads, batch.corrupt_head, batch.candidates)
        return softmax((logits + batch.mask + batch.noise) / batch.temperature)

    def gradients(self, batch: GeneratorBatch, upstream) -> SparseGrad:
        """Chain rule from d(loss)/d(soft weights) into every generator table."""
        up = np.asarray(upstream, dtype=np.float64)
        if up.shape != batch.soft.shape:
            raise ValueError(f"upstream shape {up.shape} != soft shape {batch.soft.shape}")
        dlogits = gumbel_softmax_backward(batch.soft, up, batch.temperature)
        cand = batch.candidates
        x = batch.features
        dense = np.zeros((cand.shape[0], self.n_entities))
        np.put_along_axis(dense, cand, dlogits, axis=1)
        touched = np.unique(cand)
        grads = SparseGrad()
        grads.add("weight", touched, (dense.T @ x)[touched])
        grads.add("bias", touched, dense.sum(axis=0)[touched, None])
        dx = dense @ self.tables["weight"].values
        d = self.dim
        q = batch.quads
        ch = batch.corrupt_head
        known = np.where(ch, q[:, 2], q[:, 0])
        dknown = dx[:, :d]
        if self.backbone == "ttranse":
            grads.add("entity", known, dknown)
        else:
            k = d // 2
            e = self.tables["entity"].values[known]
            tau = self._time_scalar(q[:, 3])[:, None]
            z = self.tables["frequency"].values[known] * tau + self.tables["phase"].values[known]
            de = dknown.copy()
            de[:, :k] = dknown[:, :k] * np.sin(z)
            dz = dknown[:, :k] * e[:, :k] * np.cos(z)
            grads.add("entity", known, de)
            grads.add("frequency", known, dz * tau)
            grads.add("phase", known, dz)
        grads.add("relation", q[:, 1], dx[:, d:2 * d])
        grads.add("time", q[:, 3], dx[:, 2 * d:3 * d])
        grads.add("position", ch.astype(np.int64), dx[:, 3 * d:])
        return grads


def _false_negative_mask(q, corrupt_head, cand, filter_index) -> np.ndarray:
    mask = np.zeros(cand.shape)
    for i in range(q.shape[0]):
        s, p, o, t = q[i]
        truths = filter_index.heads(p, o, t) if corrupt_head[i] else filter_index.tails(s, p, t)
        if truths:
            hit = np.isin(cand[i], list(truths))
            if not hit.all():
                mask[i, hit] = -np.inf
    return mask
