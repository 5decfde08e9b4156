"""Synthetic type-constrained temporal KGs for desk-scale experiments.

Entities get a latent 2-D position and one of ``n_types`` types. Each
relation has a typed signature (head type -> tail type), a translation and a
per-bucket drift; the tail of a fact is one of the nearest tail-type entities
to ``head + translation + drift(t)``. A TTransE-like model can fit this, and
type plausibility of a negative is directly measurable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import FilterIndex, build_filter_index
from .numerics import rng_stream


@dataclass
class SyntheticTKG:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    entity_types: np.ndarray
    signatures: np.ndarray  # (n_relations, 2): head type, tail type
    n_entities: int
    n_relations: int
    n_buckets: int

    def filter_index(self) -> FilterIndex:
        return build_filter_index(self.train, self.valid, self.test)

    def type_correct(self, positives, negatives) -> np.ndarray:
        """True where the replaced entity has the same type as the original."""
        pos = np.asarray(positives).reshape(-1, 4)
        neg = np.asarray(negatives).reshape(-1, 4)
        head_changed = pos[:, 0] != neg[:, 0]
        orig = np.where(head_changed, pos[:, 0], pos[:, 2])
        repl = np.where(head_changed, neg[:, 0], neg[:, 2])
        return self.entity_types[orig] == self.entity_types[repl]


def make_typed_tkg(
    n_entities: int = 200,
    n_types: int = 5,
    n_relations: int = 10,
    n_buckets: int = 20,
    n_facts: int = 5000,
    seed: int = 0,
    split=(0.8, 0.1, 0.1),
    neighbour_probs=(0.7, 0.2, 0.1),
) -> SyntheticTKG:
    rng = rng_stream(seed, "synthetic-kg")
    types = np.arange(n_entities) % n_types
    rng.shuffle(types)
    pos = rng.random((n_entities, 2))
    sig = np.stack([rng.integers(0, n_types, n_relations), rng.integers(0, n_types, n_relations)], axis=1)
    shift = rng.uniform(-0.3, 0.3, (n_relations, 2))
    drift = rng.uniform(-0.3, 0.3, (n_relations, 2))
    members = [np.flatnonzero(types == k) for k in range(n_types)]
    probs = np.asarray(neighbour_probs, dtype=np.float64)
    probs = probs / probs.sum()

    facts: dict[tuple[int, int, int, int], None] = {}
    guard = 0
    while len(facts) < n_facts:
        guard += 1
        if guard > 50 * n_facts:
            raise RuntimeError("could not draw enough distinct facts; KG too small")
        p = int(rng.integers(n_relations))
        heads = members[sig[p, 0]]
        tails = members[sig[p, 1]]
        s = int(heads[rng.integers(heads.size)])
        t = int(rng.integers(n_buckets))
        target = pos[s] + shift[p] + drift[p] * (t / max(n_buckets - 1, 1))
        dist = np.linalg.norm(pos[tails] - target, axis=1)
        order = tails[np.argsort(dist, kind="stable")]
        o = int(order[rng.choice(min(probs.size, order.size), p=probs[: order.size] / probs[: order.size].sum())])
        if o == s:
            continue
        facts.setdefault((s, p, o, t))

    quads = np.array(list(facts), dtype=np.int64)
    quads = quads[rng.permutation(len(quads))]
    n_train = int(round(split[0] * len(quads)))
    n_valid = int(round(split[1] * len(quads)))
    return SyntheticTKG(
        train=quads[:n_train],
        valid=quads[n_train:n_train + n_valid],
        test=quads[n_train + n_valid:],
        entity_types=types,
        signatures=sig,
        n_entities=n_entities,
        n_relations=n_relations,
        n_buckets=n_buckets,
    )
