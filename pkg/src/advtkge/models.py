"""Temporal KG embedding score functions with analytic gradients.

Each model maps entity ids (at a time bucket) to a flat representation row,
and scores ``(head_repr, relation_repr, time_repr, tail_repr)`` tuples.
Hard quadruples, soft entity mixtures and all-entity ranking all go through
the same representation-level score, so they agree exactly.

Supported tags:

==============  ==========================================================
ttranse         ||h + r + t - o||
hyte            ||P_t(h) + P_t(r) - P_t(o)||, P_t(x) = x - (w_t . x) w_t
de-transe       ||h_t + r - o_t|| with diachronic entities
de-distmult     sum(h_t * r * o_t)
de-simple       SimplE average of forward and inverse-relation products
                over diachronic head/tail role vectors
tero            ||h * e^{i theta_t} + r - conj(o * e^{i theta_t})||
==============  ==========================================================

Diachronic entities use ``a_t * sin(w * tau + b)`` on the first
``floor(gamma * d)`` coordinates and the static vector on the rest, where
``tau`` is the bucket index scaled to [0, 1].

TeRo is scored in its forward form only; complex vectors are stored as
``[real | imag]`` and the L1/L2 norm is taken over the 2d real coordinates.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .numerics import EmbeddingTable, coalesce_rows

DISTANCE_TAGS = ("ttranse", "hyte", "de-transe", "tero")
SIMILARITY_TAGS = ("de-distmult", "de-simple")
MODEL_TAGS = DISTANCE_TAGS + SIMILARITY_TAGS
TRANSLATIONAL_TAGS = ("ttranse", "hyte")

_ALIASES = {
    "ttranse": "ttranse",
    "hyte": "hyte",
    "de-transe": "de-transe",
    "de_transe": "de-transe",
    "detranse": "de-transe",
    "de-distmult": "de-distmult",
    "de_distmult": "de-distmult",
    "dedistmult": "de-distmult",
    "de-simple": "de-simple",
    "de_simple": "de-simple",
    "desimple": "de-simple",
    "tero": "tero",
}


def canonical_tag(tag: str) -> str:
    try:
        return _ALIASES[tag.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown model tag {tag!r}; expected one of {MODEL_TAGS}") from None


@dataclass(frozen=True)
class ModelKind:
    tag: str
    norm: str = "l1"
    de_fraction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tag", canonical_tag(self.tag))
        norm = self.norm.lower()
        if norm not in ("l1", "l2"):
            raise ValueError(f"norm must be 'l1' or 'l2', got {self.norm!r}")
        object.__setattr__(self, "norm", norm)
        if not 0.0 <= self.de_fraction <= 1.0:
            raise ValueError("de_fraction must lie in [0, 1]")

    @property
    def is_distance(self) -> bool:
        return self.tag in DISTANCE_TAGS

    @property
    def orientation(self) -> float:
        """Factor turning a score into a higher-is-more-real output."""
        return -1.0 if self.is_distance else 1.0

    def temporal_dims(self, dim: int) -> int:
        return int(math.floor(self.de_fraction * dim + 1e-9))


def _norm(res, p):
    if p == "l1":
        return np.abs(res).sum(axis=-1)
    return np.sqrt((res * res).sum(axis=-1))


def _norm_grad(res, p):
    if p == "l1":
        return np.sign(res)
    n = np.sqrt((res * res).sum(axis=-1, keepdims=True))
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(n > 0, res / np.where(n > 0, n, 1.0), 0.0)
    return g


def _check_ids(ids, bound, what):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= bound):
        raise IndexError(f"{what} id out of range [0, {bound})")
    return ids


class SparseGrad:
    """Row-sparse gradient accumulator keyed by table name."""

    def __init__(self):
        self.parts: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}

    def add(self, name, rows, grads):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        grads = np.asarray(grads, dtype=np.float64).reshape(rows.size, -1)
        self.parts.setdefault(name, []).append((rows, grads))

    def extend(self, items):
        for name, rows, grads in items:
            self.add(name, rows, grads)

    def coalesced(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        out = {}
        for name, chunks in self.parts.items():
            rows = np.concatenate([r for r, _ in chunks])
            grads = np.concatenate([g for _, g in chunks])
            out[name] = coalesce_rows(rows, grads)
        return out

    def dense(self, tables: dict[str, EmbeddingTable]) -> dict[str, np.ndarray]:
        out = {name: np.zeros_like(t.values) for name, t in tables.items()}
        for name, (rows, grads) in self.coalesced().items():
            out[name][rows] += grads
        return out


class TKGEModel:
    """Base class. Subclasses fill ``tables`` and the representation hooks."""

    time_dependent_entities = False
    # whether entity_vectors(ent, t) differs across buckets
    time_aware_vectors = False

    def __init__(self, kind: ModelKind, n_entities: int, n_relations: int, n_buckets: int, dim: int):
        self.kind = kind
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)
        self.n_buckets = int(n_buckets)
        self.dim = int(dim)
        self.tables: dict[str, EmbeddingTable] = {}

    # -- hooks -------------------------------------------------------------
    def entity_repr(self, ent, t):
        raise NotImplementedError

    def relation_repr(self, rel):
        raise NotImplementedError

    def time_repr(self, t):
        raise NotImplementedError

    def score_repr(self, h, r, tm, o):
        raise NotImplementedError

    def score_repr_grad(self, h, r, tm, o):
        raise NotImplementedError

    def entity_backward(self, ent, t, g):
        raise NotImplementedError

    def relation_backward(self, rel, g):
        raise NotImplementedError

    def time_backward(self, t, g):
        raise NotImplementedError

    # -- generic API -------------------------------------------------------
    @property
    def entity_width(self) -> int:
        return self.entity_repr(np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64)).shape[-1]

    def copy(self) -> "TKGEModel":
        return copy.deepcopy(self)

    def _split(self, quads):
        q = np.atleast_2d(np.asarray(quads, dtype=np.int64))
        s, p, o, t = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
        _check_ids(s, self.n_entities, "entity")
        _check_ids(o, self.n_entities, "entity")
        _check_ids(p, self.n_relations, "relation")
        _check_ids(t, self.n_buckets, "time bucket")
        return s, p, o, t

    def score(self, quads) -> np.ndarray:
        s, p, o, t = self._split(quads)
        return self.score_repr(self.entity_repr(s, t), self.relation_repr(p), self.time_repr(t), self.entity_repr(o, t))

    def d_output(self, quads) -> np.ndarray:
        return self.kind.orientation * self.score(quads)

    def _scatter_weights(self, cand, w):
        dense = np.zeros((cand.shape[0], self.n_entities))
        np.put_along_axis(dense, cand, w, axis=1)
        return dense

    def mix_entities(self, candidates, weights, t):
        """Weighted mixture of candidate representations, shape (n, width)."""
        cand = np.asarray(candidates, dtype=np.int64)
        _check_ids(cand, self.n_entities, "entity")
        w = np.asarray(weights, dtype=np.float64)
        if self.time_dependent_entities:
            reps = self.entity_repr(cand, np.broadcast_to(np.asarray(t)[:, None], cand.shape))
            return np.einsum("nk,nkw->nw", w, reps)
        table = self.entity_repr(np.arange(self.n_entities), np.zeros(self.n_entities, dtype=np.int64))
        return self._scatter_weights(cand, w) @ table

    def score_soft(self, quads, corrupt_head, candidates, weights) -> np.ndarray:
        """Score with the head (or tail) replaced by a soft entity mixture.

        ``corrupt_head`` is a bool per row; ``candidates``/``weights`` are
        (n, k) arrays. The replaced slot's original id is ignored.
        """
        s, p, o, t = self._split(quads)
        ch = np.broadcast_to(np.asarray(corrupt_head, dtype=bool), s.shape)[:, None]
        mix = self.mix_entities(candidates, weights, t)
        h = np.where(ch, mix, self.entity_repr(s, t))
        tail = np.where(ch, self.entity_repr(o, t), mix)
        return self.score_repr(h, self.relation_repr(p), self.time_repr(t), tail)

    def score_gradients(self, quads, upstream=None, soft=None):
        """Gradients of ``sum(upstream * score)``.

        Returns ``(SparseGrad, dweights)``; ``dweights`` is None for hard
        quadruples. ``soft`` is ``(corrupt_head, candidates, weights)``.
        """
        s, p, o, t = self._split(quads)
        n = s.size
        up = np.ones(n) if upstream is None else np.broadcast_to(np.asarray(upstream, dtype=np.float64), (n,))
        hr = self.entity_repr(s, t)
        orr = self.entity_repr(o, t)
        if soft is not None:
            corrupt_head, cand, w = soft
            ch = np.broadcast_to(np.asarray(corrupt_head, dtype=bool), (n,))
            mix = self.mix_entities(cand, w, t)
            hr = np.where(ch[:, None], mix, hr)
            orr = np.where(ch[:, None], orr, mix)
        dh, dr, dtm, do = self.score_repr_grad(hr, self.relation_repr(p), self.time_repr(t), orr)
        u = up[:, None]
        dh, dr, dtm, do = dh * u, dr * u, dtm * u, do * u
        grads = SparseGrad()
        grads.extend(self.relation_backward(p, dr))
        grads.extend(self.time_backward(t, dtm))
        dweights = None
        if soft is None:
            grads.extend(self.entity_backward(s, t, dh))
            grads.extend(self.entity_backward(o, t, do))
        else:
            dmix = np.where(ch[:, None], dh, do)
            fixed_ids = np.where(ch, o, s)
            fixed_grad = np.where(ch[:, None], do, dh)
            grads.extend(self.entity_backward(fixed_ids, t, fixed_grad))
            w = np.asarray(w, dtype=np.float64)
            cand = np.asarray(cand, dtype=np.int64)
            if self.time_dependent_entities:
                tt = np.broadcast_to(t[:, None], cand.shape)
                reps = self.entity_repr(cand, tt)
                dweights = np.einsum("nw,nkw->nk", dmix, reps)
                cg = (w[:, :, None] * dmix[:, None, :]).reshape(cand.size, -1)
                grads.extend(self.entity_backward(cand.ravel(), tt.ravel(), cg))
            else:
                ents = np.arange(self.n_entities)
                table = self.entity_repr(ents, np.zeros_like(ents))
                dweights = np.take_along_axis(dmix @ table.T, cand, axis=1)
                touched = np.unique(cand)
                cg = (self._scatter_weights(cand, w).T @ dmix)[touched]
                grads.extend(self.entity_backward(touched, np.zeros_like(touched), cg))
        return grads, dweights

    def score_all(self, quads, slot: str) -> np.ndarray:
        """Scores with every entity substituted into ``slot``; shape (n, |E|)."""
        s, p, o, t = self._split(quads)
        ents = np.arange(self.n_entities)
        if self.time_dependent_entities:
            allrep = self.entity_repr(np.broadcast_to(ents, (t.size, ents.size)), np.broadcast_to(t[:, None], (t.size, ents.size)))
        else:
            allrep = self.entity_repr(ents, np.zeros_like(ents))[None]
        r = self.relation_repr(p)[:, None]
        tm = self.time_repr(t)[:, None]
        if slot == "head":
            return self.score_repr(allrep, r, tm, self.entity_repr(o, t)[:, None])
        if slot == "tail":
            return self.score_repr(self.entity_repr(s, t)[:, None], r, tm, allrep)
        raise ValueError(f"slot must be 'head' or 'tail', got {slot!r}")

    def entity_vectors(self, ent, t=None) -> np.ndarray:
        """Entity representations, time-aware when the model has them."""
        ent = np.asarray(ent, dtype=np.int64)
        t = np.zeros_like(ent) if t is None else np.asarray(t, dtype=np.int64)
        return self.entity_repr(ent, t)

    # -- constraints ---------------------------------------------------------
    def normalize_constraints(self, rng: np.random.Generator | None = None):
        if self.kind.tag in TRANSLATIONAL_TAGS:
            e = self.tables["entity"].values
            norms = np.linalg.norm(e, axis=1)
            big = norms > 1.0
            e[big] /= norms[big, None]
        return self

    def clip_tables(self):
        """Tables subject to the weight-clipping constraint."""
        return list(self.tables)


class TTransE(TKGEModel):
    def __init__(self, kind, n_entities, n_relations, n_buckets, dim, rng):
        super().__init__(kind, n_entities, n_relations, n_buckets, dim)
        self.tables = {
            "entity": EmbeddingTable.uniform(n_entities, dim, rng),
            "relation": EmbeddingTable.uniform(n_relations, dim, rng),
            "time": EmbeddingTable.uniform(n_buckets, dim, rng),
        }

    def entity_repr(self, ent, t):
        return self.tables["entity"].values[ent]

    def relation_repr(self, rel):
        return self.tables["relation"].values[rel]

    def time_repr(self, t):
        return self.tables["time"].values[t]

    def score_repr(self, h, r, tm, o):
        return _norm(h + r + tm - o, self.kind.norm)

    def score_repr_grad(self, h, r, tm, o):
        u = _norm_grad(h + r + tm - o, self.kind.norm)
        return u, u, u, -u

    def entity_backward(self, ent, t, g):
        return [("entity", ent, g)]

    def relation_backward(self, rel, g):
        return [("relation", rel, g)]

    def time_backward(self, t, g):
        return [("time", t, g)]


class HyTE(TTransE):
    def __init__(self, kind, n_entities, n_relations, n_buckets, dim, rng):
        TKGEModel.__init__(self, kind, n_entities, n_relations, n_buckets, dim)
        self._init_rng = rng
        self.tables = {
            "entity": EmbeddingTable.uniform(n_entities, dim, rng),
            "relation": EmbeddingTable.uniform(n_relations, dim, rng),
            "normal": EmbeddingTable.uniform(n_buckets, dim, rng),
        }
        self.normalize_constraints()

    def time_repr(self, t):
        return self.tables["normal"].values[t]

    def score_repr(self, h, r, tm, o):
        v = h + r - o
        res = v - (tm * v).sum(-1, keepdims=True) * tm
        return _norm(res, self.kind.norm)

    def score_repr_grad(self, h, r, tm, o):
        v = h + r - o
        wv = (tm * v).sum(-1, keepdims=True)
        u = _norm_grad(v - wv * tm, self.kind.norm)
        wu = (tm * u).sum(-1, keepdims=True)
        pu = u - wu * tm
        dw = -(wu * v + wv * u)
        return pu, pu, dw, -pu

    def time_backward(self, t, g):
        return [("normal", t, g)]

    def normalize_constraints(self, rng=None):
        super().normalize_constraints(rng)
        w = self.tables["normal"].values
        norms = np.linalg.norm(w, axis=1)
        dead = norms == 0
        if dead.any():
            rng = rng or self._init_rng
            bound = 6.0 / math.sqrt(self.dim)
            w[dead] = rng.uniform(-bound, bound, size=(int(dead.sum()), self.dim))
            norms = np.linalg.norm(w, axis=1)
        # leave rows already unit to rounding alone so the call is idempotent
        off = np.abs(norms - 1.0) > 1e-12
        w[off] /= norms[off, None]
        return self

    def clip_tables(self):
        # unit normals already bound the projection; clipping would undo that
        return ["entity", "relation"]


class Diachronic(TKGEModel):
    """Shared machinery for the DE family (``blocks`` role vectors per entity)."""

    time_dependent_entities = True
    time_aware_vectors = True
    blocks = 1

    def __init__(self, kind, n_entities, n_relations, n_buckets, dim, rng):
        super().__init__(kind, n_entities, n_relations, n_buckets, dim)
        k = kind.temporal_dims(dim)
        self.k = k
        b = self.blocks
        bound = 6.0 / math.sqrt(dim)
        self.tables = {
            "static": EmbeddingTable.uniform(n_entities, b * dim, rng, bound),
            "amplitude": EmbeddingTable.uniform(n_entities, b * k, rng, bound),
            "frequency": EmbeddingTable.uniform(n_entities, b * k, rng, bound),
            "phase": EmbeddingTable.uniform(n_entities, b * k, rng, bound),
        }
        self._init_relations(rng)

    def _init_relations(self, rng):
        self.tables["relation"] = EmbeddingTable.uniform(self.n_relations, self.dim, rng)

    def time_scalar(self, t):
        return np.asarray(t, dtype=np.float64) / max(self.n_buckets - 1, 1)

    def entity_repr(self, ent, t):
        d, k = self.dim, self.k
        tau = self.time_scalar(t)[..., None]
        static = self.tables["static"].values[ent]
        amp = self.tables["amplitude"].values[ent]
        z = self.tables["frequency"].values[ent] * tau + self.tables["phase"].values[ent]
        temporal = amp * np.sin(z)
        parts = []
        for b in range(self.blocks):
            parts.append(temporal[..., b * k:(b + 1) * k])
            parts.append(static[..., b * d + k:(b + 1) * d])
        return np.concatenate(parts, axis=-1)

    def entity_backward(self, ent, t, g):
        d, k = self.dim, self.k
        tau = self.time_scalar(t)[..., None]
        amp = self.tables["amplitude"].values[ent]
        z = self.tables["frequency"].values[ent] * tau + self.tables["phase"].values[ent]
        g_static = np.zeros(g.shape[:-1] + (self.blocks * d,))
        g_temp = np.empty(g.shape[:-1] + (self.blocks * k,))
        for b in range(self.blocks):
            g_temp[..., b * k:(b + 1) * k] = g[..., b * d:b * d + k]
            g_static[..., b * d + k:(b + 1) * d] = g[..., b * d + k:(b + 1) * d]
        out = [("static", ent, g_static)]
        if k:
            dz = g_temp * amp * np.cos(z)
            out += [
                ("amplitude", ent, g_temp * np.sin(z)),
                ("frequency", ent, dz * tau),
                ("phase", ent, dz),
            ]
        return out

    def relation_repr(self, rel):
        return self.tables["relation"].values[rel]

    def relation_backward(self, rel, g):
        return [("relation", rel, g)]

    def time_repr(self, t):
        return np.zeros(np.shape(t) + (0,))

    def time_backward(self, t, g):
        return []


class DETransE(Diachronic):
    def score_repr(self, h, r, tm, o):
        return _norm(h + r - o, self.kind.norm)

    def score_repr_grad(self, h, r, tm, o):
        u = _norm_grad(h + r - o, self.kind.norm)
        dtm = np.zeros(u.shape[:-1] + (0,))
        return u, u, dtm, -u


class DEDistMult(Diachronic):
    def score_repr(self, h, r, tm, o):
        return (h * r * o).sum(-1)

    def score_repr_grad(self, h, r, tm, o):
        return r * o, h * o, np.zeros(h.shape[:-1] + (0,)), h * r


class DESimplE(Diachronic):
    """Entity rows are ``[head role | tail role]``; relations ``[forward | inverse]``."""

    blocks = 2

    def _init_relations(self, rng):
        self.tables["relation"] = EmbeddingTable.uniform(self.n_relations, 2 * self.dim, rng, 6.0 / math.sqrt(self.dim))

    def score_repr(self, h, r, tm, o):
        d = self.dim
        hh, ht = h[..., :d], h[..., d:]
        oh, ot = o[..., :d], o[..., d:]
        rf, ri = r[..., :d], r[..., d:]
        return 0.5 * ((hh * rf * ot).sum(-1) + (oh * ri * ht).sum(-1))

    def score_repr_grad(self, h, r, tm, o):
        d = self.dim
        hh, ht = h[..., :d], h[..., d:]
        oh, ot = o[..., :d], o[..., d:]
        rf, ri = r[..., :d], r[..., d:]
        dh = 0.5 * np.concatenate([rf * ot, oh * ri], axis=-1)
        do = 0.5 * np.concatenate([ri * ht, hh * rf], axis=-1)
        dr = 0.5 * np.concatenate([hh * ot, oh * ht], axis=-1)
        return dh, dr, np.zeros(h.shape[:-1] + (0,)), do


class TeRo(TKGEModel):
    time_aware_vectors = True

    def __init__(self, kind, n_entities, n_relations, n_buckets, dim, rng):
        super().__init__(kind, n_entities, n_relations, n_buckets, dim)
        bound = 6.0 / math.sqrt(dim)
        self.tables = {
            "entity": EmbeddingTable.uniform(n_entities, 2 * dim, rng, bound),
            "relation": EmbeddingTable.uniform(n_relations, 2 * dim, rng, bound),
            "angle": EmbeddingTable.uniform(n_buckets, dim, rng, bound),
        }

    def entity_repr(self, ent, t):
        return self.tables["entity"].values[ent]

    def relation_repr(self, rel):
        return self.tables["relation"].values[rel]

    def time_repr(self, t):
        return self.tables["angle"].values[t]

    def _residual(self, h, r, tm, o):
        d = self.dim
        a, b = h[..., :d], h[..., d:]
        x, y = o[..., :d], o[..., d:]
        c, s = np.cos(tm), np.sin(tm)
        re = a * c - b * s + r[..., :d] - (x * c - y * s)
        im = a * s + b * c + r[..., d:] + (x * s + y * c)
        return a, b, x, y, c, s, re, im

    def score_repr(self, h, r, tm, o):
        *_, re, im = self._residual(h, r, tm, o)
        return _norm(np.concatenate(np.broadcast_arrays(re, im), axis=-1), self.kind.norm)

    def score_repr_grad(self, h, r, tm, o):
        d = self.dim
        a, b, x, y, c, s, re, im = self._residual(h, r, tm, o)
        u = _norm_grad(np.concatenate([re, im], axis=-1), self.kind.norm)
        ur, ui = u[..., :d], u[..., d:]
        dh = np.concatenate([ur * c + ui * s, -ur * s + ui * c], axis=-1)
        do = np.concatenate([-ur * c + ui * s, ur * s + ui * c], axis=-1)
        dtheta = ur * (-a * s - b * c + x * s + y * c) + ui * (a * c - b * s + x * c - y * s)
        return dh, u, dtheta, do

    def entity_backward(self, ent, t, g):
        return [("entity", ent, g)]

    def relation_backward(self, rel, g):
        return [("relation", rel, g)]

    def time_backward(self, t, g):
        return [("angle", t, g)]

    def entity_vectors(self, ent, t=None) -> np.ndarray:
        """Static complex vectors, or rotated into bucket ``t`` when given."""
        e = self.tables["entity"].values[np.asarray(ent, dtype=np.int64)]
        if t is None:
            return e.copy()
        re, im = self.rotate(e[:, : self.dim], e[:, self.dim:], np.asarray(t, dtype=np.int64))
        return np.concatenate([re, im], axis=1)

    def rotate(self, z_re, z_im, t):
        """Apply the time rotation of bucket ``t`` to a complex vector."""
        theta = self.tables["angle"].values[t]
        c, s = np.cos(theta), np.sin(theta)
        return z_re * c - z_im * s, z_re * s + z_im * c


_CLASSES = {
    "ttranse": TTransE,
    "hyte": HyTE,
    "de-transe": DETransE,
    "de-distmult": DEDistMult,
    "de-simple": DESimplE,
    "tero": TeRo,
}


def build_model(kind: ModelKind, n_entities: int, n_relations: int, n_buckets: int, dim: int, rng) -> TKGEModel:
    return _CLASSES[kind.tag](kind, n_entities, n_relations, n_buckets, dim, rng)


def lipschitz_enforce(model: TKGEModel, c: float) -> TKGEModel:
    """Clamp every clipped discriminator table into [-c, c], in place."""
    if not c > 0:
        raise ValueError("clip bound must be positive")
    for name in model.clip_tables():
        np.clip(model.tables[name].values, -c, c, out=model.tables[name].values)
    return model
