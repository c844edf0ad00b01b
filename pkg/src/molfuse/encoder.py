"""Continuous-filter message-passing geometry encoder.

Node states start as one-hot element embeddings; each iteration generates a
per-edge filter from the RBF-expanded distance, modulates the source node
state with it, aggregates messages by summation, and applies a residual
atom update. Sum pooling over nodes yields the fixed-size embedding, which
makes the encoder additive over disconnected components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graphs import GraphBatch, MoleculeGraph, batch_graphs


class EmptyGraphError(Exception):
    """Pooling over zero nodes is undefined."""


@dataclass(frozen=True)
class EncoderConfig:
    n_hidden: int = 128   # node feature width
    n_rbf: int = 50       # distance basis size, must match the graph builder
    n_iterations: int = 3

    def __post_init__(self):
        if self.n_hidden < 1 or self.n_rbf < 1 or self.n_iterations < 0:
            raise ValueError(f"invalid encoder config {self}")


class EncoderParams:
    """Learnable state: the element embedding plus per-iteration filter and
    update networks (filter: K -> n -> n with shifted softplus after each
    layer; update: n -> n -> n with shifted softplus between)."""

    def __init__(self, config: EncoderConfig, tensors: dict):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: EncoderConfig, seed: int = 0) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        n, k = config.n_hidden, config.n_rbf

        def dense(rows, cols):
            return ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols)), requires_grad=True)

        def bias(cols):
            return ad.Tensor(np.zeros(cols), requires_grad=True)

        tensors = {"atom_embed": dense(5, n)}
        for t in range(config.n_iterations):
            tensors[f"iter{t}.filter_w1"] = dense(k, n)
            tensors[f"iter{t}.filter_b1"] = bias(n)
            tensors[f"iter{t}.filter_w2"] = dense(n, n)
            tensors[f"iter{t}.filter_b2"] = bias(n)
            tensors[f"iter{t}.update_w1"] = dense(n, n)
            tensors[f"iter{t}.update_b1"] = bias(n)
            tensors[f"iter{t}.update_w2"] = dense(n, n)
            tensors[f"iter{t}.update_b2"] = bias(n)
        return cls(config, tensors)

    def named_params(self):
        return self.tensors.items()

    def n_parameters(self) -> int:
        return sum(t.data.size for _, t in self.named_params())


def _interactions(h: ad.Tensor, src, dst, rbf: ad.Tensor, params: EncoderParams) -> ad.Tensor:
    n_nodes = h.data.shape[0]
    p = params.tensors
    for t in range(params.config.n_iterations):
        w = ad.shifted_softplus(ad.add(ad.matmul(rbf, p[f"iter{t}.filter_w1"]), p[f"iter{t}.filter_b1"]))
        w = ad.shifted_softplus(ad.add(ad.matmul(w, p[f"iter{t}.filter_w2"]), p[f"iter{t}.filter_b2"]))
        messages = ad.mul(w, ad.gather_rows(h, src))
        agg = ad.scatter_sum(messages, dst, n_nodes)
        u = ad.shifted_softplus(ad.add(ad.matmul(agg, p[f"iter{t}.update_w1"]), p[f"iter{t}.update_b1"]))
        u = ad.add(ad.matmul(u, p[f"iter{t}.update_w2"]), p[f"iter{t}.update_b2"])
        h = ad.add(h, u)
    return h


def node_states(graph: MoleculeGraph, params: EncoderParams) -> ad.Tensor:
    """Final per-node features h^(T) for one molecule."""
    if graph.edge_rbf.shape[1] != params.config.n_rbf:
        raise ad.ShapeError(
            f"graph carries {graph.edge_rbf.shape[1]} RBF features but encoder expects {params.config.n_rbf}"
        )
    h = ad.matmul(ad.Tensor(graph.node_feats), params.tensors["atom_embed"])
    if graph.n_edges:
        src, dst = graph.edges[:, 1], graph.edges[:, 0]
    else:
        src = dst = np.zeros(0, dtype=np.int64)
    return _interactions(h, src, dst, ad.Tensor(graph.edge_rbf), params)


def pool(node_feats: ad.Tensor) -> ad.Tensor:
    """Sum pooling over nodes (column-wise)."""
    if node_feats.data.shape[0] == 0:
        raise EmptyGraphError("cannot pool an empty graph")
    return ad.sum_rows(node_feats)


def encode(graph: MoleculeGraph, params: EncoderParams) -> ad.Tensor:
    """Fixed-size geometry embedding g (length n) for one molecule."""
    return pool(node_states(graph, params))


def encode_batch(batch: GraphBatch, params: EncoderParams) -> ad.Tensor:
    """Geometry embeddings for a disjoint-union batch, one row per graph."""
    if batch.n_nodes == 0:
        raise EmptyGraphError("cannot encode an empty batch")
    h = ad.matmul(ad.Tensor(batch.node_feats), params.tensors["atom_embed"])
    h = _interactions(h, batch.edge_src, batch.edge_dst, ad.Tensor(batch.edge_rbf), params)
    return ad.scatter_sum(h, batch.node_graph, batch.n_graphs)


def encode_molecules(graphs, params: EncoderParams) -> ad.Tensor:
    return encode_batch(batch_graphs(list(graphs)), params)
