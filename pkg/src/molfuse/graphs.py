"""Molecular graph construction: one-hot element nodes, cutoff-radius edge
lists, and Gaussian radial-basis expansion of interatomic distances.

Distances are computed from relative coordinates only, so every derived
quantity is translation invariant by construction and rotation invariant up
to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qm9 import QM9_ELEMENTS, Molecule

MIN_PAIR_DISTANCE = 1e-3  # Angstrom; closer pairs are a geometry defect


class GeometryError(Exception):
    """Coincident (or near-coincident) atoms; names the offending pair."""


@dataclass(frozen=True)
class RbfConfig:
    """Gaussian basis over [0, cutoff]: component k is exp(-gamma (d - c_k)^2)."""

    cutoff: float = 5.0     # Angstrom
    n_centers: int = 50
    gamma: float = 10.0     # Angstrom^-2

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValueError(f"cutoff must be positive, got {self.cutoff}")
        if self.n_centers < 2:
            raise ValueError(f"need at least 2 RBF centers, got {self.n_centers}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(0.0, self.cutoff, self.n_centers)


@dataclass
class MoleculeGraph:
    """Geometry rendered for message passing."""

    node_feats: np.ndarray   # N x 5 one-hot over H/C/N/O/F
    edges: np.ndarray        # E x 2 ordered pairs (i, j), i != j, symmetric as a set
    edge_dist: np.ndarray    # E distances, Angstrom
    edge_rbf: np.ndarray     # E x K basis values in (0, 1]

    @property
    def n_nodes(self) -> int:
        return self.node_feats.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]


def rbf_expand(d: float, cfg: RbfConfig) -> np.ndarray:
    """Expand one distance into the K Gaussian basis responses."""
    if not (0.0 < d <= cfg.cutoff):
        raise ValueError(f"distance {d} outside (0, {cfg.cutoff}]")
    return np.exp(-cfg.gamma * (d - cfg.centers) ** 2)


def one_hot_elements(elements) -> np.ndarray:
    feats = np.zeros((len(elements), len(QM9_ELEMENTS)), dtype=np.float64)
    for i, el in enumerate(elements):
        feats[i, QM9_ELEMENTS.index(el)] = 1.0
    return feats


def build_graph(m: Molecule, cfg: RbfConfig = RbfConfig()) -> MoleculeGraph:
    """All ordered pairs within the cutoff, with RBF-expanded distances.

    Edge order is row-major in (i, j), which fixes downstream summation
    order; (i, j) is present iff (j, i) is.
    """
    coords = np.asarray(m.coords, dtype=np.float64)
    n = coords.shape[0]
    rel = coords[None, :, :] - coords[:, None, :]   # rel[i, j] = r_j - r_i
    dist = np.sqrt((rel * rel).sum(axis=-1))

    off_diag = ~np.eye(n, dtype=bool)
    too_close = (dist < MIN_PAIR_DISTANCE) & off_diag
    if too_close.any():
        i, j = np.argwhere(too_close)[0]
        raise GeometryError(
            f"atoms {i} and {j} are {dist[i, j]:.2e} Angstrom apart (< {MIN_PAIR_DISTANCE})"
        )

    mask = (dist <= cfg.cutoff) & off_diag
    edges = np.argwhere(mask).astype(np.int64)  # row-major, i.e. sorted (i, j)
    d = dist[mask]
    rbf = np.exp(-cfg.gamma * (d[:, None] - cfg.centers[None, :]) ** 2)
    return MoleculeGraph(
        node_feats=one_hot_elements(m.elements),
        edges=edges,
        edge_dist=d,
        edge_rbf=rbf,
    )


@dataclass
class GraphBatch:
    """Disjoint union of graphs: one node/edge table with per-node graph ids,
    so a whole mini-batch runs through the encoder as a single pass."""

    node_feats: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_rbf: np.ndarray
    node_graph: np.ndarray   # graph id per node
    n_graphs: int

    @property
    def n_nodes(self) -> int:
        return self.node_feats.shape[0]


def batch_graphs(graphs) -> GraphBatch:
    feats, srcs, dsts, rbfs, owners = [], [], [], [], []
    offset = 0
    for gid, g in enumerate(graphs):
        feats.append(g.node_feats)
        if g.n_edges:
            # message flows source j -> target i along the ordered pair (i, j)
            dsts.append(g.edges[:, 0] + offset)
            srcs.append(g.edges[:, 1] + offset)
            rbfs.append(g.edge_rbf)
        owners.append(np.full(g.n_nodes, gid, dtype=np.int64))
        offset += g.n_nodes
    k = graphs[0].edge_rbf.shape[1] if graphs else 0
    return GraphBatch(
        node_feats=np.concatenate(feats) if feats else np.zeros((0, len(QM9_ELEMENTS))),
        edge_src=np.concatenate(srcs) if srcs else np.zeros(0, dtype=np.int64),
        edge_dst=np.concatenate(dsts) if dsts else np.zeros(0, dtype=np.int64),
        edge_rbf=np.concatenate(rbfs) if rbfs else np.zeros((0, k)),
        node_graph=np.concatenate(owners) if owners else np.zeros(0, dtype=np.int64),
        n_graphs=len(graphs),
    )
