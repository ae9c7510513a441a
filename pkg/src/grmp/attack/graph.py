"""Parameter-correlation graph over blocks of model coordinates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from ..numerics import column_cosine_matrix


@dataclass
class ParamGraph:
    """Observed benign models and the cosine graph between parameter blocks.

    ``features`` is ``I x M`` (one observed model per row); ``node_features``
    is ``I x nodes`` with each column the block average of ``features``;
    ``adjacency[m, m']`` is the cosine similarity of node columns ``m`` and
    ``m'`` across agents.  ``blocks[k] = (start, stop)`` maps node ``k`` back
    to its coordinate range.
    """

    features: np.ndarray
    node_features: np.ndarray
    adjacency: np.ndarray
    blocks: list[tuple[int, int]]

    @property
    def n_nodes(self) -> int:
        return len(self.blocks)

    def expand(self, node_matrix: np.ndarray) -> np.ndarray:
        """Broadcast an ``r x nodes`` matrix to ``r x M`` by repeating each block value."""
        node_matrix = np.atleast_2d(node_matrix)
        sizes = [b - a for a, b in self.blocks]
        return np.repeat(node_matrix, sizes, axis=1)


def block_ranges(m: int, nodes: int) -> list[tuple[int, int]]:
    if not 1 <= nodes <= m:
        raise InputError(f"node count {nodes} must lie in [1, {m}]")
    edges = np.linspace(0, m, nodes + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def build_graph(uploads, nodes: int) -> ParamGraph:
    f = np.asarray(uploads, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise InputError("build_graph needs at least 2 observed models")
    blocks = block_ranges(f.shape[1], nodes)
    node_f = np.stack([f[:, a:b].mean(axis=1) for a, b in blocks], axis=1)
    return ParamGraph(f, node_f, column_cosine_matrix(node_f), blocks)
