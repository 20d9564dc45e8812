"""Complex-valued bilinear link prediction over shared embeddings.

A binary fact (s, i, j) is scored as the sigmoid of the Hermitian
bilinear form between the three symbols' complex vectors.  The real
part of the form is asymmetric in (i, j) whenever imaginary parts are
nonzero, so one relation embedding can model both symmetric and
asymmetric relations.

Both entry points read the same matrix the prover unifies against: the
scalar :func:`score` builds one graph node (used for gradient checks
and one-off queries); :func:`complex_scores` evaluates a whole query
array with a closed-form backward pass for training.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .graph import EmbeddingMatrix, Graph, Node


def score(query: Sequence[int], emb: EmbeddingMatrix,
          graph: Graph = None) -> Node:
    """Differentiable score node for one (relation, arg1, arg2) query."""
    if emb.mode != "complex":
        raise ValueError("link prediction requires a complex-mode matrix")
    if graph is None:
        graph = Graph(emb)
    s, i, j = (graph.lookup(int(r)) for r in query)
    return graph.complex_score(s, i, j)


def complex_scores(emb: EmbeddingMatrix, queries: np.ndarray
                   ) -> tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """Score a (G, 3) query array; returns scores and a backward closure.

    The closure maps dLoss/dscores to dLoss/d(embedding data), with
    per-row contributions scatter-added so repeated symbols accumulate.
    """
    if emb.mode != "complex":
        raise ValueError("link prediction requires a complex-mode matrix")
    queries = np.asarray(queries, dtype=np.int64)
    if queries.ndim != 2 or queries.shape[1] != 3:
        raise ValueError(f"queries must be (G, 3), got {queries.shape}")
    k = emb.k
    data = emb.data
    sr, si = data[queries[:, 0], :k], data[queries[:, 0], k:]
    ir, ii = data[queries[:, 1], :k], data[queries[:, 1], k:]
    jr, ji = data[queries[:, 2], :k], data[queries[:, 2], k:]
    phi = np.einsum("gk,gk->g",
                    sr, ir * jr + ii * ji) + np.einsum("gk,gk->g",
                                                       si, ir * ji - ii * jr)
    scores = 1.0 / (1.0 + np.exp(-phi))

    def backward(dscores: np.ndarray) -> np.ndarray:
        dphi = (np.asarray(dscores) * scores * (1.0 - scores))[:, None]
        out = np.zeros_like(data)
        np.add.at(out[:, :k], queries[:, 0], dphi * (ir * jr + ii * ji))
        np.add.at(out[:, k:], queries[:, 0], dphi * (ir * ji - ii * jr))
        np.add.at(out[:, :k], queries[:, 1], dphi * (sr * jr + si * ji))
        np.add.at(out[:, k:], queries[:, 1], dphi * (sr * ji - si * jr))
        np.add.at(out[:, :k], queries[:, 2], dphi * (sr * ir - si * ii))
        np.add.at(out[:, k:], queries[:, 2], dphi * (sr * ii + si * ir))
        return out

    return scores, backward
