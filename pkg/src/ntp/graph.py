"""Scalar computation graphs over a shared embedding matrix.

Graphs are append-only tapes: every builder call evaluates its node eagerly
(so construction-time decisions like pruning can read values) and records it
for later re-evaluation (``forward``) and reverse-mode differentiation
(``backward``).  Two interchangeable tape evaluators exist: the compiled
``ntp._tape`` extension and the pure-Python ``ntp._tape_py`` fallback.  The
compiled one is used when importable; set ``NTP_BACKEND=python`` or
``NTP_BACKEND=compiled`` to force a choice.

All arithmetic is 64-bit.  Min/max route their full adjoint to the first
extremal input, and the RBF gradient at zero distance is defined as 0, so
repeated runs are bit-identical.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _tape_py
from .kb import Vocabulary

DEFAULT_MU = 1.0 / math.sqrt(2.0)
CLAMP_LO = 1e-10
CLAMP_HI = 1.0 - 1e-10

_tape_ext = None
_requested = os.environ.get("NTP_BACKEND", "auto").lower()
if _requested not in ("auto", "python", "compiled"):
    raise ImportError(f"NTP_BACKEND must be auto, python, or compiled, not {_requested!r}")
if _requested in ("auto", "compiled"):
    try:
        from . import _tape as _tape_ext  # type: ignore[no-redef]
    except ImportError:
        _tape_ext = None
        if _requested == "compiled":
            raise
BACKEND = "compiled" if _tape_ext is not None else "python"


class GraphNumericsError(RuntimeError):
    """A node value or adjoint became NaN/Inf; carries the node id."""

    def __init__(self, node_id: int, stage: str):
        self.node_id = node_id
        super().__init__(f"non-finite value at node {node_id} during {stage}")


class EmbeddingMatrix:
    """Trainable symbol embeddings, one row per vocabulary symbol.

    ``mode="real"`` rows have ``k`` entries; ``mode="complex"`` rows have
    ``2k`` entries, the first ``k`` the real part and the last ``k`` the
    imaginary part.  The RBF kernel always treats a row as one Euclidean
    vector, whichever the mode.
    """

    def __init__(self, data: np.ndarray, k: int, mode: str = "real",
                 trainable: Optional[np.ndarray] = None):
        if mode not in ("real", "complex"):
            raise ValueError(f"mode must be 'real' or 'complex', not {mode!r}")
        expected = k if mode == "real" else 2 * k
        if data.ndim != 2 or data.shape[1] != expected:
            raise ValueError(
                f"data shape {data.shape} does not match k={k}, mode={mode}"
            )
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.k = k
        self.mode = mode
        self.trainable = (
            np.ones(len(data), dtype=bool) if trainable is None
            else np.asarray(trainable, dtype=bool)
        )

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @classmethod
    def xavier(cls, n_rows: int, k: int, mode: str = "real",
               seed: int = 0) -> "EmbeddingMatrix":
        """Xavier-uniform init: each entry ~ U(-limit, limit), limit sqrt(3/dim)."""
        dim = k if mode == "real" else 2 * k
        limit = math.sqrt(3.0 / dim)
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-limit, limit, size=(n_rows, dim)), k, mode)

    def zero_grad(self) -> np.ndarray:
        return np.zeros_like(self.data)


def separated_embeddings(n_rows: int, distance: float = 20.0) -> EmbeddingMatrix:
    """Scaled one-hot rows at exact pairwise distance ``distance``.

    With the default kernel width every cross-symbol kernel is exp(-20),
    which pushes soft matches below any test tolerance: proofs behave
    symbolically.
    """
    scale = distance / math.sqrt(2.0)
    return EmbeddingMatrix(np.eye(n_rows) * scale, k=n_rows)


@dataclass(frozen=True)
class Node:
    """Handle to one tape entry."""

    graph: "Graph"
    id: int

    @property
    def value(self) -> float:
        return self.graph.values[self.id]

    def __repr__(self):
        return f"Node({self.id}, {self.graph.kind[self.id]}, {self.value:.6g})"


class Graph:
    """Append-only scalar tape bound to one embedding matrix."""

    def __init__(self, emb: EmbeddingMatrix):
        self.emb = emb
        self.kind: list[int] = []
        self.a: list[int] = []
        self.b: list[int] = []
        self.c: list[int] = []
        self.x0: list[float] = []
        self.x1: list[float] = []
        self.args: list[int] = []
        self.aofs: list[int] = []
        self.alen: list[int] = []
        self.values: list[float] = []
        self._lookup_shared: dict[int, int] = {}
        self._packed = None

    def __len__(self) -> int:
        return len(self.kind)

    def _append(self, kind: int, a: int = 0, b: int = 0, c: int = 0,
                x0: float = 0.0, x1: float = 0.0,
                arg_ids: Sequence[int] = (), value: float = 0.0) -> Node:
        if not math.isfinite(value):
            raise GraphNumericsError(len(self.kind), "construction")
        self.kind.append(kind)
        self.a.append(a)
        self.b.append(b)
        self.c.append(c)
        self.x0.append(x0)
        self.x1.append(x1)
        self.aofs.append(len(self.args))
        self.alen.append(len(arg_ids))
        self.args.extend(arg_ids)
        self.values.append(value)
        self._packed = None
        return Node(self, len(self.kind) - 1)

    # -- builders -----------------------------------------------------------

    def constant(self, value: float) -> Node:
        return self._append(_tape_py.CONST, x0=float(value), value=float(value))

    def lookup(self, row: int, shared: bool = True) -> Node:
        """Reference an embedding row.  Shared lookups are deduplicated;
        pass shared=False for a slot whose row will be reassigned."""
        if shared:
            cached = self._lookup_shared.get(row)
            if cached is not None:
                return Node(self, cached)
        node = self._append(_tape_py.LOOKUP, a=int(row))
        if shared:
            self._lookup_shared[row] = node.id
        return node

    def rbf(self, u: Node, v: Node, mu: float = DEFAULT_MU) -> Node:
        """exp(-||u - v|| / (2 mu^2)) over two looked-up rows."""
        self._expect(u, _tape_py.LOOKUP)
        self._expect(v, _tape_py.LOOKUP)
        val = _tape_py.rbf_value(
            self.emb.data[self.a[u.id]], self.emb.data[self.a[v.id]], mu
        )
        return self._append(_tape_py.RBF, a=u.id, b=v.id, x0=mu, value=val)

    def min_of(self, nodes: Sequence[Node]) -> Node:
        ids = self._ids(nodes)
        return self._append(_tape_py.MIN, arg_ids=ids,
                            value=min(self.values[i] for i in ids))

    def max_of(self, nodes: Sequence[Node]) -> Node:
        ids = self._ids(nodes)
        return self._append(_tape_py.MAX, arg_ids=ids,
                            value=max(self.values[i] for i in ids))

    def complex_score(self, s: Node, i: Node, j: Node) -> Node:
        """Sigmoid of the Hermitian bilinear relation score of rows s, i, j."""
        if self.emb.mode != "complex":
            raise ValueError("complex_score requires a complex-mode matrix")
        for n in (s, i, j):
            self._expect(n, _tape_py.LOOKUP)
        val = _tape_py.complex_value(
            self.emb.data[self.a[s.id]], self.emb.data[self.a[i.id]],
            self.emb.data[self.a[j.id]], self.emb.k,
        )
        return self._append(_tape_py.COMPLEX, a=s.id, b=i.id, c=j.id, value=val)

    def sigmoid(self, x: Node) -> Node:
        val = _tape_py.sigmoid_value(self.values[x.id])
        return self._append(_tape_py.SIGMOID, a=x.id, value=val)

    def clamp(self, x: Node, lo: float = CLAMP_LO, hi: float = CLAMP_HI) -> Node:
        """Clip into [lo, hi]; gradient is zero at and beyond the bounds."""
        val = min(max(self.values[x.id], lo), hi)
        return self._append(_tape_py.CLAMP, a=x.id, x0=lo, x1=hi, value=val)

    def neg_log(self, x: Node, complement: bool = False) -> Node:
        """-log(x), or -log(1-x) when complement is set."""
        val = _tape_py.neglog_value(self.values[x.id], complement)
        return self._append(_tape_py.NEGLOG, a=x.id, b=int(complement), value=val)

    def sum_of(self, nodes: Sequence[Node]) -> Node:
        ids = self._ids(nodes)
        return self._append(_tape_py.SUM, arg_ids=ids,
                            value=sum(self.values[i] for i in ids))

    def _ids(self, nodes: Sequence[Node]) -> list[int]:
        if not nodes:
            raise ValueError("n-ary node needs at least one input")
        return [n.id for n in nodes]

    def _expect(self, node: Node, kind: int) -> None:
        if self.kind[node.id] != kind:
            raise ValueError(f"node {node.id} is not of kind {kind}")

    # -- mutation of reusable inputs ----------------------------------------

    def set_const(self, node: Node, value: float) -> None:
        self._expect(node, _tape_py.CONST)
        self.x0[node.id] = float(value)
        self._packed = None

    def set_row(self, node: Node, row: int) -> None:
        self._expect(node, _tape_py.LOOKUP)
        self.a[node.id] = int(row)
        self._packed = None

    # -- evaluation ----------------------------------------------------------

    def _pack(self):
        if self._packed is None:
            self._packed = (
                np.asarray(self.kind, dtype=np.int32),
                np.asarray(self.a, dtype=np.int32),
                np.asarray(self.b, dtype=np.int32),
                np.asarray(self.c, dtype=np.int32),
                np.asarray(self.x0, dtype=np.float64),
                np.asarray(self.x1, dtype=np.float64),
                np.asarray(self.args, dtype=np.int32),
                np.asarray(self.aofs, dtype=np.int32),
                np.asarray(self.alen, dtype=np.int32),
            )
        return self._packed

    def forward(self, backend: Optional[str] = None) -> np.ndarray:
        """Re-evaluate every node; returns the value array."""
        use = backend or BACKEND
        if use == "compiled" and _tape_ext is None:
            raise RuntimeError("compiled tape backend is not available")
        if use == "compiled":
            bufs = self._pack()
            vals = np.empty(len(self.kind), dtype=np.float64)
            bad = _tape_ext.forward(*bufs, self.emb.data, self.emb.k, vals)
        else:
            vals = self.values
            bad = _tape_py.forward(
                self.kind, self.a, self.b, self.c, self.x0, self.x1,
                self.args, self.aofs, self.alen, self.emb.data, self.emb.k,
                vals,
            )
            vals = np.asarray(vals, dtype=np.float64)
        if bad >= 0:
            raise GraphNumericsError(bad, "forward")
        self.values = list(vals)
        return vals

    def backward(self, root: Node, backend: Optional[str] = None
                 ) -> tuple[np.ndarray, np.ndarray]:
        """Reverse sweep seeding d(root)=1.

        Returns (adjoints over nodes, gradients over embedding entries).
        """
        use = backend or BACKEND
        if use == "compiled" and _tape_ext is None:
            raise RuntimeError("compiled tape backend is not available")
        vals = np.asarray(self.values, dtype=np.float64)
        adjoints = np.zeros(len(self.kind), dtype=np.float64)
        pgrads = self.emb.zero_grad()
        if use == "compiled":
            bufs = self._pack()
            _tape_ext.backward(*bufs, self.emb.data, self.emb.k, vals,
                               root.id, adjoints, pgrads)
        else:
            _tape_py.backward(
                self.kind, self.a, self.b, self.c, self.x0, self.x1,
                self.args, self.aofs, self.alen, self.emb.data, self.emb.k,
                vals, root.id, adjoints, pgrads,
            )
        if not np.isfinite(adjoints).all():
            bad = int(np.flatnonzero(~np.isfinite(adjoints))[0])
            raise GraphNumericsError(bad, "backward")
        if not np.isfinite(pgrads).all():
            raise GraphNumericsError(-1, "backward (parameter gradients)")
        return adjoints, pgrads

    def touched_rows(self) -> list[int]:
        """Embedding rows referenced by any lookup node, ascending."""
        return sorted({self.a[i] for i, kd in enumerate(self.kind)
                       if kd == _tape_py.LOOKUP})

    def near_tie(self, tol: float) -> bool:
        """True when some min/max node has a non-winning input within tol
        of the winner, making the gradient ill-defined under perturbation."""
        for i, kd in enumerate(self.kind):
            if kd not in (_tape_py.MIN, _tape_py.MAX):
                continue
            ofs, n = self.aofs[i], self.alen[i]
            vals = [self.values[self.args[ofs + t]] for t in range(n)]
            best = min(vals) if kd == _tape_py.MIN else max(vals)
            close = sum(1 for v in vals if abs(v - best) <= tol)
            if close > 1:
                return True
        return False


@dataclass
class FiniteDiffReport:
    """Central-difference comparison of backward() at selected entries."""

    max_rel_err: float
    entries: list = field(default_factory=list)  # (row, col, analytic, numeric, err)
    tie_detected: bool = False
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.tie_detected or self.max_rel_err <= self.tol


def finite_diff_check(
    graph: Graph,
    root: Node,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
    backend: Optional[str] = None,
) -> FiniteDiffReport:
    """Compare analytic parameter gradients against central differences.

    Checks every embedding entry the graph touches (or a seeded sample of
    ``max_entries``).  Relative error is |ad - fd| / max(1, |fd|).  Graphs
    sitting at a min/max tie are flagged instead of failed, since the
    one-sided derivative is not what central differences measure there.
    """
    graph.forward(backend=backend)
    tie = graph.near_tie(tol=20.0 * h)
    _, pgrads = graph.backward(root, backend=backend)

    entries = [(r, cmn) for r in graph.touched_rows()
               for cmn in range(graph.emb.dim)]
    if max_entries is not None and len(entries) > max_entries:
        rng = np.random.default_rng(seed)
        keep = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[i] for i in sorted(keep)]

    data = graph.emb.data
    out = []
    max_err = 0.0
    for row, col in entries:
        orig = data[row, col]
        data[row, col] = orig + h
        f_plus = graph.forward(backend=backend)[root.id]
        data[row, col] = orig - h
        f_minus = graph.forward(backend=backend)[root.id]
        data[row, col] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = pgrads[row, col]
        err = abs(analytic - numeric) / max(1.0, abs(numeric))
        out.append((row, col, analytic, numeric, err))
        max_err = max(max_err, err)
    graph.forward(backend=backend)
    return FiniteDiffReport(max_rel_err=max_err, entries=out,
                            tie_detected=tie, tol=tol)


def make_vocab_embeddings(
    vocab: Vocabulary, k: int, mode: str = "real", seed: int = 0
) -> EmbeddingMatrix:
    """Xavier-initialized matrix with one row per vocabulary symbol."""
    return EmbeddingMatrix.xavier(len(vocab), k, mode=mode, seed=seed)
