"""Batched differentiable proving over vectors of ground goals.

The scalar engine in :mod:`ntp.prover` enumerates proof states one at a
time, which is ideal for inspection but far too slow for training.  Here
a whole batch of G ground goals advances through one structural
recursion.  Success scores live in arrays of shape (G, rows) where rows
counts the substitution rows alive on the current branch; unifying
against the fact table (or a group of same-shaped rules) appends a
candidate axis, K-max pruning trims it per goal at the same point the
scalar prover would, and a small array tape records every step so one
reverse sweep yields gradients for the embedding matrix.

The semantics mirror the scalar prover row for row:

* every symbol comparison reads one vocabulary-sized kernel matrix whose
  diagonal is forced to exactly 1.0, so identical symbols unify exactly;
* rebinding a bound variable to a different symbol kills just the rows
  where the values differ (the scalar prover drops the whole state; a
  dead row scores 0.0 and can never beat a live one, so scores agree);
* a non-ground rule is applied at most once per branch, tracked as a
  per-row bit set threaded through sibling body atoms;
* per-goal fact masking zeroes the masked fact's column at every
  unification site.

One deliberate deviation, score-preserving: candidates enumerate facts
before body rules (loaders here construct KBs in that order, so pruning
tie-breaks only differ on KBs built otherwise).

Goals must be ground; queries with variables belong to the scalar
engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .graph import DEFAULT_MU, EmbeddingMatrix
from .kb import KnowledgeBase, Var
from .prover import FLOOR

# A batched term is a constant symbol id, a variable (possibly an alias
# of another variable), or an int32 array broadcastable to (G, rows)
# holding per-row symbol ids with -1 marking still-unbound rows.
BTerm = Union[int, Var, np.ndarray]

UNBOUND = -1


def batch_unify(a: np.ndarray, b: np.ndarray, mu: float = DEFAULT_MU) -> np.ndarray:
    """Pairwise RBF kernel matrix between the rows of two matrices.

    Entry (n, m) is exp(-||a_n - b_m|| / (2 mu^2)).  Distances come from
    direct row differences, so identical rows score exactly 1.0 like the
    per-pair kernel.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"row dimensions differ: {a.shape} vs {b.shape}")
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return np.exp(-d / (2.0 * mu * mu))


class KernelCache:
    """All-pairs symbol kernel with a hand-derived backward pass.

    The diagonal is exactly 1.0 and receives no gradient; coincident
    off-diagonal rows get gradient 0, matching the scalar RBF convention
    at zero distance.  ``dk`` accumulates dLoss/dK during tape backward
    sweeps; :meth:`demb` converts it to embedding-row gradients.
    """

    def __init__(self, data: np.ndarray, mu: float = DEFAULT_MU):
        self.data = data
        self.mu = mu
        sq = np.einsum("ij,ij->i", data, data)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (data @ data.T)
        np.clip(d2, 0.0, None, out=d2)
        dist = np.sqrt(d2)
        np.fill_diagonal(dist, 0.0)
        self.dist = dist
        k = np.exp(-dist / (2.0 * mu * mu))
        np.fill_diagonal(k, 1.0)
        self.k = k
        self.dk = np.zeros_like(k)

    def demb(self) -> np.ndarray:
        """Embedding gradient implied by the accumulated ``dk``."""
        live = self.dist > 0.0
        dd = np.where(live, self.dk * self.k, 0.0) * (-1.0 / (2.0 * self.mu ** 2))
        w = (dd + dd.T) / np.where(live, self.dist, 1.0)
        return w.sum(axis=1)[:, None] * self.data - w @ self.data


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


_GATHER, _MIN, _RESHAPE, _SELECT, _CONCAT, _MAXPICK, _CONST = range(7)


class _Tape:
    """Reverse-mode tape over numpy arrays for one batched proof."""

    def __init__(self, cache: KernelCache):
        self.cache = cache
        self.vals: list = []
        self.ops: list = []

    def _push(self, kind: int, value: np.ndarray, aux) -> int:
        self.vals.append(value)
        self.ops.append((kind, aux))
        return len(self.vals) - 1

    def const(self, value: np.ndarray) -> int:
        return self._push(_CONST, value, None)

    def gather(self, ia, ib) -> int:
        """K[ia, ib] with index broadcasting; backward scatter-adds."""
        return self._push(_GATHER, self.cache.k[ia, ib], (ia, ib))

    def stack_min(self, inputs: list, shape: Optional[tuple] = None) -> int:
        """Elementwise min over (node-id-or-None, value) pairs.

        Values broadcast together (to ``shape`` if given, so the output
        keeps its candidate axis even when no input varies along it);
        ties route the adjoint to the first input attaining the min,
        like the scalar min node.
        """
        if shape is None:
            shape = np.broadcast_shapes(*(np.shape(v) for _, v in inputs))
        out = np.array(np.broadcast_to(inputs[0][1], shape), dtype=np.float64)
        for _, v in inputs[1:]:
            np.minimum(out, v, out=out)
        winner = np.full(shape, -1, dtype=np.int8)
        for i, (_, v) in enumerate(inputs):
            hit = (winner < 0) & (np.broadcast_to(v, shape) == out)
            winner[hit] = i
        aux = (winner, [(nid, np.shape(v)) for nid, v in inputs])
        return self._push(_MIN, out, aux)

    def reshape(self, nid: int, shape: tuple) -> int:
        old = self.vals[nid].shape
        return self._push(_RESHAPE, self.vals[nid].reshape(shape), (nid, old))

    def select(self, nid: int, idx: np.ndarray) -> int:
        value = np.take_along_axis(self.vals[nid], idx, axis=-1)
        return self._push(_SELECT, value, (nid, idx))

    def concat(self, nids: list) -> int:
        parts = [self.vals[n] for n in nids]
        sizes = [p.shape[-1] for p in parts]
        return self._push(_CONCAT, np.concatenate(parts, axis=-1), (nids, sizes))

    def max_pick(self, nid: int) -> int:
        """Per-goal max over the last axis of a (G, C) array; the first
        maximal candidate wins the whole adjoint."""
        parent = self.vals[nid]
        idx = np.argmax(parent, axis=-1)
        value = parent[np.arange(parent.shape[0]), idx]
        return self._push(_MAXPICK, value, (nid, idx))

    def backward(self, root: int, droot: np.ndarray) -> None:
        grads: list = [None] * len(self.vals)
        grads[root] = np.asarray(droot, dtype=np.float64)
        for nid in range(len(self.vals) - 1, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            kind, aux = self.ops[nid]
            if kind == _CONST:
                continue
            if kind == _GATHER:
                ia, ib = aux
                nz = g != 0.0
                if np.any(nz):
                    bia = np.broadcast_to(ia, g.shape)[nz]
                    bib = np.broadcast_to(ib, g.shape)[nz]
                    np.add.at(self.cache.dk, (bia, bib), g[nz])
            elif kind == _MIN:
                winner, inputs = aux
                for i, (pid, shape) in enumerate(inputs):
                    if pid is None:
                        continue
                    gi = _unbroadcast(np.where(winner == i, g, 0.0), shape)
                    _acc(grads, pid, gi)
            elif kind == _RESHAPE:
                pid, old = aux
                _acc(grads, pid, g.reshape(old))
            elif kind == _SELECT:
                pid, idx = aux
                # idx entries are distinct along the last axis, so a
                # plain scatter needs no accumulation
                buf = np.zeros_like(self.vals[pid])
                np.put_along_axis(buf, idx, np.broadcast_to(g, idx.shape),
                                  axis=-1)
                _acc(grads, pid, buf)
            elif kind == _CONCAT:
                nids, sizes = aux
                ofs = 0
                for pid, size in zip(nids, sizes):
                    _acc(grads, pid, g[..., ofs:ofs + size])
                    ofs += size
            elif kind == _MAXPICK:
                pid, idx = aux
                buf = np.zeros_like(self.vals[pid])
                buf[np.arange(len(idx)), idx] = g
                _acc(grads, pid, buf)
            grads[nid] = None


def _acc(grads: list, nid: int, g: np.ndarray) -> None:
    grads[nid] = g if grads[nid] is None else grads[nid] + g


# -- KB preprocessing ---------------------------------------------------------


@dataclass
class _FactTable:
    syms: np.ndarray      # (F, arity) int32 symbol ids
    ids: np.ndarray       # (F,) int64 rule ids
    col_of: dict          # rule id -> column


@dataclass
class _RuleGroup:
    """Same-shaped body rules unified as one block (one row per member)."""

    arity: int
    ids: np.ndarray       # (R,) int64 rule ids
    ground: bool
    bits: Optional[np.ndarray]   # (R,) int64 bit indexes, None for ground
    head: list            # per position: Var | int | (R,) int32 array
    body: list            # per atom, same encoding
    variables: list       # distinct skeleton Vars in first-occurrence order


def _plan(kb: KnowledgeBase) -> tuple:
    """Fact tables by arity plus rule groups, cached on the KB object."""
    cached = getattr(kb, "_batch_plan", None)
    if cached is not None and cached[0] == len(kb.rules):
        return cached[1], cached[2]
    tables: dict[int, _FactTable] = {}
    groups: list[_RuleGroup] = []
    bit_of: dict[int, int] = {}
    for rule in kb.rules:
        if not rule.ground:
            bit_of[rule.id] = len(bit_of)
    if len(bit_of) > 63:
        raise NotImplementedError(
            f"batched proving supports at most 63 non-ground rules, "
            f"got {len(bit_of)}"
        )
    for part in kb.partitions():
        members = [kb.rules[i] for i in part.rule_ids]
        first = members[0]
        if first.is_fact:
            arity = len(first.head)
            tables[arity] = _FactTable(
                syms=np.array([r.head for r in members], dtype=np.int32),
                ids=np.array([r.id for r in members], dtype=np.int64),
                col_of={r.id: c for c, r in enumerate(members)},
            )
            continue
        groups.append(_group_of(members, bit_of))
    kb._batch_plan = (len(kb.rules), tables, groups)
    return tables, groups


def _group_of(members: list, bit_of: dict) -> _RuleGroup:
    first = members[0]
    seen: dict[Var, None] = {}

    def encode(atom_of) -> list:
        out = []
        for p, t in enumerate(atom_of(first)):
            if isinstance(t, Var):
                seen.setdefault(t)
                out.append(t)
                continue
            vals = np.array([atom_of(r)[p] for r in members], dtype=np.int32)
            out.append(int(vals[0]) if (vals == vals[0]).all() else vals)
        return out

    head = encode(lambda r: r.head)
    body = [encode(lambda r, i=i: r.body[i]) for i in range(len(first.body))]
    bits = None
    if not first.ground:
        bits = np.array([bit_of[r.id] for r in members], dtype=np.int64)
    return _RuleGroup(
        arity=len(first.head),
        ids=np.array([r.id for r in members], dtype=np.int64),
        ground=first.ground,
        bits=bits,
        head=head,
        body=body,
        variables=list(seen),
    )


# -- proof states -------------------------------------------------------------


@dataclass
class _State:
    rows: int
    success: int                 # tape node, value (G, rows)
    bindings: dict               # Var -> BTerm, arrays materialized (G, rows)
    bits: np.ndarray             # (G, rows) int64 applied-rule bits


@dataclass
class _Block:
    """Candidates aligned to the upstream state's rows: (G, rows, count)."""

    count: int
    success: int                 # tape node, value (G, rows, count)
    bindings: dict = field(default_factory=dict)  # broadcastable to 3-d
    bits: Optional[np.ndarray] = None             # broadcastable to 3-d


def _as3(v) -> np.ndarray:
    """View a binding value along (goal, row, candidate) axes."""
    if isinstance(v, np.ndarray):
        return v[:, :, None] if v.ndim == 2 else v
    return np.full((1, 1, 1), int(v), dtype=np.int32)


def _substitute(terms: list, bindings: dict) -> list:
    """Single-level substitution, like the scalar prover: a variable is
    replaced only by a full value (or alias); rows still unbound keep the
    variable and unification resolves them in place."""
    out = []
    for t in terms:
        if isinstance(t, Var):
            b = bindings.get(t)
            if b is None or (isinstance(b, np.ndarray) and (b == UNBOUND).any()):
                out.append(t)
            else:
                out.append(b)
        else:
            out.append(t)
    return out


def _topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Indexes of the k best candidates along the last axis, ascending.

    Keeping index order restores enumeration order exactly like the
    scalar pruner; boundary ties pick an arbitrary equal-scored
    candidate, which never changes the surviving score set.
    """
    part = np.argpartition(-scores, k - 1, axis=-1)[..., :k]
    return np.sort(part, axis=-1)


class _BatchProver:
    def __init__(self, kb, tape, n_goals, kmax, mask_ids, stats):
        self.kb = kb
        self.tape = tape
        self.G = n_goals
        self.kmax = kmax
        self.mask_ids = mask_ids
        self.stats = stats
        self.tables, self.groups = _plan(kb)
        self._scope = 0

    # -- unification ----------------------------------------------------------

    def _lookup(self, var: Var, local: dict, state: _State):
        if var in local:
            return local[var]
        return state.bindings.get(var)

    def unify_facts(self, terms: list, state: _State) -> Optional[_Block]:
        table = self.tables.get(len(terms))
        if table is None:
            return None
        count = len(table.ids)
        self.stats["fact_comparisons"] += state.rows * count
        local: dict = {}
        up3 = self.tape.reshape(state.success, (self.G, state.rows, 1))
        mins = [(up3, self.tape.vals[up3])]
        death = None
        for p, tg in enumerate(terms):
            col = table.syms[:, p].reshape(1, 1, -1)
            if isinstance(tg, Var):
                v = self._lookup(tg, local, state)
                if v is None:
                    local[tg] = col
                    continue
                if isinstance(v, Var):
                    return None  # alias vs constants: symbolically different
                v3 = _as3(v)
                conflict = (v3 != UNBOUND) & (v3 != col)
                death = conflict if death is None else death | conflict
                local[tg] = np.where(v3 == UNBOUND, col, v3)
                continue
            if isinstance(tg, np.ndarray):
                nid = self.tape.gather(col, tg[:, :, None])
            else:
                nid = self.tape.gather(col, int(tg))
            mins.append((nid, self.tape.vals[nid]))
        alive = self._fact_mask(table)
        if alive is not None:
            mins.append((None, alive))
        if death is not None:
            mins.append((None, np.where(death, 0.0, 1.0)))
        return _Block(
            count=count,
            success=self.tape.stack_min(mins, (self.G, state.rows, count)),
            bindings=local,
            bits=state.bits[:, :, None],
        )

    def _fact_mask(self, table: _FactTable) -> Optional[np.ndarray]:
        if self.mask_ids is None:
            return None
        alive = None
        for g, fid in enumerate(self.mask_ids):
            col = table.col_of.get(int(fid))
            if col is not None:
                if alive is None:
                    alive = np.ones((self.G, 1, len(table.ids)))
                alive[g, 0, col] = 0.0
        return alive

    def unify_group(self, group: _RuleGroup, terms: list, state: _State,
                    depth: int, need: bool) -> list:
        n_rules = len(group.ids)
        self._scope += 1
        scope = self._scope
        ren = {v: Var(v.name, scope) for v in group.variables}
        local: dict = {}
        up3 = self.tape.reshape(state.success, (self.G, state.rows, 1))
        mins = [(up3, self.tape.vals[up3])]
        death = None
        for p, tg in enumerate(terms):
            th = group.head[p]
            if isinstance(th, Var):
                hv = ren[th]
                existing = local.get(hv)
                if existing is None:
                    local[hv] = tg
                    continue
                # repeated head variable: flat conflict check like the
                # scalar prover (symbol mismatch kills the row)
                if isinstance(existing, Var) or isinstance(tg, Var):
                    if existing is tg:
                        continue
                    return []
                conflict = _as3(existing) != _as3(tg)
                death = conflict if death is None else death | conflict
                continue
            h3 = th if isinstance(th, int) else th.reshape(1, 1, -1)
            if isinstance(tg, Var):
                v = self._lookup(tg, local, state)
                if v is None:
                    local[tg] = np.broadcast_to(
                        np.asarray(h3, dtype=np.int32).reshape(1, 1, -1),
                        (1, 1, n_rules),
                    )
                    continue
                if isinstance(v, Var):
                    return []
                v3 = _as3(v)
                conflict = (v3 != UNBOUND) & (v3 != h3)
                death = conflict if death is None else death | conflict
                local[tg] = np.where(v3 == UNBOUND, h3, v3)
                continue
            ib = tg[:, :, None] if isinstance(tg, np.ndarray) else int(tg)
            nid = self.tape.gather(h3, ib)
            mins.append((nid, self.tape.vals[nid]))
        if group.bits is not None:
            free = ((state.bits[:, :, None] >> group.bits) & 1) == 0
            if not free.all():
                mins.append((None, free.astype(np.float64)))
        alive = self._group_mask(group)
        if alive is not None:
            mins.append((None, alive))
        if death is not None:
            mins.append((None, np.where(death, 0.0, 1.0)))
        succ = self.tape.stack_min(
            mins, (self.G, state.rows, n_rules))  # (G, rows, R)
        inner = self._expand(state, group, local, succ)
        body = self._group_body(group, ren, inner)
        blocks = self.and_(body, depth, inner, need)
        # this application's scopes are private; bindings under them
        # cannot be referenced by any sibling or ancestor atom
        return [self._fold(b, state.rows, n_rules, inner, need,
                           drop_scope=scope)
                for b in blocks]

    def _group_mask(self, group: _RuleGroup) -> Optional[np.ndarray]:
        if self.mask_ids is None or not np.isin(group.ids, self.mask_ids).any():
            return None
        return (self.mask_ids[:, None, None] != group.ids).astype(np.float64)

    def _group_body(self, group: _RuleGroup, ren: dict, inner: _State) -> list:
        """Body atoms with skeleton variables renamed to this application's
        scope and per-member constant slots bound to fresh row arrays."""
        out = []
        n_rules = len(group.ids)
        for ai, atom in enumerate(group.body):
            enc = []
            for p, t in enumerate(atom):
                if isinstance(t, Var):
                    enc.append(ren[t])
                elif isinstance(t, np.ndarray):
                    slot = Var(f"_slot{ai}_{p}", self._scope)
                    inner.bindings[slot] = np.ascontiguousarray(
                        np.broadcast_to(
                            t, (self.G, inner.rows // n_rules, n_rules)
                        )
                    ).reshape(self.G, inner.rows)
                    enc.append(slot)
                else:
                    enc.append(t)
            out.append(enc)
        return out

    def _expand(self, state: _State, group: _RuleGroup,
                local: dict, succ: int) -> _State:
        """Append the rule axis to the state: rows -> rows * |group|."""
        G, rows, n_rules = self.G, state.rows, len(group.ids)
        new_rows = rows * n_rules

        def widen(v):
            if not isinstance(v, np.ndarray):
                return v
            full = np.broadcast_to(_as3(v), (G, rows, n_rules))
            return np.ascontiguousarray(full, dtype=np.int32).reshape(G, new_rows)

        bindings = {v: widen(b) for v, b in state.bindings.items()}
        for v, b in local.items():
            bindings[v] = widen(b)
        bits3 = np.broadcast_to(state.bits[:, :, None], (G, rows, n_rules))
        if group.bits is not None:
            bits3 = bits3 | (np.int64(1) << group.bits)
        return _State(
            rows=new_rows,
            success=self.tape.reshape(succ, (G, new_rows)),
            bindings=bindings,
            bits=np.ascontiguousarray(bits3).reshape(G, new_rows),
        )

    def _fold(self, block: _Block, rows: int, n_inner: int,
              rel: _State, need: bool,
              drop_scope: Optional[int] = None) -> _Block:
        """Fold an inner row axis back into the candidate axis:
        (G, rows*n_inner, C) -> (G, rows, n_inner*C).

        ``block`` is relative to ``rel`` (rel.rows == rows * n_inner);
        bindings the block does not override are taken from ``rel`` so
        values bound by earlier sibling atoms survive the fold.  Vars at
        or past ``drop_scope`` are private and omitted.
        """
        G = self.G
        count = n_inner * block.count
        succ = self.tape.reshape(block.success, (G, rows, count))
        bindings = {}
        bits = None
        if need:
            merged = dict(rel.bindings)
            merged.update(block.bindings)
            for v, b in merged.items():
                if drop_scope is not None and v.scope >= drop_scope:
                    continue
                if not isinstance(b, np.ndarray):
                    bindings[v] = b
                    continue
                full = np.broadcast_to(_as3(b), (G, rows * n_inner, block.count))
                bindings[v] = np.ascontiguousarray(
                    full, dtype=np.int32).reshape(G, rows, count)
            full = np.broadcast_to(block.bits, (G, rows * n_inner, block.count))
            bits = np.ascontiguousarray(full).reshape(G, rows, count)
        return _Block(count=count, success=succ, bindings=bindings, bits=bits)

    # -- recursion ------------------------------------------------------------

    def or_(self, terms: list, depth: int, state: _State,
            need: bool) -> list:
        if depth < 1:
            return []
        blocks = []
        fact_block = self.unify_facts(terms, state)
        if fact_block is not None:
            blocks.append(fact_block)
        for group in self.groups:
            if group.arity != len(terms):
                continue
            # a bodied rule needs depth for its own atoms; a bodiless
            # non-ground rule behaves like a fact pattern
            if group.body and depth < 2:
                continue
            blocks.extend(self.unify_group(group, terms, state, depth, need))
        return blocks

    def and_(self, body: list, depth: int, state: _State,
             need: bool) -> list:
        if depth <= 0:
            return []
        if not body:
            bits = None if state.bits is None else state.bits[:, :, None]
            succ = self.tape.reshape(state.success, (self.G, state.rows, 1))
            return [_Block(count=1, success=succ, bits=bits)]
        rest = body[1:]
        terms = _substitute(body[0], state.bindings)
        inner_need = bool(rest) or need
        cand = self.or_(terms, depth - 1, state, inner_need)
        if not cand:
            return []
        merged = self.merge(state, cand, inner_need)
        blocks = self.and_(rest, depth, merged, need)
        kept = merged.rows // state.rows
        return [self._fold(b, state.rows, kept, merged, need) for b in blocks]

    def merge(self, state: _State, blocks: list, need: bool) -> _State:
        """Concatenate candidate blocks, prune per (goal, row), and
        materialize bindings for the surviving candidates.  With ``need``
        false nothing downstream reads bindings or rule bits, so only the
        success scores are kept."""
        G, rows = self.G, state.rows
        succ = blocks[0].success if len(blocks) == 1 \
            else self.tape.concat([b.success for b in blocks])
        total = self.tape.vals[succ].shape[-1]
        idx = None
        kept = total
        if self.kmax is not None and total > self.kmax:
            kept = self.kmax
            idx = _topk(self.tape.vals[succ], kept)
            succ = self.tape.select(succ, idx)

        def gather(parts: list, fill, dtype) -> np.ndarray:
            cols = []
            for b, part in zip(blocks, parts):
                if part is None:
                    part = fill
                if isinstance(part, np.ndarray):
                    part = _as3(part)
                cols.append(np.broadcast_to(part, (G, rows, b.count)))
            cat = cols[0] if len(cols) == 1 \
                else np.concatenate([np.ascontiguousarray(c, dtype=dtype)
                                     for c in cols], axis=-1)
            cat = np.ascontiguousarray(cat, dtype=dtype)
            if idx is not None:
                cat = np.take_along_axis(cat, idx, axis=-1)
            return np.ascontiguousarray(cat).reshape(G, rows * kept)

        if not need:
            return _State(
                rows=rows * kept,
                success=self.tape.reshape(succ, (G, rows * kept)),
                bindings={},
                bits=None,
            )
        allvars = dict(state.bindings)
        for b in blocks:
            for v in b.bindings:
                allvars.setdefault(v)
        bindings = {}
        for v in allvars:
            reps = [b.bindings.get(v) for b in blocks]
            prior = state.bindings.get(v)
            present = [r for r in reps if r is not None]
            if not present:
                # untouched: row-invariant values pass through, arrays
                # widen along the kept axis
                if isinstance(prior, np.ndarray):
                    bindings[v] = gather(reps, prior, np.int32)
                else:
                    bindings[v] = prior
                continue
            if any(isinstance(r, Var) for r in present):
                # alias bindings are private to one rule application's
                # subtree and cannot be referenced past this merge
                if all(isinstance(r, Var) and r == present[0] for r in reps):
                    bindings[v] = present[0]
                continue
            fill = prior if prior is not None and not isinstance(prior, Var) \
                else UNBOUND
            bindings[v] = gather(reps, fill, np.int32)
        bits = gather([b.bits for b in blocks], state.bits, np.int64)
        return _State(
            rows=rows * kept,
            success=self.tape.reshape(succ, (G, rows * kept)),
            bindings=bindings,
            bits=bits,
        )

    def prove(self, goals: np.ndarray, depth: int) -> Optional[int]:
        terms = [np.ascontiguousarray(goals[:, p:p + 1], dtype=np.int32)
                 for p in range(goals.shape[1])]
        state = _State(
            rows=1,
            success=self.tape.const(np.ones((self.G, 1))),
            bindings={},
            bits=np.zeros((self.G, 1), dtype=np.int64),
        )
        blocks = self.or_(terms, depth, state, need=False)
        if not blocks:
            return None
        succ = blocks[0].success if len(blocks) == 1 \
            else self.tape.concat([b.success for b in blocks])
        total = self.tape.vals[succ].shape[-1]
        self.stats["candidates"] = total
        flat = self.tape.reshape(succ, (self.G, total))
        return self.tape.max_pick(flat)


@dataclass
class BatchResult:
    """Per-goal proof scores plus a one-shot gradient closure."""

    scores: np.ndarray                                # (G,)
    backward: Callable[[np.ndarray], np.ndarray]      # dscores -> demb
    stats: dict


def prove_batch(
    kb: KnowledgeBase,
    emb: EmbeddingMatrix,
    goals: np.ndarray,
    depth: int,
    *,
    kmax: Optional[int] = None,
    mask_ids: Optional[np.ndarray] = None,
    mu: float = DEFAULT_MU,
    cache: Optional[KernelCache] = None,
) -> BatchResult:
    """Prove G ground goals at once; scores match per-goal scalar proving.

    ``goals`` is a (G, arity) int array of symbol ids (position 0 the
    predicate).  ``mask_ids`` optionally gives each goal one KB fact id
    whose unification success is forced to 0 (-1 for none).  The returned
    ``backward`` maps dLoss/dscores to dLoss/d(embedding data); call it
    at most once per result.
    """
    goals = np.asarray(goals)
    if goals.ndim != 2:
        raise ValueError(f"goals must be 2-d (G, arity), got {goals.shape}")
    if kmax is not None and kmax < 1:
        raise ValueError(f"kmax must be >= 1, got {kmax}")
    if mask_ids is not None:
        mask_ids = np.asarray(mask_ids, dtype=np.int64)
        if mask_ids.shape != (len(goals),):
            raise ValueError("mask_ids must have one entry per goal")
        if not (mask_ids >= 0).any():
            mask_ids = None
    if cache is None:
        cache = KernelCache(emb.data, mu)
    tape = _Tape(cache)
    stats = {"fact_comparisons": 0, "candidates": 0}
    engine = _BatchProver(kb, tape, len(goals), kmax, mask_ids, stats)
    root = engine.prove(goals, depth)
    if root is None:
        scores = np.full(len(goals), FLOOR)

        def backward(dscores: np.ndarray) -> np.ndarray:
            return np.zeros_like(cache.data)
    else:
        scores = tape.vals[root]

        def backward(dscores: np.ndarray) -> np.ndarray:
            tape.backward(root, dscores)
            return cache.demb()

    return BatchResult(scores=scores, backward=backward, stats=stats)
