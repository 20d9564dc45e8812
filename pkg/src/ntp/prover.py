"""Differentiable backward chaining over a knowledge base.

Proving builds a scalar graph on the fly: every symbol comparison adds an
RBF kernel node, every unification takes a running min, and the final goal
score is the max over all proof states.  Bindings are kept alongside, so a
query with variables also yields answers.

Conventions that matter (and that the symbolic oracle mirrors exactly):

* Depth counts unification levels: at depth 0 nothing succeeds, depth 1
  proves facts only, depth d allows a rule whose body is proven at d-1.
* A non-ground rule is never applied twice on one branch; the applied set
  travels with the proof state, including through earlier body atoms.
* Binding an already-bound variable to a symbolically different term fails
  the branch outright (a flat check; no chain walking).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .graph import DEFAULT_MU, EmbeddingMatrix, Graph, Node
from .kb import Atom, KnowledgeBase, Rule, Var, render_atom, render_rule

FLOOR = 1e-10


@dataclass(frozen=True)
class TraceStep:
    """One unification: which clause, what got bound, what got compared."""

    rule_id: int
    masked: bool
    bindings: tuple  # ((Var, Term), ...)
    kernels: tuple   # ((h_term, g_term, node_id | None), ...); None = exact match


@dataclass
class ProofState:
    """A live branch of the proof search."""

    psi: dict
    success: Node
    applied: frozenset
    trace: tuple = ()


@dataclass
class ProofResult:
    """Aggregated outcome of proving one goal."""

    goal: Atom
    depth: int
    score: float
    node: Node
    state: Optional[ProofState]
    states: list
    graph: Graph

    @property
    def n_states(self) -> int:
        return len(self.states)

    def answers(self) -> dict:
        """Goal-variable bindings of the winning state, chains resolved."""
        if self.state is None:
            return {}
        return {
            t: resolve(t, self.state.psi)
            for t in self.goal if isinstance(t, Var)
        }


def substitute(atom: Atom, psi: dict) -> Atom:
    """Replace bound variables by their (single-level) bindings."""
    return tuple(psi.get(t, t) if isinstance(t, Var) else t for t in atom)


def resolve(term, psi: dict):
    """Follow a binding chain until a symbol or an unbound variable."""
    seen = set()
    while isinstance(term, Var) and term in psi and term not in seen:
        seen.add(term)
        term = psi[term]
    return term


def kmax_prune(states: Sequence[ProofState], k: int) -> list:
    """Keep the k highest-scoring states, preserving enumeration order.

    Ties prefer earlier states; with k >= len(states) the list is returned
    unchanged, which keeps pruned and exact proving bit-identical.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(states) <= k:
        return list(states)
    ranked = sorted(range(len(states)),
                    key=lambda i: (-states[i].success.value, i))[:k]
    return [states[i] for i in sorted(ranked)]


class Prover:
    """Backward-chaining engine bound to one KB, embedding matrix, and graph."""

    def __init__(
        self,
        kb: KnowledgeBase,
        emb: EmbeddingMatrix,
        *,
        graph: Optional[Graph] = None,
        kmax: Optional[int] = None,
        mask_fact: Union[Atom, int, None] = None,
        mu: float = DEFAULT_MU,
        traces: bool = True,
    ):
        self.kb = kb
        self.graph = graph if graph is not None else Graph(emb)
        self.kmax = kmax
        self.mu = mu
        self.traces = traces
        if mask_fact is not None and not isinstance(mask_fact, int):
            mask_fact = kb.fact_id(tuple(mask_fact))
        self.mask_fact_id = mask_fact
        self._scope = 0
        self._one = self.graph.constant(1.0)
        self._zero: Optional[Node] = None
        # one RBF node per unordered symbol pair; the kernel is symmetric
        # and a shared node accumulates adjoints from every use site
        self._kernels: dict = {}

    # -- core steps ----------------------------------------------------------

    def unify(self, head: Atom, goal: Atom, state: ProofState,
              rule_id: int = -1, masked: bool = False) -> Optional[ProofState]:
        """Soft-unify a clause head against a goal atom.

        Arity mismatch fails; symbol pairs contribute RBF kernels to a
        running min; identical symbols contribute exactly 1 (recorded in the
        trace, no node needed).  Masked unifications take min with 0.
        """
        if len(head) != len(goal):
            return None
        psi = dict(state.psi)
        new_bindings = []
        kernels = []
        for th, tg in zip(head, goal):
            if isinstance(th, Var):
                existing = psi.get(th, _MISSING)
                if existing is _MISSING:
                    psi[th] = tg
                    new_bindings.append((th, tg))
                elif existing != tg:
                    return None
            elif isinstance(tg, Var):
                existing = psi.get(tg, _MISSING)
                if existing is _MISSING:
                    psi[tg] = th
                    new_bindings.append((tg, th))
                elif existing != th:
                    return None
            else:
                if th == tg:
                    kernels.append((th, tg, None))
                else:
                    key = (th, tg) if th <= tg else (tg, th)
                    nid = self._kernels.get(key)
                    if nid is None:
                        node = self.graph.rbf(
                            self.graph.lookup(th), self.graph.lookup(tg),
                            self.mu,
                        )
                        nid = node.id
                        self._kernels[key] = nid
                    kernels.append((th, tg, nid))
        inputs = [state.success]
        inputs.extend(Node(self.graph, nid) for _, _, nid in kernels
                      if nid is not None)
        if masked:
            if self._zero is None:
                self._zero = self.graph.constant(0.0)
            inputs.append(self._zero)
        success = inputs[0] if len(inputs) == 1 else self.graph.min_of(inputs)
        if self.traces:
            step = TraceStep(rule_id=rule_id, masked=masked,
                             bindings=tuple(new_bindings),
                             kernels=tuple(kernels))
            trace = state.trace + (step,)
        else:
            trace = ()
        return ProofState(psi=psi, success=success, applied=state.applied,
                          trace=trace)

    def or_(self, goal: Atom, depth: int, state: ProofState) -> list:
        """Try every KB clause against the goal, in KB order."""
        out = []
        for rule in self.kb.rules:
            if not rule.ground and rule.id in state.applied:
                continue
            head, body = self._rename(rule)
            masked = (self.mask_fact_id is not None
                      and rule.id == self.mask_fact_id)
            s = self.unify(head, goal, state, rule_id=rule.id, masked=masked)
            if s is None:
                continue
            if not rule.ground:
                s.applied = s.applied | {rule.id}
            out.extend(self.and_(body, depth, s))
        return out

    def and_(self, body: tuple, depth: int, state: ProofState) -> list:
        """Prove body atoms left to right, threading bindings and the
        applied-rule set; at depth 0 even an empty body fails."""
        if depth <= 0:
            return []
        if not body:
            return [state]
        goal = substitute(body[0], state.psi)
        states = self.or_(goal, depth - 1, state)
        if self.kmax is not None:
            states = kmax_prune(states, self.kmax)
        out = []
        for s in states:
            out.extend(self.and_(body[1:], depth, s))
        return out

    def initial_state(self) -> ProofState:
        return ProofState(psi={}, success=self._one, applied=frozenset())

    def prove(self, goal: Atom, depth: int) -> list:
        return self.or_(goal, depth, self.initial_state())

    def _rename(self, rule: Rule) -> tuple:
        """Fresh variable scope per rule application."""
        if rule.ground:
            return rule.head, rule.body
        self._scope += 1
        scope = self._scope
        mapping = {v: Var(v.name, scope) for v in rule.variables()}

        def ren(atom: Atom) -> Atom:
            return tuple(mapping.get(t, t) if isinstance(t, Var) else t
                         for t in atom)

        return ren(rule.head), tuple(ren(a) for a in rule.body)


def ntp_prove(
    kb: KnowledgeBase,
    emb: EmbeddingMatrix,
    goal: Atom,
    depth: int,
    *,
    kmax: Optional[int] = None,
    mask_fact: Union[Atom, int, None] = None,
    mu: float = DEFAULT_MU,
    graph: Optional[Graph] = None,
    traces: bool = True,
) -> ProofResult:
    """Prove one goal and aggregate: max over proof-state successes.

    All-FAIL goals score the clamp floor 1e-10.  Ties go to the first
    enumerated state (KB order, depth-first).
    """
    prover = Prover(kb, emb, graph=graph, kmax=kmax, mask_fact=mask_fact,
                    mu=mu, traces=traces)
    states = prover.prove(goal, depth)
    if states:
        node = prover.graph.max_of([s.success for s in states])
        score = node.value
        best = next(s for s in states if s.success.value == score)
    else:
        node = prover.graph.constant(FLOOR)
        score = FLOOR
        best = None
    return ProofResult(goal=goal, depth=depth, score=score, node=node,
                       state=best, states=states, graph=prover.graph)


def trace_to_json(result: ProofResult, kb: KnowledgeBase) -> dict:
    """Render a proof result as a JSON-ready dict (best state's trace)."""
    vocab = kb.vocab

    def term_str(t):
        from .kb import render_term
        return render_term(t, vocab)

    out = {
        "goal": render_atom(result.goal, vocab),
        "depth": result.depth,
        "score": result.score,
        "n_states": result.n_states,
        "answers": None,
        "steps": [],
    }
    if result.state is None:
        return out
    out["answers"] = {term_str(v): term_str(t)
                      for v, t in result.answers().items()}
    graph = result.graph
    for step in result.state.trace:
        out["steps"].append({
            "clause": render_rule(kb.rules[step.rule_id], vocab),
            "masked": step.masked,
            "bindings": {term_str(v): term_str(t) for v, t in step.bindings},
            "kernels": [
                {
                    "head_symbol": term_str(h),
                    "goal_symbol": term_str(g),
                    "score": 1.0 if nid is None else graph.values[nid],
                }
                for h, g, nid in step.kernels
            ],
        })
    return out


class _Missing:
    __slots__ = ()


_MISSING = _Missing()
