"""Symbolic twin of the differentiable prover.

Same backward chaining, same depth accounting, same flat variable-binding
conflict rule, same one-application-per-branch constraint on non-ground
rules; the only difference is that symbol pairs must match exactly instead
of contributing a kernel score.  With well-separated embeddings the two
provers agree, which is what the equivalence tests check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .kb import Atom, KnowledgeBase, Rule, Var
from .prover import resolve, substitute


@dataclass
class _SymState:
    psi: dict
    applied: frozenset


class _MissingT:
    __slots__ = ()


_MISSING = _MissingT()


class SymbolicProver:
    def __init__(self, kb: KnowledgeBase):
        self.kb = kb
        self._scope = 0

    def unify(self, head: Atom, goal: Atom, state: _SymState) -> Optional[_SymState]:
        if len(head) != len(goal):
            return None
        psi = dict(state.psi)
        for th, tg in zip(head, goal):
            if isinstance(th, Var):
                existing = psi.get(th, _MISSING)
                if existing is _MISSING:
                    psi[th] = tg
                elif existing != tg:
                    return None
            elif isinstance(tg, Var):
                existing = psi.get(tg, _MISSING)
                if existing is _MISSING:
                    psi[tg] = th
                elif existing != th:
                    return None
            elif th != tg:
                return None
        return _SymState(psi=psi, applied=state.applied)

    def or_(self, goal: Atom, depth: int, state: _SymState) -> list:
        out = []
        for rule in self.kb.rules:
            if not rule.ground and rule.id in state.applied:
                continue
            head, body = self._rename(rule)
            s = self.unify(head, goal, state)
            if s is None:
                continue
            if not rule.ground:
                s.applied = s.applied | {rule.id}
            out.extend(self.and_(body, depth, s))
        return out

    def and_(self, body: tuple, depth: int, state: _SymState) -> list:
        if depth <= 0:
            return []
        if not body:
            return [state]
        goal = substitute(body[0], state.psi)
        out = []
        for s in self.or_(goal, depth - 1, state):
            out.extend(self.and_(body[1:], depth, s))
        return out

    def _rename(self, rule: Rule) -> tuple:
        if rule.ground:
            return rule.head, rule.body
        self._scope += 1
        scope = self._scope
        mapping = {v: Var(v.name, scope) for v in rule.variables()}

        def ren(atom: Atom) -> Atom:
            return tuple(mapping.get(t, t) if isinstance(t, Var) else t
                         for t in atom)

        return ren(rule.head), tuple(ren(a) for a in rule.body)


def sym_prove(kb: KnowledgeBase, goal: Atom, depth: int) -> list:
    """All symbolic proofs of ``goal``; each entry maps the goal's variables
    to resolved terms.  A provable ground goal yields [{}]."""
    prover = SymbolicProver(kb)
    start = _SymState(psi={}, applied=frozenset())
    answers = []
    for state in prover.or_(goal, depth, start):
        answers.append({
            t: resolve(t, state.psi) for t in goal if isinstance(t, Var)
        })
    return answers


def sym_provable(kb: KnowledgeBase, goal: Atom, depth: int) -> bool:
    return bool(sym_prove(kb, goal, depth))
