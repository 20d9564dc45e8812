"""Knowledge-base core: terms, rules, vocabulary, parsers, and splits.

A knowledge base is an ordered list of definite clauses over a shared
symbol vocabulary.  Symbols (predicates and constants) are interned to
integer ids; variables are scoped objects that never enter the vocabulary.

Text formats:

* ``.ntp``  -- one clause per line, Prolog style::

      fatherOf(abe, homer).
      grandfatherOf(X,Y) :- fatherOf(X,Z), parentOf(Z,Y).
      % comments run to end of line

* ``.tmpl`` -- rule templates, ``<count> <skeleton>.`` where ``#n``
  placeholders stand for predicate symbols to be invented::

      3 #1(X,Y) :- #2(X,Z), #2(Z,Y).

* ``.tsv``  -- one ``rel<TAB>arg1<TAB>arg2`` triple per line.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

log = logging.getLogger("ntp.kb")


class KbError(ValueError):
    """Syntax or consistency error in KB input, with source position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        where = f" (line {line}, col {col})" if line else ""
        super().__init__(f"{message}{where}")


@dataclass(frozen=True)
class Var:
    """A logic variable.  ``scope`` 0 is the parsed clause; fresh rule
    applications get a unique positive scope so bindings never collide."""

    name: str
    scope: int = 0


@dataclass(frozen=True)
class Placeholder:
    """A ``#n`` predicate slot inside a rule template."""

    slot: int


# A term inside a stored clause: interned symbol id or variable.
Term = Union[int, Var]
# An atom is (predicate, arg1, ..., argN) as a tuple of terms.
Atom = tuple


class Vocabulary:
    """Bidirectional symbol table with predicate / parameterized flags."""

    def __init__(self):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        self.predicate_ids: set[int] = set()
        self.parameterized_ids: set[int] = set()

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def intern(self, name: str) -> int:
        """Return the id for ``name``, adding it if unseen."""
        sym = self._ids.get(name)
        if sym is None:
            sym = len(self._names)
            self._names.append(name)
            self._ids[name] = sym
        return sym

    def id_of(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise KbError(f"unknown symbol '{name}'") from None

    def name(self, sym: int) -> str:
        return self._names[sym]

    def names(self) -> list[str]:
        return list(self._names)

    def mark_predicate(self, sym: int) -> None:
        self.predicate_ids.add(sym)


@dataclass
class Rule:
    """A definite clause ``head :- body``.  Facts have an empty body."""

    head: Atom
    body: tuple
    id: int
    ground: bool

    @property
    def is_fact(self) -> bool:
        return not self.body and self.ground

    def variables(self) -> list[Var]:
        """Distinct variables in first-occurrence order (head then body)."""
        seen: dict[Var, None] = {}
        for atom in (self.head, *self.body):
            for t in atom:
                if isinstance(t, Var):
                    seen.setdefault(t)
        return list(seen)


@dataclass
class Partition:
    """Rules sharing one structural signature, in KB order."""

    signature: tuple
    rule_ids: list[int] = field(default_factory=list)


def rule_signature(rule: Rule) -> tuple:
    """Structural signature: arity pattern plus variable-sharing pattern.

    Constants map to -1, variables to their first-occurrence ordinal, so
    ``p(X,Y) :- q(Y,X)`` and ``r(A,B) :- s(B,A)`` share a signature while
    ``p(X,Y) :- q(X,Y)`` does not.
    """
    ordinals: dict[Var, int] = {}
    sig = []
    for atom in (rule.head, *rule.body):
        pattern = []
        for t in atom:
            if isinstance(t, Var):
                pattern.append(ordinals.setdefault(t, len(ordinals)))
            else:
                pattern.append(-1)
        sig.append((len(atom), tuple(pattern)))
    return tuple(sig)


class KnowledgeBase:
    """Ordered clauses plus their vocabulary and derived indexes."""

    def __init__(self, vocab: Optional[Vocabulary] = None):
        self.vocab = vocab if vocab is not None else Vocabulary()
        self.rules: list[Rule] = []
        self.fact_ids: dict[Atom, int] = {}
        self._partitions: Optional[list[Partition]] = None

    def __len__(self) -> int:
        return len(self.rules)

    @property
    def facts(self) -> list[Rule]:
        return [r for r in self.rules if r.is_fact]

    def has_fact(self, atom: Atom) -> bool:
        return atom in self.fact_ids

    def fact_id(self, atom: Atom) -> Optional[int]:
        return self.fact_ids.get(atom)

    def add_clause(self, head: Atom, body: Sequence[Atom] = ()) -> Optional[Rule]:
        """Append a clause.  Duplicate ground facts are dropped (returns None)."""
        body = tuple(tuple(a) for a in body)
        head = tuple(head)
        ground = all(
            not isinstance(t, Var) for atom in (head, *body) for t in atom
        )
        if not body and not ground:
            raise KbError("fact contains a variable: " + render_atom(head, self.vocab))
        if not body and head in self.fact_ids:
            return None
        rule = Rule(head=head, body=body, id=len(self.rules), ground=ground)
        self.rules.append(rule)
        if rule.is_fact:
            self.fact_ids[head] = rule.id
        self.vocab.mark_predicate(_pred_of(head))
        for atom in body:
            self.vocab.mark_predicate(_pred_of(atom))
        self._partitions = None
        return rule

    def partitions(self) -> list[Partition]:
        """Group rules by structural signature, preserving KB order."""
        if self._partitions is None:
            by_sig: dict[tuple, Partition] = {}
            out: list[Partition] = []
            for rule in self.rules:
                sig = rule_signature(rule)
                part = by_sig.get(sig)
                if part is None:
                    part = Partition(signature=sig)
                    by_sig[sig] = part
                    out.append(part)
                part.rule_ids.append(rule.id)
            self._partitions = out
        return self._partitions

    def constants(self) -> list[int]:
        """Symbol ids that appear in argument positions of ground facts."""
        seen: dict[int, None] = {}
        for rule in self.rules:
            if rule.is_fact:
                for t in rule.head[1:]:
                    seen.setdefault(t)
        return list(seen)


def _pred_of(atom: Atom):
    p = atom[0]
    if isinstance(p, Var):
        raise KbError("predicate position may not be a variable in a stored clause")
    return p


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<comment>%[^\n]*)
      | (?P<implies>:-)
      | (?P<lparen>\()
      | (?P<rparen>\))
      | (?P<comma>,)
      | (?P<period>\.)
      | (?P<hash>\#\d+)
      | (?P<int>\d+)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise KbError(
                f"unexpected character {text[pos]!r}", line, pos - line_start + 1
            )
        kind = m.lastgroup
        value = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, value, line, m.start() - line_start + 1))
        line += value.count("\n")
        if "\n" in value:
            line_start = m.start() + value.rindex("\n") + 1
        pos = m.end()
    return tokens


class _Parser:
    """Recursive-descent parser over the shared token stream."""

    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def done(self) -> bool:
        return self.pos >= len(self.tokens)

    def peek(self) -> _Token:
        if self.done():
            last = self.tokens[-1] if self.tokens else _Token("", "", 1, 1)
            raise KbError("unexpected end of input", last.line, last.col)
        return self.tokens[self.pos]

    def take(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise KbError(
                f"expected {kind}, found {tok.text!r}", tok.line, tok.col
            )
        self.pos += 1
        return tok

    def atom(self, *, template: bool, vocab: Optional[Vocabulary],
             allow_var_pred: bool = False):
        """Parse ``pred(t1, ..., tn)``; terms are names when vocab is None."""
        tok = self.peek()
        if tok.kind == "hash":
            if not template:
                raise KbError("placeholders are only valid in templates",
                              tok.line, tok.col)
            self.pos += 1
            pred = Placeholder(int(tok.text[1:]))
        else:
            tok = self.take("ident")
            if tok.text[0].isupper():
                if not allow_var_pred:
                    raise KbError(
                        "predicate position may not be a variable",
                        tok.line, tok.col,
                    )
                pred = Var(tok.text)
            else:
                pred = tok.text if vocab is None else vocab.intern(tok.text)
        self.take("lparen")
        terms = [pred]
        while True:
            terms.append(self.term(template=template, vocab=vocab))
            if self.peek().kind == "comma":
                self.pos += 1
                continue
            break
        self.take("rparen")
        return tuple(terms)

    def term(self, *, template: bool, vocab: Optional[Vocabulary]):
        tok = self.peek()
        if tok.kind == "hash":
            raise KbError("placeholder used as a constant argument",
                          tok.line, tok.col)
        tok = self.take("ident")
        if tok.text[0].isupper():
            return Var(tok.text)
        return tok.text if vocab is None else vocab.intern(tok.text)

    def clause(self, *, template: bool, vocab: Optional[Vocabulary]):
        head = self.atom(template=template, vocab=vocab)
        body = []
        if self.peek().kind == "implies":
            self.pos += 1
            while True:
                body.append(self.atom(template=template, vocab=vocab))
                if not self.done() and self.peek().kind == "comma":
                    self.pos += 1
                    continue
                break
        self.take("period")
        return head, tuple(body)


def parse_kb(text: str, vocab: Optional[Vocabulary] = None) -> KnowledgeBase:
    """Parse ``.ntp`` clauses into a KnowledgeBase.

    Passing an existing ``vocab`` reuses its symbol ids (required when a
    rendered KB must line up with a stored embedding matrix).
    """
    kb = KnowledgeBase(vocab)
    parser = _Parser(text)
    while not parser.done():
        tok = parser.peek()
        head, body = parser.clause(template=False, vocab=kb.vocab)
        if not body:
            ground = all(not isinstance(t, Var) for t in head)
            if not ground:
                raise KbError("fact contains a variable", tok.line, tok.col)
        kb.add_clause(head, body)
    return kb


def parse_query(text: str, vocab: Vocabulary) -> Atom:
    """Parse one goal atom against an existing vocabulary.

    Variables are allowed in any position (including the predicate); symbol
    names must already exist, since fresh symbols would have no embedding.
    """
    parser = _Parser(text)
    head = parser.atom(template=False, vocab=None, allow_var_pred=True)
    if not parser.done():
        if parser.peek().kind == "period":
            parser.pos += 1
    if not parser.done():
        tok = parser.peek()
        raise KbError(f"trailing input after query: {tok.text!r}", tok.line, tok.col)
    return tuple(
        t if isinstance(t, Var) else vocab.id_of(t) for t in head
    )


# ---------------------------------------------------------------------------
# Rule templates
# ---------------------------------------------------------------------------

@dataclass
class RuleTemplate:
    """``count`` copies of a rule skeleton with ``#n`` predicate slots.

    Skeleton atoms hold symbol *names* (str), Vars, and Placeholders; they
    are interned only at instantiation time.
    """

    count: int
    head: Atom
    body: tuple
    n_slots: int


def parse_templates(text: str) -> list[RuleTemplate]:
    """Parse a ``.tmpl`` file into templates, in file order."""
    out = []
    parser = _Parser(text)
    while not parser.done():
        tok = parser.take("int")
        count = int(tok.text)
        if count < 1:
            raise KbError("template count must be >= 1", tok.line, tok.col)
        head, body = parser.clause(template=True, vocab=None)
        slots = sorted(
            {t.slot for atom in (head, *body) for t in atom
             if isinstance(t, Placeholder)}
        )
        if not slots:
            raise KbError("template has no placeholders", tok.line, tok.col)
        if slots != list(range(1, len(slots) + 1)):
            raise KbError(
                f"placeholder slots must be contiguous from #1, got {slots}",
                tok.line, tok.col,
            )
        out.append(RuleTemplate(count=count, head=head, body=body,
                                n_slots=len(slots)))
    return out


def instantiate_templates(
    templates: Iterable[RuleTemplate], kb: KnowledgeBase
) -> list[Rule]:
    """Add ``count`` fresh parameterized rules per template to ``kb``.

    Every distinct slot in every copy becomes a fresh symbol whose embedding
    is trained like any other; equal slot numbers within one copy share a
    symbol.  Returns the rules added.
    """
    added = []
    for ti, tpl in enumerate(templates):
        for copy in range(tpl.count):
            slot_ids: dict[int, int] = {}
            for slot in range(1, tpl.n_slots + 1):
                name = f"_t{ti}r{copy}s{slot}"
                if name in kb.vocab:
                    raise KbError(f"fresh symbol name collision: '{name}'")
                sym = kb.vocab.intern(name)
                kb.vocab.parameterized_ids.add(sym)
                slot_ids[slot] = sym

            def build(atom: Atom) -> Atom:
                terms = []
                for t in atom:
                    if isinstance(t, Placeholder):
                        terms.append(slot_ids[t.slot])
                    elif isinstance(t, Var):
                        terms.append(t)
                    else:
                        terms.append(kb.vocab.intern(t))
                return tuple(terms)

            rule = kb.add_clause(build(tpl.head), [build(a) for a in tpl.body])
            added.append(rule)
    return added


# ---------------------------------------------------------------------------
# Triple files and splits
# ---------------------------------------------------------------------------

def load_triples(
    text: str,
    vocab: Vocabulary,
    *,
    binary_only: bool = False,
    swap_args: bool = False,
) -> list[Atom]:
    """Load ``rel<TAB>arg1<TAB>arg2`` lines as ground atoms.

    Duplicates are dropped with a warning count; in ``binary_only`` mode
    non-binary lines are skipped and counted.  ``swap_args`` flips the two
    argument columns for corpora stored in the opposite orientation.
    """
    atoms: list[Atom] = []
    seen: set[Atom] = set()
    duplicates = 0
    skipped = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        cols = line.split("\t") if "\t" in line else line.split()
        if len(cols) != 3:
            if binary_only:
                skipped += 1
                continue
            if len(cols) == 2:
                atom = (vocab.intern(cols[0]), vocab.intern(cols[1]))
                vocab.mark_predicate(atom[0])
                if atom in seen:
                    duplicates += 1
                    continue
                seen.add(atom)
                atoms.append(atom)
                continue
            raise KbError(f"expected 2 or 3 columns, got {len(cols)}", lineno)
        rel, a, b = cols
        if swap_args:
            a, b = b, a
        atom = (vocab.intern(rel), vocab.intern(a), vocab.intern(b))
        vocab.mark_predicate(atom[0])
        if atom in seen:
            duplicates += 1
            continue
        seen.add(atom)
        atoms.append(atom)
    if duplicates:
        log.warning("dropped %d duplicate triples", duplicates)
    if skipped:
        log.warning("skipped %d non-binary lines (binary-only mode)", skipped)
    return atoms


def split_dataset(
    facts: Sequence,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list, list, list]:
    """Shuffle and split into (train, dev, test) by largest-remainder rounding.

    Remainder ties go to the later split, so 10686 facts at (0.8, 0.1, 0.1)
    give sizes (8549, 1068, 1069).
    """
    n = len(facts)
    if n < 3:
        raise KbError(f"need at least 3 facts to split, got {n}")
    if len(ratios) != 3:
        raise KbError("ratios must be a (train, dev, test) triple")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise KbError(f"ratios must be >= 0 and sum to 1, got {ratios}")

    quotas = [n * r for r in ratios]
    sizes = [int(q) for q in quotas]
    remainders = [q - s for q, s in zip(quotas, sizes)]
    for _ in range(n - sum(sizes)):
        best = max(range(3), key=lambda i: (remainders[i], i))
        sizes[best] += 1
        remainders[best] = -1.0

    order = np.random.default_rng(seed).permutation(n)
    shuffled = [facts[i] for i in order]
    train = shuffled[: sizes[0]]
    dev = shuffled[sizes[0]: sizes[0] + sizes[1]]
    test = shuffled[sizes[0] + sizes[1]:]
    return train, dev, test


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render_term(t, vocab: Vocabulary) -> str:
    if isinstance(t, Var):
        return t.name if t.scope == 0 else f"{t.name}_{t.scope}"
    if isinstance(t, Placeholder):
        return f"#{t.slot}"
    if isinstance(t, str):
        return t
    return vocab.name(t)


def render_atom(atom: Atom, vocab: Vocabulary) -> str:
    pred = render_term(atom[0], vocab)
    args = ",".join(render_term(t, vocab) for t in atom[1:])
    return f"{pred}({args})"


def render_rule(rule: Rule, vocab: Vocabulary) -> str:
    head = render_atom(rule.head, vocab)
    if not rule.body:
        return f"{head}."
    body = ", ".join(render_atom(a, vocab) for a in rule.body)
    return f"{head} :- {body}."


def render_kb(kb: KnowledgeBase) -> str:
    """One clause per line, KB order; re-parsing with the same vocabulary
    reproduces the KB exactly."""
    return "\n".join(render_rule(r, kb.vocab) for r in kb.rules) + "\n"
