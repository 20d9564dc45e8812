"""Ranking metrics, precision-recall area, and induced-rule decoding.

Link prediction follows the filtered protocol: each test fact competes
against every single-argument corruption that is not itself a known
fact, and its rank uses a pessimistic tie-break (an equal-scoring
corruption counts as ranked above).  MRR and HITS pool the first- and
second-argument ranks of all facts into one list.

``auc_pr`` is average precision: the mean of precision measured at
each positive in descending score order, with ties left in input
order.  ``decode_rules`` maps each trained rule-template symbol to its
nearest real predicate under the unification kernel; a rule's
confidence is the minimum slot similarity, which also upper-bounds any
proof success the decoded reading could contribute.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .batched import KernelCache, batch_unify, prove_batch
from .graph import DEFAULT_MU, EmbeddingMatrix
from .kb import Atom, KnowledgeBase, Rule, render_atom
from .linkpred import complex_scores


def auc_pr(pairs: Sequence[tuple]) -> float:
    """Average precision of (score, label) pairs, labels in {0, 1}."""
    labels = np.array([int(bool(l)) for _, l in pairs])
    if labels.sum() == 0:
        raise ValueError("average precision needs at least one positive")
    scores = np.array([float(s) for s, _ in pairs])
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    hits = np.cumsum(ranked)
    positions = np.arange(1, len(ranked) + 1)
    return float((ranked * hits / positions).sum() / labels.sum())


def ntp_scorer(kb: KnowledgeBase, emb: EmbeddingMatrix, depth: int,
               *, kmax: Optional[int] = None, mu: float = DEFAULT_MU
               ) -> Callable[[np.ndarray], np.ndarray]:
    """Batch goal scorer backed by the prover (one kernel per call)."""
    def scorer(goals: np.ndarray) -> np.ndarray:
        return prove_batch(kb, emb, goals, depth, kmax=kmax, mu=mu,
                           cache=KernelCache(emb.data, mu)).scores
    return scorer


def complex_scorer(emb: EmbeddingMatrix) -> Callable[[np.ndarray], np.ndarray]:
    def scorer(goals: np.ndarray) -> np.ndarray:
        return complex_scores(emb, goals)[0]
    return scorer


def rank_fact(fact: Atom, scorer, known: set,
              constants: Sequence[int]) -> tuple[int, int]:
    """Filtered pessimistic ranks of a binary fact, per corrupted side.

    Candidates are the fact plus corruptions absent from ``known``;
    corruptions enumerate before the fact, so equal scores push the
    fact's rank down.
    """
    s, i, j = fact
    firsts = [(s, c, j) for c in constants
              if (s, c, j) != fact and (s, c, j) not in known]
    seconds = [(s, i, c) for c in constants
               if (s, i, c) != fact and (s, i, c) not in known]
    goals = np.array(firsts + seconds + [fact], dtype=np.int64)
    scores = scorer(goals)
    target = scores[-1]
    first_scores = scores[:len(firsts)]
    second_scores = scores[len(firsts):-1]
    rank1 = 1 + int((first_scores >= target).sum())
    rank2 = 1 + int((second_scores >= target).sum())
    return rank1, rank2


@dataclass
class RankingResult:
    mrr: float
    hits: dict                  # m -> fraction of ranks <= m
    per_fact: list              # {"fact", "rank_first", "rank_second"}

    def report(self) -> dict:
        out = {"mrr": self.mrr}
        for m, v in self.hits.items():
            out[f"hits{m}"] = v
        out["per_fact"] = self.per_fact
        return out


def ranking_eval(facts: Sequence[Atom], scorer, known: set,
                 constants: Sequence[int], *,
                 vocab=None, hits_at: Sequence[int] = (1, 3, 10),
                 jobs: int = 1) -> RankingResult:
    """Rank every fact both ways and pool the ranks into MRR and HITS."""
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            ranks = list(pool.map(
                lambda f: rank_fact(f, scorer, known, constants), facts))
    else:
        ranks = [rank_fact(f, scorer, known, constants) for f in facts]
    pooled = np.array([r for pair in ranks for r in pair], dtype=np.float64)
    per_fact = []
    for f, (r1, r2) in zip(facts, ranks):
        name = render_atom(f, vocab) if vocab is not None else list(map(int, f))
        per_fact.append({"fact": name, "rank_first": r1, "rank_second": r2})
    return RankingResult(
        mrr=float((1.0 / pooled).mean()) if len(pooled) else 0.0,
        hits={m: float((pooled <= m).mean()) if len(pooled) else 0.0
              for m in hits_at},
        per_fact=per_fact,
    )


@dataclass
class DecodedRule:
    rule_id: int
    mapping: dict               # parameterized symbol -> decoded symbol
    confidence: float
    text: str


def decode_rules(kb: KnowledgeBase, emb: EmbeddingMatrix,
                 mu: float = DEFAULT_MU) -> list[DecodedRule]:
    """Nearest real predicate per trained rule symbol, best rules first.

    Confidence is the minimum slot kernel similarity.  Rules without
    parameterized symbols are skipped; sorting is by confidence
    descending with rule id as the deterministic tie-break.
    """
    vocab = kb.vocab
    targets = sorted(vocab.predicate_ids - vocab.parameterized_ids)
    if not targets:
        raise ValueError("no non-parameterized predicates to decode against")
    target_rows = emb.data[targets]
    out = []
    for rule in kb.rules:
        syms = [t for atom in (rule.head, *rule.body) for t in atom
                if isinstance(t, int) and t in vocab.parameterized_ids]
        if not syms:
            continue
        slots = list(dict.fromkeys(syms))
        sims = batch_unify(emb.data[slots], target_rows, mu)
        best = sims.argmax(axis=1)
        mapping = {s: targets[b] for s, b in zip(slots, best)}
        confidence = float(sims[np.arange(len(slots)), best].min())

        def decoded(atom: Atom) -> Atom:
            return tuple(mapping.get(t, t) if isinstance(t, int) else t
                         for t in atom)

        head = render_atom(decoded(rule.head), vocab)
        body = ", ".join(render_atom(decoded(a), vocab) for a in rule.body)
        text = f"{head} :- {body}." if rule.body else f"{head}."
        out.append(DecodedRule(rule_id=rule.id, mapping=mapping,
                               confidence=confidence, text=text))
    out.sort(key=lambda d: (-d.confidence, d.rule_id))
    return out


def render_decoded(decoded: Sequence[DecodedRule]) -> str:
    return "\n".join(f"{d.confidence:.2f} {d.text}" for d in decoded)


def countries_pairs(queries: Sequence[tuple], scorer) -> list[tuple]:
    """Score (atom, label) queries into (score, label) pairs for auc_pr."""
    goals = np.array([a for a, _ in queries], dtype=np.int64)
    scores = scorer(goals)
    return [(float(s), int(l)) for s, (_, l) in zip(scores, queries)]
