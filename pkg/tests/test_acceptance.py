"""End-to-end acceptance gates.

Each test prints exactly one PASS/FAIL line naming its criterion, then
asserts it.  Criteria 5-6 train full models and carry the ``slow``
marker; criteria 7-8 are multi-hour or need external data and carry
``extended`` (excluded by default).  Criterion 8 additionally needs
NTP_UMLS_DIR to point at a directory of train/dev/test triple files.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from ntp.batched import batch_unify, prove_batch
from ntp.datasets import (
    COUNTRIES_TEMPLATES,
    LINKPRED_TEMPLATES,
    SynthKbConfig,
    build_countries_task,
    gen_countries,
    gen_synthetic_kb,
)
from ntp.evaluate import (
    auc_pr,
    complex_scorer,
    countries_pairs,
    decode_rules,
    ntp_scorer,
    rank_fact,
    ranking_eval,
)
from ntp.graph import (
    EmbeddingMatrix,
    Graph,
    finite_diff_check,
    separated_embeddings,
)
from ntp.kb import (
    KnowledgeBase,
    Var,
    Vocabulary,
    load_triples,
    parse_kb,
    parse_templates,
)
from ntp.oracle import sym_provable
from ntp.prover import ntp_prove
from ntp.trainer import Hyperparams, train


def report(num: int, label: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {label}"
    if detail:
        line += f" [{detail}]"
    print(line)
    assert ok, line


def synth_config(seed: int) -> SynthKbConfig:
    """Sizes within the stated caps; deep KBs stay small to bound runtime."""
    depth = 1 + seed % 3
    if depth == 3:
        return SynthKbConfig(n_predicates=3, n_constants=6,
                             n_facts=8 + seed % 5, n_rules=seed % 3,
                             depth=3, n_goals=5)
    return SynthKbConfig(n_predicates=3 + seed % 4,
                         n_constants=6 + seed % 6,
                         n_facts=10 + (seed * 7) % 21,
                         n_rules=seed % 6, depth=depth, n_goals=5)


class TestOracleEquivalence:
    def test_criterion_01(self):
        t0 = time.monotonic()
        n_kbs, n_goals = 0, 0
        ok = True
        for seed in range(200):
            cfg = synth_config(seed)
            kb, provable, unprovable = gen_synthetic_kb(cfg, seed=seed)
            emb = separated_embeddings(len(kb.vocab), distance=20.0)
            n_kbs += 1
            for goal, truth in ([(g, True) for g in provable]
                                + [(g, False) for g in unprovable]):
                score = ntp_prove(kb, emb, goal, cfg.depth,
                                  traces=False).score
                n_goals += 1
                if truth and score < 0.99:
                    ok = False
                if not truth and score > 1e-6:
                    ok = False
                assert sym_provable(kb, goal, cfg.depth) == truth
        elapsed = time.monotonic() - t0
        ok = ok and elapsed <= 60.0
        report(1, "prover agrees with the symbolic oracle", ok,
               f"{n_kbs} KBs, {n_goals} goals, {elapsed:.1f}s")


def grad_check_instance(seed: int):
    """KB whose proof graph has well-separated min/max inputs.

    One fact per predicate with fresh constants keeps kernel values
    independent, and a moderate embedding scale keeps them mid-range
    where near-coincidences are rare.  Odd seeds add a chain rule so
    deeper proofs are exercised too.
    """
    rng = np.random.default_rng(seed)
    vocab = Vocabulary()
    n_facts = 5
    preds = [vocab.intern(f"p{i}") for i in range(n_facts + 3)]
    consts = [vocab.intern(f"c{i}") for i in range(2 * n_facts + 2)]
    for p in preds:
        vocab.mark_predicate(p)
    kb = KnowledgeBase(vocab)
    for i in range(n_facts):
        kb.add_clause((preds[i], consts[2 * i], consts[2 * i + 1]))
    if seed % 2:
        x, y, z = Var("X"), Var("Y"), Var("Z")
        kb.add_clause((preds[n_facts], x, y),
                      ((preds[n_facts + 1], x, z), (preds[n_facts + 2], z, y)))
    emb = EmbeddingMatrix(
        rng.normal(scale=0.35, size=(len(vocab), 5)), k=5)
    return kb, emb, (preds[0], consts[-2], consts[-1])


class TestGradientCorrectness:
    def test_criterion_02(self):
        t0 = time.monotonic()
        checked, worst = 0, 0.0
        seed = 0
        while checked < 50 and seed < 200:
            kb, emb, goal = grad_check_instance(seed)
            seed += 1
            res = ntp_prove(kb, emb, goal, 2)
            rep = finite_diff_check(res.graph, res.node, h=1e-5,
                                    tol=1e-4, max_entries=30, seed=seed)
            if rep.tie_detected:
                continue
            # a graph only counts when it has real gradients to compare
            if not any(abs(e[2]) > 1e-8 for e in rep.entries):
                continue
            checked += 1
            worst = max(worst, rep.max_rel_err)
        elapsed = time.monotonic() - t0
        ok = checked >= 50 and 0.0 < worst <= 1e-4 and elapsed <= 60.0
        report(2, "autodiff matches central finite differences", ok,
               f"{checked} graphs, max rel err {worst:.2e}, {elapsed:.1f}s")


class TestBatchingEquivalence:
    def test_criterion_03(self):
        rng = np.random.default_rng(42)
        worst_kernel = 0.0
        for _ in range(100):
            n, m, k = rng.integers(1, 17, size=3)
            a = rng.normal(size=(n, k))
            b = rng.normal(size=(m, k))
            got = batch_unify(a, b)
            emb = EmbeddingMatrix(np.vstack([a, b]), k=int(k))
            g = Graph(emb)
            for i in range(int(n)):
                for j in range(int(m)):
                    want = g.rbf(g.lookup(i), g.lookup(int(n) + j)).value
                    worst_kernel = max(worst_kernel,
                                       abs(got[i, j] - want))

        cfg = SynthKbConfig(n_facts=14, n_rules=3, n_goals=16)
        kb, provable, unprovable = gen_synthetic_kb(cfg, seed=7)
        rng2 = np.random.default_rng(7)
        emb = EmbeddingMatrix(
            rng2.normal(scale=0.6, size=(len(kb.vocab), 6)), k=6)
        goals = (provable + unprovable)[:32]
        batched = prove_batch(kb, emb, np.array(goals, dtype=np.int64),
                              cfg.depth).scores
        sequential = np.array([
            ntp_prove(kb, emb, goal, cfg.depth, traces=False).score
            for goal in goals])
        worst_prove = float(np.abs(batched - sequential).max())
        ok = worst_kernel <= 1e-9 and len(goals) == 32 and worst_prove <= 1e-9
        report(3, "batched kernels and proving match scalar runs", ok,
               f"kernel diff {worst_kernel:.1e}, "
               f"batch-of-32 diff {worst_prove:.1e}")


class TestKmax:
    def test_criterion_04(self):
        exact, monotone = True, True
        for seed in range(50):
            cfg = synth_config(seed)
            kb, provable, unprovable = gen_synthetic_kb(cfg, seed=seed)
            rng = np.random.default_rng(seed)
            emb = EmbeddingMatrix(
                rng.normal(scale=0.6, size=(len(kb.vocab), 4)), k=4)
            goals = np.array((provable + unprovable)[:8], dtype=np.int64)
            if not len(goals):
                continue
            full = prove_batch(kb, emb, goals, cfg.depth)
            capped = prove_batch(kb, emb, goals, cfg.depth,
                                 kmax=max(full.stats["candidates"], 1))
            if not np.array_equal(full.scores, capped.scores):
                exact = False
            prev = None
            for kmax in (1, 2, 4, 8, 16, None):
                scores = prove_batch(kb, emb, goals, cfg.depth,
                                     kmax=kmax).scores
                if prev is not None and np.any(scores < prev - 1e-12):
                    monotone = False
                prev = scores
        report(4, "top-K at candidate count is exact; scores grow with K",
               exact and monotone,
               f"exact={exact}, monotone={monotone}, 50 KBs")


def countries_setup(level: str):
    data = gen_countries(seed=0)
    vocab = Vocabulary()
    atoms = load_triples(data.triples_text(), vocab)
    task = build_countries_task(
        atoms, vocab, level,
        [vocab.id_of(c) for c in data.dev_countries],
        [vocab.id_of(c) for c in data.test_countries],
        regions={vocab.id_of(r) for r in data.regions},
        subregions={vocab.id_of(s) for s in data.subregions},
    )
    return task, vocab, set(atoms)


def countries_run(level: str, seed: int):
    """One full training run; returns (test AUC-PR, decoded rules)."""
    task, vocab, known = countries_setup(level)
    kb = KnowledgeBase(vocab)
    for atom in task.train_atoms:
        kb.add_clause(atom)
    templates = parse_templates(COUNTRIES_TEMPLATES[level])
    hp = Hyperparams(seed=seed)        # k=100, d=2, 100 epochs, K-max 10
    result = train(kb, templates, hp, known=known)
    scorer = ntp_scorer(kb, result.emb, hp.depth, kmax=hp.kmax, mu=hp.mu)
    score = auc_pr(countries_pairs(task.test_queries, scorer))
    return score, decode_rules(kb, result.emb, hp.mu)


TRANSITIVITY = "locatedIn(X,Y) :- locatedIn(X,Z), locatedIn(Z,Y)."


@pytest.mark.slow
class TestCountriesS1:
    def test_criterion_05(self):
        t0 = time.monotonic()
        best_auc, best_conf, first_ok = 0.0, 0.0, False
        seeds_used = 0
        for seed in range(3):
            seeds_used += 1
            score, decoded = countries_run("s1", seed)
            top = decoded[0]
            best_auc = max(best_auc, score)
            if top.text == TRANSITIVITY:
                first_ok = True
                best_conf = max(best_conf, top.confidence)
            if score >= 0.95 and first_ok and best_conf >= 0.70:
                break
        elapsed = time.monotonic() - t0
        ok = best_auc >= 0.95 and first_ok and best_conf >= 0.70
        report(5, "S1 AUC-PR >= 0.95 and transitivity decoded first", ok,
               f"auc {best_auc:.4f}, conf {best_conf:.2f}, "
               f"{seeds_used} seed(s), {elapsed / 60:.1f} min")


@pytest.mark.slow
class TestCountriesS2:
    def test_criterion_06(self):
        t0 = time.monotonic()
        best = 0.0
        seeds_used = 0
        for seed in range(3):
            seeds_used += 1
            score, _ = countries_run("s2", seed)
            best = max(best, score)
            if best >= 0.85:
                break
        elapsed = time.monotonic() - t0
        ok = best >= 0.85
        report(6, "S2 AUC-PR >= 0.85", ok,
               f"auc {best:.4f}, {seeds_used} seed(s), "
               f"{elapsed / 60:.1f} min")


@pytest.mark.extended
class TestCountriesS3:
    def test_criterion_07(self):
        best = 0.0
        seeds_used = 0
        for seed in range(10):
            seeds_used += 1
            score, _ = countries_run("s3", seed)
            best = max(best, score)
            if best >= 0.55:
                break
        ok = best >= 0.55
        report(7, "S3 AUC-PR >= 0.55", ok,
               f"auc {best:.4f}, {seeds_used} seed(s)")


@pytest.mark.extended
class TestUmls:
    def test_criterion_08(self):
        data_dir = os.environ.get("NTP_UMLS_DIR")
        if not data_dir:
            pytest.skip("set NTP_UMLS_DIR to a directory of UMLS "
                        "train/dev/test triples")
        vocab = Vocabulary()
        splits = {p: load_triples((Path(data_dir) / f"{p}.txt").read_text(),
                                  vocab)
                  for p in ("train", "dev", "test")}
        known = {a for part in splits.values() for a in part}
        kb = KnowledgeBase(vocab)
        for atom in splits["train"]:
            kb.add_clause(atom)
        templates = parse_templates(LINKPRED_TEMPLATES)

        hp = Hyperparams(seed=0)
        result = train(kb, templates, hp, known=known)
        scorer = ntp_scorer(kb, result.emb, hp.depth, kmax=hp.kmax,
                            mu=hp.mu)
        ntp_rank = ranking_eval(splits["test"], scorer, known,
                                kb.constants())

        kb2 = KnowledgeBase(vocab)
        for atom in splits["train"]:
            kb2.add_clause(atom)
        hp2 = Hyperparams(seed=0, mode="complex")
        result2 = train(kb2, [], hp2, known=known)
        cx_rank = ranking_eval(splits["test"], complex_scorer(result2.emb),
                               known, kb2.constants())

        ok = (ntp_rank.mrr >= 0.85 and ntp_rank.hits[10] >= 0.95
              and cx_rank.mrr >= 0.80)
        report(8, "UMLS MRR/HITS@10 and bilinear baseline", ok,
               f"mrr {ntp_rank.mrr:.3f}, hits10 {ntp_rank.hits[10]:.3f}, "
               f"baseline mrr {cx_rank.mrr:.3f}")


class TestMasking:
    def test_criterion_09(self):
        kb = parse_kb("locatedIn(bali, asia).\nq(a, b).\nr(c, d).")
        emb = separated_embeddings(len(kb.vocab), distance=25.0)
        v = kb.vocab
        fact = kb.rules[0]
        goal = np.array([fact.head], dtype=np.int64)
        masked = prove_batch(kb, emb, goal, 2,
                             mask_ids=np.array([fact.id])).scores[0]
        unmasked = prove_batch(kb, emb, goal, 2).scores[0]
        scalar_masked = ntp_prove(kb, emb, fact.head, 2,
                                  mask_fact=fact.head).score
        ok = (masked <= 1e-9 and scalar_masked <= 1e-9
              and unmasked == 1.0)
        report(9, "masked fact unprovable, unmasked exactly 1.0", ok,
               f"masked {masked:.1e}, unmasked {unmasked}")


class TestMetricFixtures:
    def test_criterion_10(self):
        ap = auc_pr([(0.9, 1), (0.8, 0), (0.7, 1)])
        ap_ok = abs(ap - 0.8333) <= 1e-4

        vocab = Vocabulary()
        r = vocab.intern("r")
        vocab.mark_predicate(r)
        a, b, c, d, e = (vocab.intern(x) for x in "abcde")
        fact = (r, a, b)
        known = {fact, (r, c, b)}
        table = {fact: 0.9,
                 (r, b, b): 0.95, (r, d, b): 0.5, (r, e, b): 0.9,
                 (r, a, a): 0.1, (r, a, c): 0.2, (r, a, d): 0.3,
                 (r, a, e): 0.4}

        def scorer(goals):
            return np.array([table[tuple(g)] for g in goals])

        ranks = rank_fact(fact, scorer, known, [a, b, c, d, e])
        res = ranking_eval([fact], scorer, known, [a, b, c, d, e])
        rank_ok = (ranks == (3, 1)
                   and res.mrr == pytest.approx((1 / 3 + 1) / 2)
                   and res.hits[1] == 0.5 and res.hits[3] == 1.0
                   and res.hits[10] == 1.0)
        ok = ap_ok and rank_ok
        report(10, "metric fixtures match hand enumeration", ok,
               f"ap {ap:.4f}, ranks {ranks}")
