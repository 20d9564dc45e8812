"""Command-line entry points: train, eval, prove, decode, gen-data.

Every command is deterministic given --seed.  Hyperparameter flags
override values from --config.  Exit codes: 0 success, 1 runtime
failure, 2 usage error.  Set NTP_LOG=1 (or more) for progress output on
stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from .datasets import (COUNTRIES_TEMPLATES, LINKPRED_TEMPLATES,
                       build_countries_task, gen_countries)
from .evaluate import (auc_pr, complex_scorer, countries_pairs, decode_rules,
                       ntp_scorer, ranking_eval, render_decoded)
from .graph import GraphNumericsError
from .kb import (KbError, KnowledgeBase, Vocabulary, load_triples, parse_kb,
                 parse_query, parse_templates, render_atom, render_term)
from .oracle import sym_prove
from .prover import ntp_prove, trace_to_json
from .trainer import Hyperparams, TrainError, train

_HP_FLAGS = ("k", "lr", "n_known", "neg_ratio", "l2", "clip", "epochs",
             "depth", "kmax", "mu", "mode")


def _verbosity() -> int:
    try:
        return int(os.environ.get("NTP_LOG", "0"))
    except ValueError:
        return 0


def _log(msg: str) -> None:
    if _verbosity() >= 1:
        print(msg, file=sys.stderr)


def _read(path) -> str:
    with open(path) as fh:
        return fh.read()


def _hyperparams(args) -> Hyperparams:
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(json.loads(_read(args.config)))
    for name in _HP_FLAGS:
        val = getattr(args, name.replace("-", "_"), None)
        if val is not None:
            cfg[name] = val
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if cfg.get("kmax") == 0:
        cfg["kmax"] = None
    return Hyperparams.from_dict(cfg)


def _load_splits(splits_dir) -> dict:
    out = {}
    for part in ("train", "dev", "test"):
        path = Path(splits_dir) / f"{part}.txt"
        out[part] = _read(path).split()
    return out


def _load_types(splits_dir, vocab):
    """Optional region/subregion name lists shipped next to the splits."""
    path = Path(splits_dir) / "types.json"
    if not path.exists():
        return None, None
    types = json.loads(_read(path))
    return ({vocab.intern(n) for n in types["regions"]},
            {vocab.intern(n) for n in types["subregions"]})


def _countries_task(args, vocab, atoms):
    splits = _load_splits(args.splits)
    regions, subregions = _load_types(args.splits, vocab)
    return build_countries_task(
        atoms, vocab, args.task,
        [vocab.id_of(c) for c in splits["dev"]],
        [vocab.id_of(c) for c in splits["test"]],
        regions=regions, subregions=subregions,
    )


def _countries_setup(args, hp):
    """Build the removal task, train KB, and evaluation queries."""
    vocab = Vocabulary()
    atoms = load_triples(_read(args.kb), vocab)
    task = _countries_task(args, vocab, atoms)
    kb = KnowledgeBase(vocab)
    for atom in task.train_atoms:
        kb.add_clause(atom)
    return kb, task, set(atoms)


def _task_scorer(kb, emb, hp):
    if hp.mode == "complex":
        return complex_scorer(emb)
    return ntp_scorer(kb, emb, hp.depth, kmax=hp.kmax, mu=hp.mu)


def cmd_train(args) -> int:
    hp = _hyperparams(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    templates = parse_templates(_read(args.templates)) if args.templates else []

    if args.task in ("s1", "s2", "s3"):
        kb, task, known = _countries_setup(args, hp)

        def dev_eval(emb) -> float:
            return auc_pr(countries_pairs(task.dev_queries,
                                          _task_scorer(kb, emb, hp)))

        result = train(kb, templates, hp, known=known, dev_eval=dev_eval,
                       log_path=out_dir / "log.jsonl",
                       progress=lambda r: _log(
                           f"epoch {r['epoch']}: loss {r['loss']:.4f} "
                           f"dev {r['dev_metric']:.4f}"))
        scorer = _task_scorer(kb, result.emb, hp)
        metrics = {
            "auc_pr": auc_pr(countries_pairs(task.test_queries, scorer)),
            "dev_auc_pr": auc_pr(countries_pairs(task.dev_queries, scorer)),
        }
    else:
        vocab = Vocabulary()
        if args.splits:
            splits = {p: load_triples(_read(Path(args.splits) / f"{p}.txt"),
                                      vocab)
                      for p in ("train", "dev", "test")}
            train_atoms = splits["train"]
            known = {a for part in splits.values() for a in part}
        else:
            train_atoms = load_triples(_read(args.kb), vocab)
            splits = None
            known = set(train_atoms)
        kb = KnowledgeBase(vocab)
        for atom in train_atoms:
            kb.add_clause(atom)
        result = train(kb, templates, hp, known=known,
                       log_path=out_dir / "log.jsonl",
                       progress=lambda r: _log(
                           f"epoch {r['epoch']}: loss {r['loss']:.4f}"))
        metrics = {}
        if splits is not None and splits["test"]:
            rank = ranking_eval(splits["test"],
                                _task_scorer(kb, result.emb, hp),
                                known, kb.constants(), vocab=vocab,
                                jobs=args.jobs)
            metrics = rank.report()

    ckpt = ckpt_mod.Checkpoint(kb=result.kb, emb=result.emb,
                               config=hp.to_dict())
    ckpt.save(out_dir / "checkpoint.json")
    with open(out_dir / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2)
        fh.write("\n")
    summary = {k: v for k, v in metrics.items() if k != "per_fact"}
    print(json.dumps({"out": str(out_dir), "metrics": summary}))
    return 0


def cmd_eval(args) -> int:
    ckpt = ckpt_mod.load_checkpoint(args.checkpoint)
    hp = Hyperparams.from_dict(ckpt.config)
    vocab = ckpt.kb.vocab
    scorer = _task_scorer(ckpt.kb, ckpt.emb, hp)
    if args.task in ("s1", "s2", "s3"):
        atoms = load_triples(_read(args.kb), vocab)
        task = _countries_task(args, vocab, atoms)
        metrics = {"auc_pr": auc_pr(countries_pairs(task.test_queries,
                                                    scorer))}
    else:
        test = load_triples(_read(Path(args.splits) / "test.txt"), vocab)
        known = set(test)
        for part in ("train", "dev"):
            path = Path(args.splits) / f"{part}.txt"
            if path.exists():
                known.update(load_triples(_read(path), vocab))
        known.update(r.head for r in ckpt.kb.rules if r.is_fact)
        metrics = ranking_eval(test, scorer, known, ckpt.kb.constants(),
                               vocab=vocab, jobs=args.jobs).report()
    text = json.dumps(metrics, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _load_kb(path) -> KnowledgeBase:
    """Read either clause text or a tab-separated triples file."""
    text = _read(path)
    if "\t" not in text:
        return parse_kb(text)
    vocab = Vocabulary()
    kb = KnowledgeBase(vocab)
    for atom in load_triples(text, vocab):
        kb.add_clause(atom)
    return kb


def cmd_prove(args) -> int:
    if args.checkpoint:
        ckpt = ckpt_mod.load_checkpoint(args.checkpoint)
        kb, emb = ckpt.kb, ckpt.emb
    else:
        kb = _load_kb(args.kb)
        emb = None
    goal = parse_query(args.query, kb.vocab)
    if args.symbolic:
        answers = sym_prove(kb, goal, args.depth)
        if not answers:
            print("no proof")
            return 0
        for psi in answers:
            if psi:
                print(", ".join(f"{render_term(v, kb.vocab)} = "
                                f"{render_term(t, kb.vocab)}"
                                for v, t in psi.items()))
            else:
                print("proved")
        return 0
    if emb is None:
        from .graph import separated_embeddings
        emb = separated_embeddings(len(kb.vocab))
    result = ntp_prove(kb, emb, goal, args.depth, kmax=args.kmax)
    print(json.dumps(trace_to_json(result, kb), indent=2))
    return 0


def cmd_decode(args) -> int:
    ckpt = ckpt_mod.load_checkpoint(args.checkpoint)
    if not ckpt.kb.vocab.parameterized_ids:
        print("")
        return 0
    decoded = decode_rules(ckpt.kb, ckpt.emb)
    text = render_decoded(decoded)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_gen_data(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = gen_countries(seed=args.seed or 0,
                         n_countries=args.countries,
                         n_subregions=args.subregions,
                         n_regions=args.regions,
                         n_dev=args.dev, n_test=args.test)
    (out_dir / "countries.tsv").write_text(data.triples_text())
    for part, names in (("train", data.train_countries),
                        ("dev", data.dev_countries),
                        ("test", data.test_countries)):
        (out_dir / f"{part}.txt").write_text("\n".join(names) + "\n")
    (out_dir / "types.json").write_text(json.dumps(
        {"regions": data.regions, "subregions": data.subregions}, indent=2
    ) + "\n")
    for level, text in COUNTRIES_TEMPLATES.items():
        (out_dir / f"{level}.tmpl").write_text(text)
    (out_dir / "linkpred.tmpl").write_text(LINKPRED_TEMPLATES)
    print(json.dumps({"out": str(out_dir),
                      "triples": len(data.triples),
                      "dev": len(data.dev_countries),
                      "test": len(data.test_countries)}))
    return 0


def _add_hp_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of hyperparameters")
    p.add_argument("--k", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-known", dest="n_known", type=int)
    p.add_argument("--neg-ratio", dest="neg_ratio", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--kmax", type=int, help="0 disables pruning")
    p.add_argument("--mu", type=float)
    p.add_argument("--mode", "--model", dest="mode",
                   choices=("ntp", "ntp-lambda", "complex"))
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ntp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit embeddings on a KB")
    p.add_argument("--kb", required=True, help="triples TSV")
    p.add_argument("--splits", help="directory with train/dev/test files")
    p.add_argument("--task", default="kbc",
                   choices=("kbc", "s1", "s2", "s3"))
    p.add_argument("--templates", help="rule template file")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_hp_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kb", help="triples TSV (countries tasks)")
    p.add_argument("--splits", required=True)
    p.add_argument("--task", default="kbc",
                   choices=("kbc", "s1", "s2", "s3"))
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prove", help="prove one query")
    p.add_argument("--kb", help="clause file (.ntp)")
    p.add_argument("--checkpoint")
    p.add_argument("--query", required=True)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--kmax", type=int)
    p.add_argument("--symbolic", action="store_true")
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("decode", help="print induced rules")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("gen-data", help="write a synthetic geography corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--countries", type=int, default=244)
    p.add_argument("--subregions", type=int, default=23)
    p.add_argument("--regions", type=int, default=5)
    p.add_argument("--dev", type=int, default=20)
    p.add_argument("--test", type=int, default=20)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "depth", None) is not None and args.depth < 1 \
            and args.command == "prove":
        parser.error("--depth must be >= 1")
    if args.command == "prove" and not (args.kb or args.checkpoint):
        parser.error("prove needs --kb or --checkpoint")
    if args.command == "train" and args.task in ("s1", "s2", "s3") \
            and not args.splits:
        parser.error("countries tasks need --splits")
    if args.command == "eval" and args.task in ("s1", "s2", "s3") \
            and not args.kb:
        parser.error("countries tasks need --kb")
    try:
        return args.func(args)
    except (KbError, TrainError, ckpt_mod.CheckpointError,
            GraphNumericsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
