"""Versioned JSON checkpoints: vocabulary, clauses, embeddings, config.

The clause list is stored as rendered text; re-parsing it against the
restored vocabulary reproduces symbol ids exactly, so embedding rows
stay aligned.  Floats round-trip losslessly through JSON's shortest
repr.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import EmbeddingMatrix
from .kb import KnowledgeBase, Vocabulary, parse_kb, render_kb

FORMAT = "ntp-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed, mismatched, or unsupported checkpoint file."""


@dataclass
class Checkpoint:
    kb: KnowledgeBase
    emb: EmbeddingMatrix
    config: dict

    def save(self, path) -> None:
        payload = {
            "format": FORMAT,
            "version": VERSION,
            "config": self.config,
            "vocab": {
                "names": self.kb.vocab.names(),
                "predicate_ids": sorted(self.kb.vocab.predicate_ids),
                "parameterized_ids": sorted(self.kb.vocab.parameterized_ids),
            },
            "clauses": render_kb(self.kb),
            "embeddings": {
                "k": self.emb.k,
                "mode": self.emb.mode,
                "data": self.emb.data.tolist(),
            },
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)
            fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"not a checkpoint file: {exc}") from None
    if payload.get("format") != FORMAT:
        raise CheckpointError(f"unrecognized format {payload.get('format')!r}")
    if payload.get("version") != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload.get('version')!r}"
        )
    vocab = Vocabulary()
    for name in payload["vocab"]["names"]:
        vocab.intern(name)
    vocab.predicate_ids.update(payload["vocab"]["predicate_ids"])
    vocab.parameterized_ids.update(payload["vocab"]["parameterized_ids"])
    kb = parse_kb(payload["clauses"], vocab)
    e = payload["embeddings"]
    data = np.array(e["data"], dtype=np.float64)
    if data.shape[0] != len(vocab):
        raise CheckpointError(
            f"embedding rows ({data.shape[0]}) do not match the "
            f"vocabulary ({len(vocab)})"
        )
    emb = EmbeddingMatrix(data, int(e["k"]), e["mode"])
    return Checkpoint(kb=kb, emb=emb, config=payload.get("config", {}))
