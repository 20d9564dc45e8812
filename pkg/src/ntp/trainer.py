"""Training loop: corruption sampling, loss assembly, ADAM updates.

Positives are the KB's ground facts; negatives are corruptions sampled
fresh every epoch and rejected if they collide with a known fact.  Each
positive is masked against its own KB entry during proving, so a fact
must be derived from the rest of the knowledge base rather than from
unifying with itself.

Three modes: ``ntp`` trains the prover alone on real-valued embeddings;
``ntp-lambda`` adds a complex bilinear scorer over the same (complex
mode) matrix as an auxiliary objective; ``complex`` trains only that
scorer.  The loss is the summed negative log-likelihood of the clamped
scores against 0/1 targets, plus an l2 penalty on all parameters; the
total gradient is clipped elementwise before the ADAM step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from .batched import KernelCache, prove_batch
from .graph import CLAMP_HI, CLAMP_LO, DEFAULT_MU, EmbeddingMatrix, Graph
from .kb import Atom, KnowledgeBase, RuleTemplate, instantiate_templates
from .linkpred import complex_scores
from .prover import ntp_prove

MODES = ("ntp", "ntp-lambda", "complex")


class TrainError(RuntimeError):
    """Configuration or runtime failure of a training run."""


@dataclass(frozen=True)
class TrainingExample:
    atom: Atom
    y: float


@dataclass
class Hyperparams:
    """Knobs for one run; defaults reproduce the benchmark settings."""

    k: int = 100
    lr: float = 0.001
    n_known: int = 10          # positives per minibatch
    neg_ratio: int = 4         # corruptions per positive
    l2: float = 0.01
    clip: float = 1.0          # elementwise gradient clip to [-clip, clip]
    epochs: int = 100
    depth: int = 2
    kmax: Optional[int] = 10
    mu: float = DEFAULT_MU
    seed: int = 0
    mode: str = "ntp-lambda"

    def validate(self) -> None:
        if self.mode not in MODES:
            raise TrainError(f"mode must be one of {MODES}, not {self.mode!r}")
        positive = {"k": self.k, "lr": self.lr, "n_known": self.n_known,
                    "clip": self.clip, "depth": self.depth, "mu": self.mu}
        for name, v in positive.items():
            if v <= 0:
                raise TrainError(f"{name} must be positive, got {v}")
        for name, v in (("neg_ratio", self.neg_ratio), ("l2", self.l2),
                        ("epochs", self.epochs)):
            if v < 0:
                raise TrainError(f"{name} must be >= 0, got {v}")
        if self.kmax is not None and self.kmax < 1:
            raise TrainError(f"kmax must be >= 1, got {self.kmax}")

    @property
    def emb_mode(self) -> str:
        return "real" if self.mode == "ntp" else "complex"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, cfg: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = set(cfg) - known
        if unknown:
            raise TrainError(f"unknown config keys: {sorted(unknown)}")
        hp = cls(**cfg)
        hp.validate()
        return hp


def sample_corruptions(
    fact: Atom,
    kb: KnowledgeBase,
    rng: np.random.Generator,
    ratio: int,
    *,
    known: Optional[set] = None,
    constants: Optional[Sequence[int]] = None,
    alt_second: bool = False,
    max_tries: int = 100,
) -> list[TrainingExample]:
    """Corrupt a binary fact ``ratio`` times, never producing a known fact.

    Corruption forms cycle through first-argument, second-argument, and
    both-argument replacement, then one extra single-argument form whose
    side is chosen by ``alt_second`` (the caller alternates it).  ``known``
    defaults to the KB's own fact set; supply the full dataset's facts
    when dev/test atoms must be excluded too.
    """
    if len(fact) != 3:
        raise TrainError(f"corruption needs binary facts, got arity "
                         f"{len(fact) - 1}")
    if ratio == 0:
        return []
    pool = list(constants) if constants is not None else kb.constants()
    if not pool:
        raise TrainError("empty constant pool")
    if known is None:
        known = set(kb.fact_ids)
    s, i, j = fact
    forms = [(True, False), (False, True), (True, True),
             (False, True) if alt_second else (True, False)]
    out = []
    for n in range(ratio):
        corrupt_i, corrupt_j = forms[n % len(forms)]
        for attempt in range(max_tries):
            ci = int(pool[rng.integers(len(pool))]) if corrupt_i else i
            cj = int(pool[rng.integers(len(pool))]) if corrupt_j else j
            cand = (s, ci, cj)
            if cand != fact and cand not in known:
                out.append(TrainingExample(cand, 0.0))
                break
        else:
            raise TrainError(
                f"no unseen corruption of {fact} after {max_tries} tries; "
                f"constant pool too small"
            )
    return out


def _nll(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed clamped negative log-likelihood and dLoss/dp (pre-clamp)."""
    pc = np.clip(p, CLAMP_LO, CLAMP_HI)
    loss = float(-(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).sum())
    grad = np.where(y > 0.5, -1.0 / pc, 1.0 / (1.0 - pc))
    grad[(p < CLAMP_LO) | (p > CLAMP_HI)] = 0.0
    return loss, grad


def ntp_loss(batch: Sequence[TrainingExample], kb: KnowledgeBase,
             emb: EmbeddingMatrix, hp: Hyperparams,
             graph: Optional[Graph] = None):
    """Reference scalar-graph loss: one prover run per example.

    Returns the summed -y log p - (1-y) log(1-p) node over the shared
    graph.  The training loop itself uses the batched engine; this node
    form exists for gradient checks and inspection.
    """
    if graph is None:
        graph = Graph(emb)
    terms = []
    for ex in batch:
        mask = kb.fact_id(ex.atom) if ex.y > 0.5 else None
        res = ntp_prove(kb, emb, ex.atom, hp.depth, kmax=hp.kmax,
                        mask_fact=mask, mu=hp.mu, graph=graph, traces=False)
        p = graph.clamp(res.node)
        terms.append(graph.neg_log(p, complement=ex.y <= 0.5))
    return graph.sum_of(terms)


def ntp_lambda_loss(batch: Sequence[TrainingExample], kb: KnowledgeBase,
                    emb: EmbeddingMatrix, hp: Hyperparams,
                    graph: Optional[Graph] = None):
    """Reference joint loss: prover NLL plus the same-form bilinear NLL."""
    if graph is None:
        graph = Graph(emb)
    node = ntp_loss(batch, kb, emb, hp, graph)
    terms = [node]
    for ex in batch:
        s, i, j = (graph.lookup(int(t)) for t in ex.atom)
        p = graph.clamp(graph.complex_score(s, i, j))
        terms.append(graph.neg_log(p, complement=ex.y <= 0.5))
    return graph.sum_of(terms)


@dataclass
class TrainResult:
    emb: EmbeddingMatrix
    history: list
    kb: KnowledgeBase
    param_rules: list           # parameterized rules added from templates


class _Adam:
    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train(
    kb: KnowledgeBase,
    templates: Sequence[RuleTemplate],
    hp: Hyperparams,
    *,
    emb: Optional[EmbeddingMatrix] = None,
    known: Optional[set] = None,
    dev_eval: Optional[Callable[[EmbeddingMatrix], float]] = None,
    log_path=None,
    progress: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Fit embeddings to the KB's facts; mutates ``kb`` with template rules.

    ``known`` widens the corruption rejection set beyond the train facts
    (pass the full dataset when held-out facts exist).  ``dev_eval`` is
    called after every epoch and its value logged.  With ``log_path``
    each epoch appends one JSON line {epoch, loss, dev_metric}.
    """
    hp.validate()
    param_rules = instantiate_templates(templates, kb) if templates else []
    if emb is None:
        emb = EmbeddingMatrix.xavier(len(kb.vocab), hp.k, hp.emb_mode,
                                     seed=hp.seed)
    elif emb.mode != hp.emb_mode:
        raise TrainError(f"mode {hp.mode} needs a {hp.emb_mode}-mode matrix, "
                         f"got {emb.mode}")
    if emb.n_rows < len(kb.vocab):
        raise TrainError("embedding matrix smaller than the vocabulary")

    facts = [r.head for r in kb.rules if r.is_fact]
    bad = [f for f in facts if len(f) != 3]
    if bad and hp.epochs > 0:
        raise TrainError(f"training expects binary facts only; "
                         f"found arity {len(bad[0]) - 1}")
    pool = kb.constants()
    if known is None:
        known = set(kb.fact_ids)

    rng = np.random.default_rng(hp.seed)
    adam = _Adam(emb.data.shape, hp.lr)
    use_prover = hp.mode in ("ntp", "ntp-lambda")
    use_complex = hp.mode in ("ntp-lambda", "complex")
    history: list[dict] = []
    log_file = open(log_path, "a") if log_path is not None else None
    try:
        for epoch in range(1, hp.epochs + 1):
            order = rng.permutation(len(facts))
            epoch_loss = 0.0
            n_examples = 0
            for start in range(0, len(order), hp.n_known):
                chunk = order[start:start + hp.n_known]
                batch: list[TrainingExample] = []
                for pos, fi in enumerate(chunk):
                    fact = facts[fi]
                    batch.append(TrainingExample(fact, 1.0))
                    batch.extend(sample_corruptions(
                        fact, kb, rng, hp.neg_ratio, known=known,
                        constants=pool, alt_second=bool((start + pos) % 2),
                    ))
                goals = np.array([ex.atom for ex in batch], dtype=np.int64)
                y = np.array([ex.y for ex in batch])
                loss = 0.0
                grad = np.zeros_like(emb.data)
                if use_prover:
                    mask = np.array(
                        [kb.fact_ids.get(ex.atom, -1) if ex.y > 0.5 else -1
                         for ex in batch], dtype=np.int64)
                    res = prove_batch(kb, emb, goals, hp.depth, kmax=hp.kmax,
                                      mask_ids=mask, mu=hp.mu,
                                      cache=KernelCache(emb.data, hp.mu))
                    part, dp = _nll(res.scores, y)
                    loss += part
                    grad += res.backward(dp)
                if use_complex:
                    scores, backward = complex_scores(emb, goals)
                    part, dp = _nll(scores, y)
                    loss += part
                    grad += backward(dp)
                loss += hp.l2 * float((emb.data * emb.data).sum())
                grad += 2.0 * hp.l2 * emb.data
                if not np.isfinite(loss):
                    raise TrainError(
                        f"loss diverged at epoch {epoch}, "
                        f"batch {start // hp.n_known}"
                    )
                np.clip(grad, -hp.clip, hp.clip, out=grad)
                step = adam.step(grad)
                emb.data[emb.trainable] -= step[emb.trainable]
                epoch_loss += loss
                n_examples += len(batch)
            record = {
                "epoch": epoch,
                "loss": epoch_loss / max(n_examples, 1),
                "dev_metric": dev_eval(emb) if dev_eval is not None else None,
            }
            history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if progress is not None:
                progress(record)
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(emb=emb, history=history, kb=kb,
                       param_rules=param_rules)
