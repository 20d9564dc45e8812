"""Differentiable backward chaining over knowledge bases, with rule induction."""

__version__ = "0.1.0"

from .kb import (  # noqa: F401
    Atom,
    KbError,
    KnowledgeBase,
    Rule,
    RuleTemplate,
    Var,
    Vocabulary,
    instantiate_templates,
    load_triples,
    parse_kb,
    parse_query,
    parse_templates,
    render_kb,
    split_dataset,
)
from .graph import (  # noqa: F401
    EmbeddingMatrix,
    Graph,
    GraphNumericsError,
    separated_embeddings,
)
from .prover import ntp_prove  # noqa: F401
from .oracle import sym_provable, sym_prove  # noqa: F401
from .batched import BatchResult, KernelCache, batch_unify, prove_batch  # noqa: F401
from .linkpred import complex_scores, score  # noqa: F401
from .trainer import (  # noqa: F401
    Hyperparams,
    TrainError,
    TrainingExample,
    ntp_lambda_loss,
    ntp_loss,
    sample_corruptions,
    train,
)
from .evaluate import (  # noqa: F401
    DecodedRule,
    auc_pr,
    decode_rules,
    rank_fact,
    ranking_eval,
)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint  # noqa: F401
