"""Label log-probabilities, state features, and the margin score.

The margin score of a prompt for a query with correct class ``c`` is

    s = lambda_pos * log P(c) - lambda_neg * max_{c' != c} log P(c')

which is positive when the correct label dominates and negative otherwise.
Two scorer implementations exist: a deterministic synthetic scorer used for
training and verification at desk scale, and a remote client (see
``promptedit.remote``) that defers to an external language-model server.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidConfig, InvalidTask
from .prompts import Exemplar, PromptState, TaskSpec

# Feature-vector layout caps.  Tasks must fit under these so that the
# observation dimension stays constant across runs.
MAX_CLASSES = 8
MAX_VERBALIZERS = 8
DEFAULT_FEATURE_DIM = 32


@dataclass(frozen=True)
class ScoreWeights:
    """Balancing coefficients for the correct and runner-up log-probs."""

    lambda_pos: float = 2.0
    lambda_neg: float = 1.8

    def __post_init__(self):
        if self.lambda_pos <= 0 or self.lambda_neg <= 0:
            raise InvalidConfig("score weights must be positive")


@dataclass(frozen=True)
class ScorerObservation:
    """Per-(prompt, query) label log-probabilities plus a feature vector."""

    label_log_probs: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        log_probs = np.asarray(self.label_log_probs, dtype=np.float64)
        feats = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "label_log_probs", log_probs)
        object.__setattr__(self, "features", feats)
        total = float(np.exp(log_probs).sum())
        if abs(total - 1.0) > 1e-6:
            raise InvalidConfig(f"label probabilities sum to {total}, expected 1")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def compute_s(
    obs: ScorerObservation | np.ndarray | Sequence[float],
    correct: int,
    weights: ScoreWeights,
) -> float:
    """Margin score of one observation given the correct label index."""
    log_probs = obs.label_log_probs if isinstance(obs, ScorerObservation) else np.asarray(obs, dtype=np.float64)
    num_labels = log_probs.shape[0]
    if num_labels < 2:
        raise InvalidTask(f"need at least 2 labels to score, got {num_labels}")
    if not 0 <= correct < num_labels:
        raise InvalidConfig(f"correct label index {correct} outside [0, {num_labels})")
    runner_up = max(log_probs[c] for c in range(num_labels) if c != correct)
    return weights.lambda_pos * float(log_probs[correct]) - weights.lambda_neg * float(runner_up)


def text_tokens(text: str) -> frozenset[str]:
    """Lower-cased whitespace token set with edge punctuation stripped."""
    return frozenset(tok.strip(".,;:!?\"'()[]") for tok in text.lower().split()) - {""}


@dataclass(frozen=True)
class SyntheticScorerParams:
    """Weights of the deterministic synthetic scorer.

    Per class ``c`` the logit is

        alpha * |query tokens  ∩  tokens of slot exemplars labeled c|
        + beta * [query verbalizer id == preferred_verbalizer[c]]
        + gamma / (1 + l)

    The gamma term is shared by every class, so it shifts logits without
    moving probabilities; it is kept so the raw logits reflect instruction
    length.  ``preferred_verbalizer`` maps class index -> verbalizer id.
    """

    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 0.5
    preferred_verbalizer: tuple[int, ...] = ()


class SyntheticScorer:
    """Deterministic scorer over prompt structure; no language model needed.

    Feature vector: per-class overlaps (``MAX_CLASSES`` entries), one-hot of
    the query verbalizer (``MAX_VERBALIZERS``), instruction length, slot
    count, zero-padded to ``feature_dim``.
    """

    def __init__(
        self,
        task: TaskSpec,
        pool: Sequence[Exemplar],
        params: SyntheticScorerParams | None = None,
        feature_dim: int = DEFAULT_FEATURE_DIM,
    ):
        num_verbalizers = len(task.verbalizer_pool)
        if task.num_labels > MAX_CLASSES:
            raise InvalidConfig(f"synthetic scorer caps classes at {MAX_CLASSES}")
        if num_verbalizers > MAX_VERBALIZERS:
            raise InvalidConfig(f"synthetic scorer caps verbalizers at {MAX_VERBALIZERS}")
        if feature_dim < MAX_CLASSES + MAX_VERBALIZERS + 2:
            raise InvalidConfig(f"feature_dim {feature_dim} too small for the layout")
        if params is None:
            params = SyntheticScorerParams(
                preferred_verbalizer=tuple(
                    (c + 1) % num_verbalizers for c in range(task.num_labels)
                )
            )
        if len(params.preferred_verbalizer) != task.num_labels:
            raise InvalidConfig("preferred_verbalizer needs one entry per class")
        self.task = task
        self.pool = tuple(pool)
        self.params = params
        self.feature_dim = feature_dim
        self._tokens_by_id = {ex.id: text_tokens(ex.text) for ex in self.pool}
        self._label_by_id = {ex.id: task.label_index(ex.label) for ex in self.pool}

    def _observation(
        self, overlaps: np.ndarray, logits: np.ndarray, verbalizer_id: int | None, l: int, n: int
    ) -> ScorerObservation:
        features = np.zeros(self.feature_dim, dtype=np.float64)
        features[: self.task.num_labels] = overlaps
        if verbalizer_id is not None:
            features[MAX_CLASSES + verbalizer_id] = 1.0
        features[MAX_CLASSES + MAX_VERBALIZERS] = float(l)
        features[MAX_CLASSES + MAX_VERBALIZERS + 1] = float(n)
        return ScorerObservation(label_log_probs=log_softmax(logits), features=features)

    def score_state(self, state: PromptState) -> ScorerObservation:
        """Score a prompt from its structure (exact synthetic formula)."""
        params = self.params
        query = text_tokens(state.query)
        num_labels = self.task.num_labels
        overlaps = np.zeros(num_labels, dtype=np.float64)
        for c in range(num_labels):
            union: set[str] = set()
            for ex_id in state.exemplar_slots:
                if self._label_by_id[ex_id] == c:
                    union |= self._tokens_by_id[ex_id]
            overlaps[c] = len(query & union)
        vb = state.query_verbalizer
        logits = params.alpha * overlaps + params.gamma / (1.0 + state.num_phrases)
        for c in range(num_labels):
            if vb == params.preferred_verbalizer[c]:
                logits[c] += params.beta
        return self._observation(overlaps, logits, vb, state.num_phrases, state.num_slots)

    def score_prompt(self, rendered: str, label_words: Sequence[str]) -> ScorerObservation:
        """Score rendered text alone.

        Recovers only the lexical-overlap term: blocks ending with a label
        word count as exemplars of that class, the block holding the mask
        token is the query.  The verbalizer-preference term needs structure
        the text does not carry and is omitted here.
        """
        blocks = [b for b in rendered.split("\n") if b.strip()]
        mask = self.task.mask_token
        query_blocks = [b for b in blocks if mask in b]
        if len(query_blocks) != 1:
            raise InvalidConfig(f"rendered text must contain exactly one {mask!r} block")
        query_block = query_blocks[0]
        query = text_tokens(query_block.replace(mask, " "))

        words = [w.lower() for w in label_words]
        class_tokens: list[set[str]] = [set() for _ in words]
        n_exemplars = 0
        for block in blocks:
            if block is query_block:
                continue
            last = block.split()[-1].strip(".,;:!?\"'()[]").lower() if block.split() else ""
            if last in words:
                class_tokens[words.index(last)] |= text_tokens(block)
                n_exemplars += 1
        overlaps = np.array([len(query & toks) for toks in class_tokens], dtype=np.float64)
        logits = self.params.alpha * overlaps
        return self._observation(overlaps, logits, None, 0, n_exemplars)


def fallback_text_features(
    rendered: str, num_labels: int, feature_dim: int = DEFAULT_FEATURE_DIM
) -> np.ndarray:
    """Deterministic features for remote responses that omit their own.

    Cheap text summaries: block count, token counts, and per-position token
    histogram buckets, padded to ``feature_dim``.
    """
    blocks = [b for b in rendered.split("\n") if b.strip()]
    tokens = rendered.split()
    features = np.zeros(feature_dim, dtype=np.float64)
    features[0] = len(blocks)
    features[1] = len(tokens)
    features[2] = len(set(tokens))
    features[3] = float(num_labels)
    for tok in tokens:
        # crc32, not hash(): string hashing is salted per process.
        bucket = 4 + (zlib.crc32(tok.encode()) % (feature_dim - 4) if feature_dim > 4 else 0)
        features[bucket] += 1.0
    return features


def state_score(
    scorer, state: PromptState, correct: int, weights: ScoreWeights
) -> tuple[float, ScorerObservation]:
    """Convenience: observation plus margin score for one state."""
    obs = scorer.score_state(state)
    return compute_s(obs, correct, weights), obs
