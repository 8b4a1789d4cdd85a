"""Learned prompt editing for few-shot classification.

Starting from an initial prompt (instruction phrases, in-context exemplars,
verbalizer templates), a small attention policy trained with clipped-ratio
policy optimization applies a short sequence of discrete edits per query to
maximize a label-margin score.
"""
from .actions import (
    ActionCatalog,
    EditAction,
    EditFamilies,
    Family,
    apply,
    count_actions,
    decode_action,
    encode_action,
    enumerate_actions,
)
from .data import DatasetSplit, index_pool, load_jsonl, make_synthetic_dataset, sample_few_shot
from .env import EnvConfig, EpisodeTrace, PromptEditEnv, collect_rollouts
from .errors import (
    ConfigMismatch,
    EmptySplit,
    EpisodeFinished,
    InsufficientData,
    InvalidAction,
    InvalidConfig,
    InvalidInstruction,
    InvalidTask,
    NoActions,
    NonFiniteLoss,
    NoTape,
    PromptEditError,
    ProtocolError,
    RenderOverflow,
    ScorerUnavailable,
    ShapeError,
)
from .evaluate import EvalResult, evaluate_split, predict_label
from .features import CANDIDATE_DIM, CandidateFeaturizer
from .network import (
    Adam,
    NetworkConfig,
    PolicyNetwork,
    RunningMoments,
    load_checkpoint,
    load_policy,
    save_checkpoint,
    save_policy,
)
from .ppo import PPOConfig, RolloutBuffer, compute_gae, ppo_update
from .prompts import (
    Exemplar,
    PromptState,
    TaskSpec,
    VerbalizerTemplate,
    builtin_seed_path,
    load_task_specs,
    render,
    tokenize_instruction,
)
from .remote import RemoteScorer
from .scoring import (
    ScoreWeights,
    ScorerObservation,
    SyntheticScorer,
    SyntheticScorerParams,
    compute_s,
)
from .train import TrainConfig, TrainResult, train

__version__ = "0.1.0"
