"""Shared fixtures: a small two-class task, an exemplar pool with disjoint
per-class vocabularies, and environments built on the synthetic scorer."""
import numpy as np
import pytest

from promptedit.data import index_pool, make_synthetic_dataset
from promptedit.env import EnvConfig, PromptEditEnv
from promptedit.prompts import PromptState, TaskSpec, VerbalizerTemplate
from promptedit.scoring import SyntheticScorer


def make_task(num_labels: int = 2, num_verbalizers: int = 3) -> TaskSpec:
    labels = tuple(f"class{c}" for c in range(num_labels))
    # label words like "v0c1" never collide with the synthetic vocab "w{c}x{j}"
    word_sets = [
        {f"class{c}": f"v{v}c{c}" for c in range(num_labels)} for v in range(num_verbalizers)
    ]
    patterns = [
        "Input: {{text}} Output: {{answer_choices[label]}}",
        "Q: {{text}} A: {{answer_choices[label]}}",
        "Text: {{text}} Label: {{answer_choices[label]}}",
        "Case: {{text}} Tag: {{answer_choices[label]}}",
    ]
    verbalizers = tuple(
        VerbalizerTemplate(id=v, pattern=patterns[v % len(patterns)], label_words=word_sets[v])
        for v in range(num_verbalizers)
    )
    return TaskSpec(
        task_name="toy",
        label_space=labels,
        verbalizer_pool=verbalizers,
        instruction_pool=("First phrase, second phrase, and the last phrase.",),
        max_render_length=256,
    )


@pytest.fixture
def task() -> TaskSpec:
    return make_task()


@pytest.fixture
def pool(task):
    # 6 exemplars, 3 per class, texts drawn from disjoint vocabularies
    return index_pool(make_synthetic_dataset(task, per_class=3, seed=7))


@pytest.fixture
def scorer(task, pool):
    return SyntheticScorer(task, pool)


@pytest.fixture
def env_config():
    return EnvConfig(horizon=4, n_exemplars=2, pool_size=6)


@pytest.fixture
def env(task, pool, scorer, env_config):
    return PromptEditEnv(task, pool, scorer, env_config)


@pytest.fixture
def state(task) -> PromptState:
    return PromptState(
        instruction=("First phrase,", "second phrase,", "and the last phrase."),
        exemplar_slots=(0, 3),
        slot_verbalizers=(0, 0, 0),
        query="w0x0 w0x1 w0x2",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
