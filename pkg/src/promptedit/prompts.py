"""Structured prompts and deterministic rendering.

A prompt is an instruction (a list of phrases), an ordered list of in-context
exemplar slots, one verbalizer choice per slot plus one for the query, and the
query itself.  Rendering flattens that structure into the text a scorer sees.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import yaml

from .errors import InvalidConfig, InvalidInstruction, RenderOverflow

if TYPE_CHECKING:
    from .actions import EditAction

# Answer-slot placeholder, written exactly as it appears in template files.
ANSWER_SLOT = "answer_choices[label]"

_PLACEHOLDER = re.compile(r"\{\{\s*(.*?)\s*\}\}")

# A phrase boundary is sentence-internal punctuation (optionally followed by a
# closing quote/bracket) and then whitespace.  Punctuation stays with the
# phrase on its left.
_PHRASE_BOUNDARY = re.compile(r"([.!?,;][\"'’”)\]]*)\s+")


def tokenize_instruction(raw: str) -> list[str]:
    """Split an instruction into phrases at punctuation boundaries.

    Joining the result with single spaces reproduces the input up to
    whitespace collapsing, and re-tokenizing the joined text is stable.

    Raises:
        InvalidInstruction: if ``raw`` is empty or whitespace-only.
    """
    if not raw or not raw.strip():
        raise InvalidInstruction("instruction text is empty")
    text = " ".join(raw.split())
    pieces = _PHRASE_BOUNDARY.split(text)
    phrases = []
    for k in range(0, len(pieces) - 1, 2):
        phrases.append(pieces[k] + pieces[k + 1])
    tail = pieces[-1].strip()
    if tail:
        phrases.append(tail)
    return [p for p in phrases if p]


@dataclass(frozen=True)
class VerbalizerTemplate:
    """A pattern with one answer slot plus the label words that fill it.

    Placeholders use double braces.  ``{{answer_choices[label]}}`` is the
    answer slot, ``{{"word"}}`` inserts the quoted word literally, and any
    other ``{{name}}`` is replaced by the query/exemplar text.
    """

    id: int
    pattern: str
    label_words: Mapping[str, str]

    def __post_init__(self):
        slots = self.placeholders()
        answers = [p for p in slots if p == ANSWER_SLOT]
        texts = [p for p in slots if p != ANSWER_SLOT and not _is_literal(p)]
        if len(answers) != 1:
            raise InvalidConfig(
                f"verbalizer {self.id} must contain exactly one answer slot, found {len(answers)}"
            )
        if not texts:
            raise InvalidConfig(f"verbalizer {self.id} has no text placeholder")

    def placeholders(self) -> list[str]:
        return _PLACEHOLDER.findall(self.pattern)

    def fill(self, text: str, answer: str) -> str:
        """Render the pattern with the given input text and answer word."""

        def sub(match: re.Match) -> str:
            name = match.group(1)
            if name == ANSWER_SLOT:
                return answer
            if _is_literal(name):
                return name.strip("\"'")
            return text

        return _PLACEHOLDER.sub(sub, self.pattern)


def _is_literal(placeholder: str) -> bool:
    return placeholder[:1] in ("\"", "'")


@dataclass(frozen=True)
class Exemplar:
    """A labeled example from the pool. ``id`` is its index in the pool."""

    id: int
    text: str
    label: str


@dataclass(frozen=True)
class TaskSpec:
    """Everything static about a classification task.

    ``label_space`` fixes the class order used for log-probability vectors.
    """

    task_name: str
    label_space: tuple[str, ...]
    verbalizer_pool: tuple[VerbalizerTemplate, ...]
    instruction_pool: tuple[str, ...]
    max_render_length: int = 512
    mask_token: str = "<mask>"

    def __post_init__(self):
        if not self.label_space:
            raise InvalidConfig(f"task {self.task_name!r} has an empty label space")
        if len(set(self.label_space)) != len(self.label_space):
            raise InvalidConfig(f"task {self.task_name!r} has duplicate labels")
        if not self.verbalizer_pool:
            raise InvalidConfig(f"task {self.task_name!r} has no verbalizers")
        for template in self.verbalizer_pool:
            missing = [lab for lab in self.label_space if lab not in template.label_words]
            if missing:
                raise InvalidConfig(
                    f"verbalizer {template.id} of task {self.task_name!r} lacks label words for {missing}"
                )

    @property
    def num_labels(self) -> int:
        return len(self.label_space)

    def label_index(self, label: str) -> int:
        try:
            return self.label_space.index(label)
        except ValueError:
            raise InvalidConfig(f"label {label!r} not in task {self.task_name!r}") from None


@dataclass(frozen=True)
class PromptState:
    """The symbolic half of an episode state.

    ``exemplar_slots`` holds pool ids (no duplicates); ``slot_verbalizers``
    has one entry per exemplar slot plus a final entry for the query.
    """

    instruction: tuple[str, ...]
    exemplar_slots: tuple[int, ...]
    slot_verbalizers: tuple[int, ...]
    query: str
    history: tuple["EditAction", ...] = field(default=())

    def __post_init__(self):
        if len(set(self.exemplar_slots)) != len(self.exemplar_slots):
            raise InvalidConfig(f"duplicate exemplar ids in slots: {self.exemplar_slots}")
        if len(self.slot_verbalizers) != len(self.exemplar_slots) + 1:
            raise InvalidConfig(
                "slot_verbalizers must have one entry per exemplar slot plus one for the query "
                f"(got {len(self.slot_verbalizers)} for {len(self.exemplar_slots)} slots)"
            )

    @property
    def num_phrases(self) -> int:
        return len(self.instruction)

    @property
    def num_slots(self) -> int:
        return len(self.exemplar_slots)

    @property
    def query_verbalizer(self) -> int:
        return self.slot_verbalizers[-1]


def _check_verbalizer_ids(state: PromptState, task: TaskSpec) -> None:
    pool_size = len(task.verbalizer_pool)
    for vid in state.slot_verbalizers:
        if not 0 <= vid < pool_size:
            raise InvalidConfig(f"verbalizer id {vid} outside pool of size {pool_size}")


def _token_count(text: str) -> int:
    return len(text.split())


def render(state: PromptState, task: TaskSpec, pool: Sequence[Exemplar]) -> str:
    """Flatten a prompt state to scorer-ready text.

    Layout is instruction first, exemplar blocks next, query block last, one
    block per line.  The query's answer slot carries the task's mask token.
    When the whitespace-token count exceeds ``task.max_render_length``, whole
    exemplars are dropped oldest slot first, then instruction phrases front
    first; the query block is never truncated.

    Raises:
        RenderOverflow: if the query block alone exceeds the budget.
    """
    _check_verbalizer_ids(state, task)
    by_id = {ex.id: ex for ex in pool}

    exemplar_blocks = []
    for slot, ex_id in enumerate(state.exemplar_slots):
        if ex_id not in by_id:
            raise InvalidConfig(f"exemplar id {ex_id} not present in the pool")
        ex = by_id[ex_id]
        template = task.verbalizer_pool[state.slot_verbalizers[slot]]
        word = template.label_words[ex.label]
        exemplar_blocks.append(template.fill(ex.text, word))

    query_template = task.verbalizer_pool[state.query_verbalizer]
    query_block = query_template.fill(state.query, task.mask_token)

    budget = task.max_render_length
    if _token_count(query_block) > budget:
        raise RenderOverflow(
            f"query block needs {_token_count(query_block)} tokens, budget is {budget}"
        )

    instruction_phrases = list(state.instruction)

    def total() -> int:
        parts = []
        if instruction_phrases:
            parts.append(" ".join(instruction_phrases))
        parts.extend(exemplar_blocks)
        parts.append(query_block)
        return sum(_token_count(p) for p in parts)

    while total() > budget and exemplar_blocks:
        exemplar_blocks.pop(0)
    while total() > budget and instruction_phrases:
        instruction_phrases.pop(0)

    blocks = []
    if instruction_phrases:
        blocks.append(" ".join(instruction_phrases))
    blocks.extend(exemplar_blocks)
    blocks.append(query_block)
    return "\n".join(blocks)


def load_task_specs(path: str) -> dict[str, TaskSpec]:
    """Load task records (labels, instruction pool, verbalizers) from YAML."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "tasks" not in doc:
        raise InvalidConfig(f"seed file {path!r} has no top-level 'tasks' list")
    specs: dict[str, TaskSpec] = {}
    for record in doc["tasks"]:
        verbalizers = tuple(
            VerbalizerTemplate(id=k, pattern=v["pattern"], label_words=dict(v["label_words"]))
            for k, v in enumerate(record["verbalizers"])
        )
        spec = TaskSpec(
            task_name=record["name"],
            label_space=tuple(record["labels"]),
            verbalizer_pool=verbalizers,
            instruction_pool=tuple(record.get("instructions", ())),
            max_render_length=int(record.get("max_render_length", 512)),
            mask_token=record.get("mask_token", "<mask>"),
        )
        specs[spec.task_name] = spec
    return specs


def builtin_seed_path() -> str:
    """Path of the task seed file shipped with the package."""
    from importlib.resources import files

    return str(files("promptedit").joinpath("seeds/default_tasks.yaml"))
