"""Dataset loading and seeded few-shot split sampling.

Input data is line-delimited JSON with ``text`` and ``label`` fields.  The
few-shot sampler draws K train and K dev examples per class plus a separate
exemplar pool, all disjoint and fully determined by the seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InsufficientData, InvalidTask
from .prompts import Exemplar, TaskSpec


@dataclass(frozen=True)
class DatasetSplit:
    records: tuple[tuple[str, str], ...]
    role: str

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def load_jsonl(path, task: TaskSpec | None = None) -> list[tuple[str, str]]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if "text" not in row or "label" not in row:
                raise InvalidTask(f"{path}:{lineno}: record needs 'text' and 'label' fields")
            text, label = str(row["text"]), str(row["label"])
            if task is not None and label not in task.label_space:
                raise InvalidTask(f"{path}:{lineno}: label {label!r} not in task label space")
            records.append((text, label))
    return records


def index_pool(records: Sequence[tuple[str, str]]) -> tuple[Exemplar, ...]:
    """Assign positional ids so pool[i].id == i."""
    return tuple(Exemplar(id=i, text=text, label=label) for i, (text, label) in enumerate(records))


def _pool_quota(pool_size: int, num_classes: int) -> list[int]:
    base, rem = divmod(pool_size, num_classes)
    return [base + (1 if c < rem else 0) for c in range(num_classes)]


def sample_few_shot(
    dataset: Sequence[tuple[str, str]],
    k: int,
    seed: int,
    task: TaskSpec,
    pool_size: int,
) -> tuple[DatasetSplit, DatasetSplit, tuple[Exemplar, ...]]:
    """Split a dataset into K-per-class train/dev plus an exemplar pool.

    Train, dev, and pool are pairwise disjoint; the pool is class-balanced
    up to remainder.  Identical seeds give identical splits.
    """
    by_class: dict[str, list[int]] = {label: [] for label in task.label_space}
    for i, (_, label) in enumerate(dataset):
        if label not in by_class:
            raise InvalidTask(f"dataset label {label!r} not in task label space")
        by_class[label].append(i)

    quotas = _pool_quota(pool_size, task.num_labels)
    needed = {label: 2 * k + quotas[c] for c, label in enumerate(task.label_space)}
    short = {label: len(idx) for label, idx in by_class.items() if len(idx) < needed[label]}
    if short:
        raise InsufficientData(
            f"need {needed} examples per class, have {short}", per_class_counts=short
        )

    rng = np.random.default_rng(seed)
    train: list[tuple[str, str]] = []
    dev: list[tuple[str, str]] = []
    pool_records: list[tuple[str, str]] = []
    for c, label in enumerate(task.label_space):
        order = rng.permutation(by_class[label])
        train.extend(dataset[i] for i in order[:k])
        dev.extend(dataset[i] for i in order[k : 2 * k])
        pool_records.extend(dataset[i] for i in order[2 * k : 2 * k + quotas[c]])
    return (
        DatasetSplit(tuple(train), "train"),
        DatasetSplit(tuple(dev), "dev"),
        index_pool(pool_records),
    )


def make_synthetic_dataset(
    task: TaskSpec,
    per_class: int,
    seed: int,
    words_per_class: int = 12,
    min_len: int = 4,
    max_len: int = 6,
) -> list[tuple[str, str]]:
    """Generate texts with disjoint per-class vocabularies.

    Disjointness makes the lexical-overlap scorer informative: a query only
    ever shares tokens with exemplars of its own class, so there is a
    recoverable signal for the policy to exploit.
    """
    rng = np.random.default_rng(seed)
    vocab = {
        label: [f"w{c}x{j}" for j in range(words_per_class)]
        for c, label in enumerate(task.label_space)
    }
    records = []
    for label in task.label_space:
        for _ in range(per_class):
            length = int(rng.integers(min_len, max_len + 1))
            words = rng.choice(vocab[label], size=length, replace=True)
            records.append((" ".join(words), label))
    return records
