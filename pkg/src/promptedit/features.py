"""Fixed-width feature rows for edit-action candidates.

Each action becomes one row: its family tag plus summaries of the objects it
touches.  Instruction edits carry normalized phrase indices; exemplar swaps
carry query-overlap fractions and label identities of the outgoing and
incoming exemplars (rendered with the query slot's verbalizer, so the row
reflects what the prompt would actually contain); verbalizer changes carry
the target verbalizer one-hot and the slot position.  History tokens reuse
the row of the action that was taken.
"""
from __future__ import annotations

import numpy as np

from .actions import ActionCatalog, EditAction, Family
from .errors import InvalidConfig
from .prompts import Exemplar, PromptState, TaskSpec
from .scoring import MAX_CLASSES, MAX_VERBALIZERS, text_tokens

# Row layout: family one-hot | i_norm, j_norm | outgoing overlap + label
# one-hot | incoming overlap + label one-hot | verbalizer one-hot, slot_norm,
# query flag.
_FAMILY = 0
_INSTR = _FAMILY + len(Family)
_EX_OUT = _INSTR + 2
_EX_IN = _EX_OUT + 1 + MAX_CLASSES
_VB = _EX_IN + 1 + MAX_CLASSES
_VB_SLOT = _VB + MAX_VERBALIZERS
_VB_QUERY = _VB_SLOT + 1
CANDIDATE_DIM = _VB_QUERY + 1


class CandidateFeaturizer:
    """Turns (state, catalog) into a float64 matrix, one row per action."""

    def __init__(self, task: TaskSpec, pool: tuple[Exemplar, ...] | list[Exemplar]):
        if task.num_labels > MAX_CLASSES:
            raise InvalidConfig(f"featurizer caps classes at {MAX_CLASSES}")
        if len(task.verbalizer_pool) > MAX_VERBALIZERS:
            raise InvalidConfig(f"featurizer caps verbalizers at {MAX_VERBALIZERS}")
        self.task = task
        self.pool = tuple(pool)
        self._label_idx = {ex.id: task.label_index(ex.label) for ex in self.pool}
        self._by_id = {ex.id: ex for ex in self.pool}
        # token sets of exemplar rendered with each verbalizer, filled lazily
        self._rendered: dict[tuple[int, int], frozenset[str]] = {}

    def _exemplar_tokens(self, ex_id: int, verbalizer_id: int) -> frozenset[str]:
        key = (ex_id, verbalizer_id)
        cached = self._rendered.get(key)
        if cached is None:
            ex = self._by_id[ex_id]
            template = self.task.verbalizer_pool[verbalizer_id]
            cached = text_tokens(template.fill(ex.text, template.label_words[ex.label]))
            self._rendered[key] = cached
        return cached

    def featurize_action(self, state: PromptState, action: EditAction) -> np.ndarray:
        row = np.zeros(CANDIDATE_DIM, dtype=np.float64)
        row[_FAMILY + int(action.family)] = 1.0
        if action.family in (Family.INSTR_SWAP, Family.INSTR_ADD, Family.INSTR_DELETE):
            denom = float(max(state.num_phrases, 1))
            row[_INSTR] = action.i / denom
            row[_INSTR + 1] = (action.j if action.j >= 0 else action.i) / denom
        elif action.family == Family.EXEMPLAR_SWAP:
            query = text_tokens(state.query)
            q_denom = float(max(len(query), 1))
            vb = state.query_verbalizer
            out_id = state.exemplar_slots[action.i]
            in_id = action.j
            row[_EX_OUT] = len(query & self._exemplar_tokens(out_id, vb)) / q_denom
            row[_EX_OUT + 1 + self._label_idx[out_id]] = 1.0
            row[_EX_IN] = len(query & self._exemplar_tokens(in_id, vb)) / q_denom
            row[_EX_IN + 1 + self._label_idx[in_id]] = 1.0
        else:
            row[_VB + action.j] = 1.0
            row[_VB_SLOT] = action.i / float(max(state.num_slots, 1))
            row[_VB_QUERY] = 1.0 if action.i == state.num_slots else 0.0
        return row

    def featurize_catalog(self, state: PromptState, catalog: ActionCatalog) -> np.ndarray:
        rows = np.zeros((len(catalog), CANDIDATE_DIM), dtype=np.float64)
        for k, action in enumerate(catalog):
            rows[k] = self.featurize_action(state, action)
        return rows
