"""Discrete edit actions over prompt states and their enumeration.

Family sizes for a state with ``l`` instruction phrases, ``n`` exemplar
slots over a pool of ``N``, and ``V`` verbalizers:

* instruction: ``l*(l-1)/2 + 2*l``   (pair swaps, one add and one delete per phrase)
* exemplar:    ``n*N - n*(n-1)/2``   (slot-pool swaps, internal pairs de-duplicated)
* verbalizer:  ``(n+1)*V``           (every slot incl. the query, every template)

The exemplar count keeps the ``n`` identity swaps (slot swapped with its own
occupant); they are deliberate no-ops that still extend the edit history.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Iterator, Sequence

from .errors import InvalidAction, InvalidConfig
from .prompts import PromptState, TaskSpec


class Family(IntEnum):
    INSTR_SWAP = 0
    INSTR_ADD = 1
    INSTR_DELETE = 2
    EXEMPLAR_SWAP = 3
    VERBALIZER_CHANGE = 4


NUM_FAMILIES = len(Family)

# Toggle groups exposed in run configuration.
INSTRUCTION_FAMILIES = (Family.INSTR_SWAP, Family.INSTR_ADD, Family.INSTR_DELETE)


@dataclass(frozen=True)
class EditFamilies:
    """Which edit groups are allowed in the catalog."""

    instruction: bool = True
    exemplars: bool = True
    verbalizers: bool = True

    def __post_init__(self):
        if not (self.instruction or self.exemplars or self.verbalizers):
            raise InvalidConfig("at least one edit family must stay enabled")


@dataclass(frozen=True)
class EditAction:
    """One discrete edit.  Index meaning depends on the family:

    * INSTR_SWAP: ``i < j`` phrase positions
    * INSTR_ADD / INSTR_DELETE: ``i`` phrase position (``j`` unused, -1)
    * EXEMPLAR_SWAP: ``i`` slot, ``j`` pool id
    * VERBALIZER_CHANGE: ``i`` slot index (``n`` = query slot), ``j`` verbalizer id
    """

    family: Family
    i: int
    j: int = -1

    def describe(self) -> str:
        if self.family == Family.INSTR_SWAP:
            return f"swap phrases {self.i}<->{self.j}"
        if self.family == Family.INSTR_ADD:
            return f"duplicate phrase {self.i}"
        if self.family == Family.INSTR_DELETE:
            return f"delete phrase {self.i}"
        if self.family == Family.EXEMPLAR_SWAP:
            return f"slot {self.i} <- pool exemplar {self.j}"
        return f"verbalizer of slot {self.i} -> template {self.j}"


def instr_swap(i: int, j: int) -> EditAction:
    return EditAction(Family.INSTR_SWAP, i, j)


def instr_add(i: int) -> EditAction:
    return EditAction(Family.INSTR_ADD, i)


def instr_delete(i: int) -> EditAction:
    return EditAction(Family.INSTR_DELETE, i)


def exemplar_swap(slot: int, pool_id: int) -> EditAction:
    return EditAction(Family.EXEMPLAR_SWAP, slot, pool_id)


def verbalizer_change(slot_index: int, verbalizer_id: int) -> EditAction:
    return EditAction(Family.VERBALIZER_CHANGE, slot_index, verbalizer_id)


_INDEX_BITS = 20
_INDEX_MASK = (1 << _INDEX_BITS) - 1


def encode_action(action: EditAction) -> int:
    """Pack an action into one integer (family tag plus both indices)."""
    return (
        (int(action.family) << (2 * _INDEX_BITS))
        | ((action.i & _INDEX_MASK) << _INDEX_BITS)
        | ((action.j + 1) & _INDEX_MASK)
    )


def decode_action(code: int) -> EditAction:
    family = Family(code >> (2 * _INDEX_BITS))
    i = (code >> _INDEX_BITS) & _INDEX_MASK
    j = (code & _INDEX_MASK) - 1
    return EditAction(family, i, j)


def count_actions(l: int, n: int, N: int, V: int) -> tuple[int, int, int]:
    """Closed-form family sizes ``(instruction, exemplar, verbalizer)``."""
    if min(l, n, N, V) < 0:
        raise InvalidConfig(f"negative size in (l={l}, n={n}, N={N}, V={V})")
    if n > N:
        raise InvalidConfig(f"{n} slots cannot be drawn from a pool of {N}")
    return (l * (l - 1)) // 2 + 2 * l, n * N - (n * (n - 1)) // 2, (n + 1) * V


@dataclass(frozen=True)
class ActionCatalog:
    """Deterministically ordered list of valid actions for one state."""

    actions: tuple[EditAction, ...]
    family_sizes: tuple[int, int, int]

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[EditAction]:
        return iter(self.actions)

    def __getitem__(self, idx: int) -> EditAction:
        return self.actions[idx]

    def index_of(self, action: EditAction) -> int:
        try:
            return self.actions.index(action)
        except ValueError:
            raise InvalidAction(f"{action} is not in the catalog") from None


def enumerate_actions(
    state: PromptState,
    pool_size: int,
    task: TaskSpec,
    families: EditFamilies | None = None,
) -> ActionCatalog:
    """Enumerate every edit valid for ``state`` in a fixed order.

    Order: instruction swaps (i<j lexicographic), adds, deletes; exemplar
    swaps (slot-major, pool-id minor, internal duplicates skipped);
    verbalizer changes (slot-major).  Disabled families contribute nothing.
    """
    families = families or EditFamilies()
    l = state.num_phrases
    n = state.num_slots
    V = len(task.verbalizer_pool)
    if pool_size < n:
        raise InvalidConfig(f"pool of {pool_size} cannot back {n} slots")

    actions: list[EditAction] = []
    sizes = [0, 0, 0]

    if families.instruction:
        for i in range(l):
            for j in range(i + 1, l):
                actions.append(instr_swap(i, j))
        for i in range(l):
            actions.append(instr_add(i))
        for i in range(l):
            actions.append(instr_delete(i))
        sizes[0] = len(actions)

    if families.exemplars:
        before = len(actions)
        slots = state.exemplar_slots
        for slot in range(n):
            earlier = slots[:slot]
            for pool_id in range(pool_size):
                # An internal swap pair is enumerated once, from the smaller slot.
                if pool_id in earlier:
                    continue
                actions.append(exemplar_swap(slot, pool_id))
        sizes[1] = len(actions) - before

    if families.verbalizers:
        before = len(actions)
        for slot_index in range(n + 1):
            for verbalizer_id in range(V):
                actions.append(verbalizer_change(slot_index, verbalizer_id))
        sizes[2] = len(actions) - before

    return ActionCatalog(actions=tuple(actions), family_sizes=tuple(sizes))


def action_is_valid(
    state: PromptState,
    action: EditAction,
    pool_size: int | None = None,
    num_verbalizers: int | None = None,
) -> bool:
    """Membership test equivalent to ``action in enumerate_actions(...)``.

    Bounds that need the pool or verbalizer count are only checked when those
    sizes are supplied.
    """
    l = state.num_phrases
    n = state.num_slots
    fam = action.family
    if fam == Family.INSTR_SWAP:
        return 0 <= action.i < action.j < l
    if fam in (Family.INSTR_ADD, Family.INSTR_DELETE):
        return 0 <= action.i < l
    if fam == Family.EXEMPLAR_SWAP:
        if not 0 <= action.i < n or action.j < 0:
            return False
        if pool_size is not None and action.j >= pool_size:
            return False
        return action.j not in state.exemplar_slots[: action.i]
    if fam == Family.VERBALIZER_CHANGE:
        if not 0 <= action.i <= n or action.j < 0:
            return False
        return num_verbalizers is None or action.j < num_verbalizers
    return False


def apply(
    state: PromptState,
    action: EditAction,
    pool_size: int | None = None,
    num_verbalizers: int | None = None,
) -> PromptState:
    """Apply one edit and return the successor state (input untouched).

    Raises:
        InvalidAction: if the action is not valid for ``state``.
    """
    if not action_is_valid(state, action, pool_size, num_verbalizers):
        raise InvalidAction(f"{action} invalid for l={state.num_phrases}, n={state.num_slots}")

    history = state.history + (action,)
    fam = action.family

    if fam == Family.INSTR_SWAP:
        phrases = list(state.instruction)
        phrases[action.i], phrases[action.j] = phrases[action.j], phrases[action.i]
        return replace(state, instruction=tuple(phrases), history=history)

    if fam == Family.INSTR_ADD:
        phrases = list(state.instruction)
        phrases.insert(action.i + 1, phrases[action.i])
        return replace(state, instruction=tuple(phrases), history=history)

    if fam == Family.INSTR_DELETE:
        phrases = list(state.instruction)
        del phrases[action.i]
        return replace(state, instruction=tuple(phrases), history=history)

    if fam == Family.EXEMPLAR_SWAP:
        slots = list(state.exemplar_slots)
        incoming = action.j
        if incoming in slots:
            other = slots.index(incoming)
            slots[other], slots[action.i] = slots[action.i], slots[other]
        else:
            slots[action.i] = incoming
        return replace(state, exemplar_slots=tuple(slots), history=history)

    verbs = list(state.slot_verbalizers)
    verbs[action.i] = action.j
    return replace(state, slot_verbalizers=tuple(verbs), history=history)
