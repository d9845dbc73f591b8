"""Global alignment of canonical vs target phonemes and label derivation.

The aligner fills a score matrix over target rows and canonical columns and
traces back deterministically (diagonal > up > left on ties, i.e. prefer
substitutions over deletions over insertions). From the alignment we derive
the per-target-position error states, the gap-padded canonical string the
recognition head is trained on, and the mask that drops deleted positions
from that auxiliary loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .phonemes import PhonemeInventory, PhonemeSequence, PhonemeError

GAP = -1  # slot sentinel: no phoneme on this side of the column

OP_MATCH = "match"
OP_SUB = "substitution"
OP_DEL = "deletion"
OP_INS = "insertion"


@dataclass(frozen=True)
class AlignCosts:
    match: float = 1.0
    mismatch: float = -1.0
    gap: float = -1.0

    def __post_init__(self):
        if not (self.match > self.mismatch and self.match > self.gap):
            raise ValueError("require match > mismatch and match > gap")


@dataclass(frozen=True)
class AlignColumn:
    target: int     # inventory index, or GAP
    canonical: int  # inventory index, or GAP
    op: str


@dataclass(frozen=True)
class AlignmentResult:
    columns: tuple[AlignColumn, ...]
    score: float

    def target_ids(self) -> tuple[int, ...]:
        return tuple(c.target for c in self.columns if c.target != GAP)

    def canonical_ids(self) -> tuple[int, ...]:
        return tuple(c.canonical for c in self.columns if c.canonical != GAP)


@dataclass(frozen=True)
class ApedLabels:
    error_states: tuple[int, ...]       # length k, one bit per target position
    aligned_canonical: tuple[int, ...]  # length k+1, ends with EOS; PAD at deletions
    asr_mask: tuple[int, ...]           # length k+1; 0 at deletions, final 1 for EOS


def nw_align(
    canonical: PhonemeSequence,
    target: PhonemeSequence,
    costs: AlignCosts = AlignCosts(),
    inventory: PhonemeInventory | None = None,
) -> AlignmentResult:
    """Score-optimal global alignment of canonical against target."""
    if inventory is not None:
        canonical.validate(inventory)
        target.validate(inventory)
    t_ids = np.asarray(target.ids, dtype=np.int64)
    c_ids = np.asarray(canonical.ids, dtype=np.int64)
    H, B = kernels.nw_fill(t_ids, c_ids, costs.match, costs.mismatch, costs.gap)

    cols: list[AlignColumn] = []
    i, j = len(t_ids), len(c_ids)
    while i > 0 or j > 0:
        move = B[i, j]
        if move == kernels.DIAG:
            op = OP_MATCH if t_ids[i - 1] == c_ids[j - 1] else OP_SUB
            cols.append(AlignColumn(int(t_ids[i - 1]), int(c_ids[j - 1]), op))
            i -= 1
            j -= 1
        elif move == kernels.UP:
            cols.append(AlignColumn(int(t_ids[i - 1]), GAP, OP_DEL))
            i -= 1
        else:
            cols.append(AlignColumn(GAP, int(c_ids[j - 1]), OP_INS))
            j -= 1
    cols.reverse()
    return AlignmentResult(tuple(cols), float(H[len(t_ids), len(c_ids)]))


def derive_labels(alignment: AlignmentResult, inventory: PhonemeInventory) -> ApedLabels:
    """Turn an alignment into training labels over the k target positions.

    match -> error 0, canonical copied; substitution -> error 1, canonical
    copied; deletion -> error 1, PAD label, masked out of the recognition
    loss. Insertion columns carry no target slot, so they mark the following
    target position as an error (the last position when trailing).
    """
    errors: list[int] = []
    aligned: list[int] = []
    mask: list[int] = []
    pending_insertion = False
    for col in alignment.columns:
        if col.op == OP_INS:
            pending_insertion = True
            continue
        if col.op == OP_DEL:
            err = 1
            aligned.append(inventory.pad)
            mask.append(0)
        else:
            err = 0 if col.op == OP_MATCH else 1
            aligned.append(col.canonical)
            mask.append(1)
        if pending_insertion:
            err = 1
            pending_insertion = False
        errors.append(err)
    if pending_insertion and errors:
        errors[-1] = 1
    aligned.append(inventory.eos)
    mask.append(1)
    return ApedLabels(tuple(errors), tuple(aligned), tuple(mask))


def per(reference: PhonemeSequence, hypothesis: PhonemeSequence) -> float:
    """Phone error rate: unit-cost edit distance over reference length."""
    if len(reference) == 0:
        raise PhonemeError("reference must be nonempty")
    dist = kernels.levenshtein(
        np.asarray(reference.ids, dtype=np.int64),
        np.asarray(hypothesis.ids, dtype=np.int64),
    )
    return float(dist) / len(reference)


def format_alignment_rows(
    alignment: AlignmentResult, inventory: PhonemeInventory
) -> list[list[str]]:
    """Three display rows (target, pronounced, error states), one cell per column.

    Gap slots render as '-'; the error row shows each target position's bit
    under its column and '-' under insertion columns.
    """
    labels = derive_labels(alignment, inventory)
    target_row: list[str] = []
    canon_row: list[str] = []
    error_row: list[str] = []
    ti = 0
    for col in alignment.columns:
        target_row.append("-" if col.target == GAP else inventory.name(col.target))
        canon_row.append("-" if col.canonical == GAP else inventory.name(col.canonical))
        if col.target == GAP:
            error_row.append("-")
        else:
            error_row.append(str(labels.error_states[ti]))
            ti += 1
    return [target_row, canon_row, error_row]
