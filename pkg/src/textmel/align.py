"""Per-token duration extraction from CTC log-probability lattices.

The target is the blank-interleaved grapheme sequence; the aligner finds the
single most probable monotonic path through the standard CTC state graph
(stay / advance / skip-over-blank transitions) and counts the frames spent
in each state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadLattice, Infeasible, LengthMismatch, ParseError
from .text import BLANK_ID, DurationSeq, TokenSeq

ROW_NORM_TOL = 1e-3

# traceback preference on exact score ties: stay, then advance, then skip
_STAY, _ADVANCE, _SKIP = 0, 1, 2


@dataclass(frozen=True)
class AlignmentResult:
    durations: DurationSeq
    path_logprob: float


def min_path_frames(target: TokenSeq) -> int:
    """Shortest feasible CTC path: one frame per non-blank, plus one blank
    frame between each pair of equal adjacent non-blanks."""
    labels = [t for t in target.ids if t != BLANK_ID]
    extra = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + extra


def check_lattice(lattice: np.ndarray) -> None:
    if lattice.ndim != 2 or lattice.shape[0] < 1:
        raise BadLattice(f"expected a 2-D (frames x vocab) lattice, got shape {lattice.shape}")
    row_sums = np.logaddexp.reduce(lattice.astype(np.float64), axis=1)
    worst = float(np.abs(row_sums).max())
    if worst > ROW_NORM_TOL:
        raise BadLattice(f"rows are not normalized distributions (max |logsumexp| = {worst:.2e})")


def viterbi_align(lattice: np.ndarray, target: TokenSeq) -> AlignmentResult:
    """Most probable monotonic CTC path; returns per-state frame counts.

    Transitions: stay (s->s), advance (s->s+1), and skip (s->s+2) when state
    s+2 is non-blank and carries a different label than state s. Paths start
    in state 0 or 1 and end in the last or second-to-last state.
    """
    if not target.has_blanks:
        raise LengthMismatch("alignment target must be blank-interleaved")
    check_lattice(lattice)
    labels = np.asarray(target.ids, dtype=np.int64)
    t_frames, vocab_size = lattice.shape
    if labels.max(initial=0) >= vocab_size:
        raise BadLattice("target contains ids outside the lattice vocabulary")
    needed = min_path_frames(target)
    if t_frames < needed:
        raise Infeasible(needed)

    n_states = len(labels)
    emit = lattice[:, labels].astype(np.float64)  # (T, S)

    neg_inf = -np.inf
    skip_ok = np.zeros(n_states, dtype=bool)
    skip_ok[2:] = (labels[2:] != BLANK_ID) & (labels[2:] != labels[:-2])

    score = np.full(n_states, neg_inf)
    score[0] = emit[0, 0]
    if n_states > 1:
        score[1] = emit[0, 1]
    back = np.zeros((t_frames, n_states), dtype=np.int8)

    for t in range(1, t_frames):
        stay = score
        advance = np.full(n_states, neg_inf)
        advance[1:] = score[:-1]
        skip = np.full(n_states, neg_inf)
        skip[2:] = np.where(skip_ok[2:], score[:-2], neg_inf)
        # strict > keeps the earlier (preferred) move on ties
        best = stay.copy()
        move = np.full(n_states, _STAY, dtype=np.int8)
        for cand, tag in ((advance, _ADVANCE), (skip, _SKIP)):
            better = cand > best
            best = np.where(better, cand, best)
            move = np.where(better, tag, move)
        score = best + emit[t]
        back[t] = move

    # the final blank state wins ties against the second-to-last state
    if n_states > 1 and score[n_states - 2] > score[n_states - 1]:
        end = n_states - 2
    else:
        end = n_states - 1
    path_logprob = float(score[end])
    if not np.isfinite(path_logprob):
        raise Infeasible(needed)

    durations = [0] * n_states
    state = end
    for t in range(t_frames - 1, -1, -1):
        durations[state] += 1
        if t > 0:
            state -= int(back[t, state])
    return AlignmentResult(DurationSeq(tuple(durations)), path_logprob)


# --- duration records (JSONL) ---

def alignment_to_record(result: AlignmentResult, utt_id: str, target: TokenSeq) -> dict:
    return {
        "id": utt_id,
        "tokens": list(target.ids),
        "durations": list(result.durations.durations),
        "score": result.path_logprob,
    }


def write_records(path: str | Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_records(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), lineno) from exc
            for key in ("id", "tokens", "durations", "score"):
                if key not in rec:
                    raise ParseError(f"missing field {key!r}", lineno)
            records.append(rec)
    return records
