"""ROVER-style hypothesis combination.

Recognizer transcripts are folded one at a time into a word transition
network by edit-distance alignment; each slot holds competing words (or a
NULL placeholder) with vote counts, contributing systems, and merged time
extents.  A majority vote per slot, with ties resolved by the validation
ranking, yields the combined transcript.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import (
    DuplicateSystemError,
    IncompleteRankingError,
    InvariantError,
    MismatchedSampleError,
)
from .recognizer import HypothesisTranscript, HypothesisWord

NULL = None  # placeholder entry for "system emitted no word here"

MATCH, SUBSTITUTION, DELETION, INSERTION = range(4)  # tie-break preference


@dataclass(frozen=True)
class SlotEntry:
    count: int
    systems: tuple[str, ...]
    t_start: int | None = None
    t_end: int | None = None


@dataclass(frozen=True)
class AlignmentParams:
    substitution_cost: float = 1.0
    insertion_cost: float = 1.0
    deletion_cost: float = 1.0
    match_cost: float = 0.0
    time_mode: str = "off"  # off | strict
    time_overlap_min: float = 0.0

    def __post_init__(self):
        if min(self.substitution_cost, self.insertion_cost,
               self.deletion_cost, self.match_cost) < 0:
            raise InvariantError("alignment costs must be non-negative")
        if self.time_mode not in ("off", "strict"):
            raise InvariantError(f"unknown time_mode {self.time_mode!r}")

    @staticmethod
    def strict_time() -> "AlignmentParams":
        return AlignmentParams(time_mode="strict", time_overlap_min=0.1)


@dataclass(frozen=True)
class SystemRanking:
    systems: tuple[str, ...]  # best first

    def __post_init__(self):
        if len(set(self.systems)) != len(self.systems):
            raise InvariantError("ranking contains duplicate system ids")

    def rank_of(self, system_id: str) -> int:
        return self.systems.index(system_id)


@dataclass(frozen=True)
class WordTransitionNetwork:
    slots: tuple[dict, ...] = ()  # each: {word_or_NULL: SlotEntry}
    provenance: tuple[str, ...] = ()

    @property
    def n_systems(self) -> int:
        return len(self.provenance)


def _overlap_ok(entry: SlotEntry, word: HypothesisWord, min_frac: float) -> bool:
    if entry.t_start is None or entry.t_end is None:
        return True
    overlap = min(entry.t_end, word.t_end) - max(entry.t_start, word.t_start)
    shorter = min(entry.t_end - entry.t_start, word.t_end - word.t_start)
    if shorter <= 0:
        return overlap >= 0
    return overlap >= min_frac * shorter


def _slot_matches(slot: dict, word: HypothesisWord,
                  params: AlignmentParams) -> bool:
    for key, entry in slot.items():
        if key is NULL or key != word.word:
            continue
        if params.time_mode == "strict" \
                and not _overlap_ok(entry, word, params.time_overlap_min):
            continue
        return True
    return False


def _merge_into(slot: dict, key, system_id: str, word: HypothesisWord | None):
    entry = slot.get(key)
    if entry is None:
        t0 = word.t_start if word is not None else None
        t1 = word.t_end if word is not None else None
        slot[key] = SlotEntry(count=1, systems=(system_id,), t_start=t0, t_end=t1)
        return
    t0, t1 = entry.t_start, entry.t_end
    if word is not None:
        t0 = word.t_start if t0 is None else min(t0, word.t_start)
        t1 = word.t_end if t1 is None else max(t1, word.t_end)
    slot[key] = SlotEntry(count=entry.count + 1,
                          systems=entry.systems + (system_id,),
                          t_start=t0, t_end=t1)


def align_hypothesis(wtn: WordTransitionNetwork, hyp: HypothesisTranscript,
                     params: AlignmentParams | None = None
                     ) -> WordTransitionNetwork:
    """Fold one transcript into the network along the optimal edit path.

    DP ties prefer match > substitution > deletion > insertion.  Slot count
    never decreases; every previously aligned system keeps exactly one entry
    (possibly NULL) per slot.
    """
    params = params or AlignmentParams()
    if hyp.system_id in wtn.provenance:
        raise DuplicateSystemError(f"system {hyp.system_id!r} already aligned")
    slots = [dict(s) for s in wtn.slots]
    words = list(hyp.words)
    m, n = len(slots), len(words)

    # dp[i][j]: cost of aligning the first i slots with the first j words
    dp = [[0.0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        dp[i][0] = dp[i - 1][0] + params.deletion_cost
    for j in range(1, n + 1):
        dp[0][j] = dp[0][j - 1] + params.insertion_cost
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            is_match = _slot_matches(slots[i - 1], words[j - 1], params)
            diag = dp[i - 1][j - 1] + (params.match_cost if is_match
                                       else params.substitution_cost)
            up = dp[i - 1][j] + params.deletion_cost
            left = dp[i][j - 1] + params.insertion_cost
            dp[i][j] = min(diag, up, left)

    # backtrack; ops arrive end-first and are applied in order afterwards
    ops: list[tuple[int, int | None]] = []  # (op, word index or None)
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            is_match = _slot_matches(slots[i - 1], words[j - 1], params)
            diag = dp[i - 1][j - 1] + (params.match_cost if is_match
                                       else params.substitution_cost)
            if dp[i][j] == diag:
                ops.append((MATCH if is_match else SUBSTITUTION, j - 1))
                i, j = i - 1, j - 1
                continue
        if i > 0 and dp[i][j] == dp[i - 1][j] + params.deletion_cost:
            ops.append((DELETION, None))
            i -= 1
            continue
        ops.append((INSERTION, j - 1))
        j -= 1
    ops.reverse()

    out: list[dict] = []
    prior = list(wtn.provenance)
    slot_iter = iter(slots)
    for op, widx in ops:
        if op in (MATCH, SUBSTITUTION):
            slot = next(slot_iter)
            w = words[widx]
            _merge_into(slot, w.word, hyp.system_id, w)
            out.append(slot)
        elif op == DELETION:
            slot = next(slot_iter)
            _merge_into(slot, NULL, hyp.system_id, None)
            out.append(slot)
        else:  # INSERTION: brand-new slot, NULL for every prior system
            w = words[widx]
            slot = {}
            for sys_id in prior:
                _merge_into(slot, NULL, sys_id, None)
            _merge_into(slot, w.word, hyp.system_id, w)
            out.append(slot)
    return WordTransitionNetwork(slots=tuple(out),
                                 provenance=wtn.provenance + (hyp.system_id,))


def vote(wtn: WordTransitionNetwork, ranking: SystemRanking
         ) -> HypothesisTranscript:
    """Per-slot majority vote; ties go to the best-ranked contributor."""
    missing = [s for s in wtn.provenance if s not in ranking.systems]
    if missing:
        raise IncompleteRankingError(f"ranking misses systems {missing}")
    out_words = []
    for slot in wtn.slots:
        best_key, best_entry, best_rank = None, None, None
        for key, entry in slot.items():
            rank = min(ranking.rank_of(s) for s in entry.systems)
            better = (best_entry is None
                      or entry.count > best_entry.count
                      or (entry.count == best_entry.count and rank < best_rank))
            if better:
                best_key, best_entry, best_rank = key, entry, rank
        if best_key is NULL:
            continue
        out_words.append(HypothesisWord(
            word=best_key,
            t_start=best_entry.t_start if best_entry.t_start is not None else 0,
            t_end=best_entry.t_end if best_entry.t_end is not None else 0,
            confidence=best_entry.count / wtn.n_systems))
    return HypothesisTranscript(sample_id="", system_id="rover",
                                words=tuple(out_words))


def combine(hyps: list[HypothesisTranscript],
            params: AlignmentParams | None = None,
            ranking: SystemRanking | None = None) -> HypothesisTranscript:
    """Incremental alignment in ranking order (best first), then voting."""
    if len(hyps) < 2:
        raise InvariantError("need at least 2 transcripts to combine")
    sample_ids = {h.sample_id for h in hyps}
    if len(sample_ids) != 1:
        raise MismatchedSampleError(f"mixed sample ids {sorted(sample_ids)}")
    ids = [h.system_id for h in hyps]
    if len(set(ids)) != len(ids):
        raise DuplicateSystemError("duplicate system ids in combination")
    ranking = ranking or SystemRanking(systems=tuple(ids))
    missing = [s for s in ids if s not in ranking.systems]
    if missing:
        raise IncompleteRankingError(f"ranking misses systems {missing}")
    ordered = sorted(hyps, key=lambda h: ranking.rank_of(h.system_id))
    wtn = WordTransitionNetwork()
    for hyp in ordered:
        wtn = align_hypothesis(wtn, hyp, params)
    result = vote(wtn, ranking)
    return replace(result, sample_id=hyps[0].sample_id)
