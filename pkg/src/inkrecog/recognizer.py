"""Lexicon-driven line recognition on concatenated character-form models.

Words expand to positional glyph forms (Arabic shaping rules), each form is a
left-to-right HMM, and word models are built by chaining the form models.
Training is embedded Baum-Welch over whole-line transcripts from a flat
start; decoding runs Viterbi over a loop-of-words network and reads word
time stamps off the best path.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyLexiconError,
    InvariantError,
    MissingFormError,
    NoDecodableSequencesError,
    UnknownCharacterError,
    ZeroProbabilityError,
)
from .features import FeatureSequence
from .hmm import (
    GaussianMixtureEmission,
    HmmModel,
    TOPOLOGY_LTR,
    TrainConfig,
    training_posteriors,
    split_mixtures,
)

log = logging.getLogger(__name__)

ISOLATED, INITIAL, MEDIAL, FINAL = "isolated", "initial", "medial", "final"
DUAL_JOINING = "dual"
RIGHT_JOINING = "right"
GAP_FORM = "<gap>"

# letters that never connect to the following letter
_ARABIC_RIGHT_JOINING = set("اأإآدذرزو")
_ARABIC_LETTERS = "ابتثجحخدذرزسشصضطظعغفقكلمنهوي"


@dataclass(frozen=True)
class Alphabet:
    chars: tuple[str, ...]
    joining: dict[str, str]  # char -> dual | right

    def __post_init__(self):
        for c in self.chars:
            if self.joining.get(c) not in (DUAL_JOINING, RIGHT_JOINING):
                raise InvariantError(f"character {c!r} missing joining class")

    def forms_of(self, char: str) -> tuple[str, ...]:
        if self.joining[char] == DUAL_JOINING:
            return (ISOLATED, INITIAL, MEDIAL, FINAL)
        return (ISOLATED, FINAL)

    def all_form_keys(self) -> list[str]:
        return [form_key(c, f) for c in self.chars for f in self.forms_of(c)]


def form_key(char: str, form: str) -> str:
    return f"{char}:{form}"


def arabic_alphabet() -> Alphabet:
    joining = {c: (RIGHT_JOINING if c in _ARABIC_RIGHT_JOINING else DUAL_JOINING)
               for c in _ARABIC_LETTERS}
    return Alphabet(chars=tuple(_ARABIC_LETTERS), joining=joining)


def synthetic_alphabet(size: int = 10) -> Alphabet:
    """Single-letter symbols a, b, c, ... used by the desk-scale experiments."""
    chars = tuple(chr(ord("a") + i) for i in range(size))
    # alternate joining classes so both shaping branches stay exercised
    joining = {c: (DUAL_JOINING if i % 2 == 0 else RIGHT_JOINING)
               for i, c in enumerate(chars)}
    return Alphabet(chars=chars, joining=joining)


def expand_positional_forms(word: str, alphabet: Alphabet) -> list[str]:
    """Map each character to its positional form key via the joining rules."""
    for c in word:
        if c not in alphabet.joining:
            raise UnknownCharacterError(f"character {c!r} not in alphabet")
    forms = []
    for i, c in enumerate(word):
        joins_back = i > 0 and alphabet.joining[word[i - 1]] == DUAL_JOINING
        joins_fwd = (alphabet.joining[c] == DUAL_JOINING
                     and i + 1 < len(word))
        if joins_back and joins_fwd:
            form = MEDIAL
        elif joins_back:
            form = FINAL
        elif joins_fwd:
            form = INITIAL
        else:
            form = ISOLATED
        forms.append(form_key(c, form))
    return forms


@dataclass(frozen=True)
class Lexicon:
    words: tuple[str, ...]

    def __post_init__(self):
        seen: dict[str, None] = {}
        for w in self.words:
            seen.setdefault(w)
        object.__setattr__(self, "words", tuple(seen))
        if not self.words:
            raise EmptyLexiconError("lexicon is empty")


@dataclass(frozen=True)
class HypothesisWord:
    word: str
    t_start: int  # frame index, inclusive
    t_end: int    # frame index, exclusive
    confidence: float


@dataclass(frozen=True)
class HypothesisTranscript:
    sample_id: str
    system_id: str
    words: tuple[HypothesisWord, ...]

    def word_list(self) -> list[str]:
        return [w.word for w in self.words]


@dataclass
class ModelBank:
    models: dict[str, HmmModel]
    n_states: int
    dim: int
    uncovered: tuple[str, ...] = ()

    def get(self, key: str) -> HmmModel:
        try:
            return self.models[key]
        except KeyError:
            raise MissingFormError(f"no model for form {key!r}") from None


@dataclass(frozen=True)
class WordModel:
    model: HmmModel
    forms: tuple[str, ...]
    offsets: tuple[int, ...]  # first state index of each form block


def _pad_mixture(em: GaussianMixtureEmission, k: int) -> GaussianMixtureEmission:
    cur = em.n_components
    if cur == k:
        return em
    n, _, d = em.means.shape
    weights = np.zeros((n, k))
    means = np.zeros((n, k, d))
    variances = np.ones((n, k, d))
    weights[:, :cur] = em.weights
    means[:, :cur] = em.means
    variances[:, :cur] = em.variances
    return GaussianMixtureEmission(weights, means, variances)


def build_word_model(forms: list[str], bank: ModelBank) -> WordModel:
    """Chain form models: each final state feeds the next model's first state
    with its exit probability."""
    models = [bank.get(f) for f in forms]
    dims = {m.emission.dim for m in models}
    if len(dims) != 1:
        raise DimensionMismatchError("bank models disagree on feature dim")
    sizes = [m.n_states for m in models]
    total = sum(sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    A = np.zeros((total, total))
    exit_ = np.zeros(total)
    pi = np.zeros(total)
    pi[:sizes[0]] = models[0].pi
    k = max(m.emission.n_components for m in models)
    padded = [_pad_mixture(m.emission, k) for m in models]
    for b, m in enumerate(models):
        o = offsets[b]
        A[o:o + sizes[b], o:o + sizes[b]] = m.trans
        last = o + sizes[b] - 1
        if b + 1 < len(models):
            A[last, offsets[b + 1]] = m.exit[sizes[b] - 1]
        else:
            exit_[last] = m.exit[sizes[b] - 1]
    emission = GaussianMixtureEmission(
        weights=np.vstack([p.weights for p in padded]),
        means=np.vstack([p.means for p in padded]),
        variances=np.vstack([p.variances for p in padded]),
    )
    model = HmmModel(pi=pi, trans=A, emission=emission,
                     topology=TOPOLOGY_LTR, exit=exit_)
    return WordModel(model=model, forms=tuple(forms), offsets=tuple(offsets))


def _fresh_ltr_model(means: np.ndarray, variances: np.ndarray) -> HmmModel:
    """Single-Gaussian left-to-right model from per-state (N, D) stats."""
    n_states = means.shape[0]
    A = np.zeros((n_states, n_states))
    exit_ = np.zeros(n_states)
    for i in range(n_states):
        A[i, i] = 0.5
        if i + 1 < n_states:
            A[i, i + 1] = 0.5
        else:
            exit_[i] = 0.5
    pi = np.zeros(n_states)
    pi[0] = 1.0
    emission = GaussianMixtureEmission(
        weights=np.ones((n_states, 1)),
        means=means[:, None, :],
        variances=variances[:, None, :],
    )
    return HmmModel(pi=pi, trans=A, emission=emission,
                    topology=TOPOLOGY_LTR, exit=exit_)


def transcript_forms(words, alphabet: Alphabet) -> list[str]:
    """Per-line form sequence: word forms with gap models between words."""
    forms: list[str] = []
    for i, w in enumerate(words):
        if i > 0:
            forms.append(GAP_FORM)
        forms.extend(expand_positional_forms(w, alphabet))
    return forms


def _flat_start(samples, alphabet, n_states, gap_states, variance_floor):
    """Uniform-segmentation initialization of every form seen in the data."""
    dim = samples[0][0].dim
    sums: dict[tuple[str, int], np.ndarray] = {}
    sqs: dict[tuple[str, int], np.ndarray] = {}
    counts: dict[tuple[str, int], int] = {}
    for seq, words in samples:
        forms = transcript_forms(words, alphabet)
        sizes = [gap_states if f == GAP_FORM else n_states for f in forms]
        total = sum(sizes)
        bounds = np.linspace(0, len(seq), total + 1)
        state_idx = 0
        for f, size in zip(forms, sizes):
            for s in range(size):
                lo = int(bounds[state_idx])
                hi = max(int(bounds[state_idx + 1]), lo + 1)
                hi = min(hi, len(seq))
                chunk = seq.frames[lo:hi]
                if len(chunk):
                    key = (f, s)
                    sums[key] = sums.get(key, 0) + chunk.sum(axis=0)
                    sqs[key] = sqs.get(key, 0) + (chunk ** 2).sum(axis=0)
                    counts[key] = counts.get(key, 0) + len(chunk)
                state_idx += 1
    all_frames = np.vstack([seq.frames for seq, _ in samples])
    g_mean = all_frames.mean(axis=0)
    g_var = np.maximum(all_frames.var(axis=0), variance_floor)

    def state_stats(f, s):
        c = counts.get((f, s), 0)
        if c < 2:
            return g_mean, g_var
        mean = sums[(f, s)] / c
        var = np.maximum(sqs[(f, s)] / c - mean ** 2, variance_floor)
        return mean, var

    seen = {f for seq, words in samples for f in transcript_forms(words, alphabet)}
    models: dict[str, HmmModel] = {}
    form_keys = alphabet.all_form_keys() + [GAP_FORM]
    uncovered = []
    for f in form_keys:
        size = gap_states if f == GAP_FORM else n_states
        if f in seen:
            means = np.array([state_stats(f, s)[0] for s in range(size)])
            vars_ = np.array([state_stats(f, s)[1] for s in range(size)])
        else:
            uncovered.append(f)
            means = np.tile(g_mean, (size, 1))
            vars_ = np.tile(g_var, (size, 1))
        models[f] = _fresh_ltr_model(means, vars_)
    return ModelBank(models=models, n_states=n_states, dim=dim,
                     uncovered=tuple(uncovered))


def _embedded_iteration(bank: ModelBank, samples, alphabet, variance_floor):
    """One embedded Baum-Welch pass; returns (new bank, total log-likelihood)."""
    acc: dict[str, dict] = {}

    def acc_for(f: str, size: int, k: int, d: int):
        if f not in acc:
            acc[f] = {
                "a_num": np.zeros((size, size)),
                "exit_num": np.zeros(size),
                "den": np.zeros(size),
                "w": np.zeros((size, k)),
                "mean": np.zeros((size, k, d)),
                "sq": np.zeros((size, k, d)),
            }
        return acc[f]

    total_ll = 0.0
    used = 0
    for idx, (seq, words) in enumerate(samples):
        forms = transcript_forms(words, alphabet)
        wm = build_word_model(forms, bank)
        terminal = wm.model.exit
        try:
            ll, gamma, xi_sum = training_posteriors(wm.model, seq,
                                                    terminal=terminal)
        except ZeroProbabilityError as exc:
            log.warning("sample %d skipped in embedded training: %s", idx, exc)
            continue
        used += 1
        total_ll += ll
        arr = seq.frames
        em = wm.model.emission
        comp = em.log_component_densities(arr)
        m = comp.max(axis=2, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        resp = np.exp(comp - m)
        tot = resp.sum(axis=2, keepdims=True)
        tot[tot == 0] = 1.0
        resp = resp / tot * gamma[:, :, None]

        gamma_sum = gamma.sum(axis=0)
        k = em.n_components
        d = em.dim
        for b, f in enumerate(forms):
            o = wm.offsets[b]
            size = (wm.offsets[b + 1] if b + 1 < len(forms)
                    else wm.model.n_states) - o
            a = acc_for(f, size, k, d)
            a["a_num"] += xi_sum[o:o + size, o:o + size]
            a["den"] += gamma_sum[o:o + size]
            last = o + size - 1
            if b + 1 < len(forms):
                a["exit_num"][size - 1] += xi_sum[last, wm.offsets[b + 1]]
            else:
                a["exit_num"][size - 1] += gamma[-1, last]
            a["w"] += resp[:, o:o + size, :].sum(axis=0)
            a["mean"] += np.einsum("tsk,td->skd", resp[:, o:o + size, :], arr)
            a["sq"] += np.einsum("tsk,td->skd", resp[:, o:o + size, :], arr * arr)

    if used == 0:
        raise NoDecodableSequencesError("no sample decodable in embedded pass")

    new_models = dict(bank.models)
    for f, a in acc.items():
        old = bank.models[f]
        size = old.n_states
        A = old.trans.copy()
        exit_ = old.exit.copy()
        for i in range(size):
            den = a["a_num"][i].sum() + a["exit_num"][i]
            if den <= 0:
                continue
            A[i] = a["a_num"][i] / den
            exit_[i] = a["exit_num"][i] / den
        weights = old.emission.weights.copy()
        means = old.emission.means.copy()
        variances = old.emission.variances.copy()
        k = old.emission.n_components
        for s in range(size):
            mass = a["w"][s, :k].sum()
            if mass <= 0:
                continue
            weights[s] = a["w"][s, :k] / mass
            live = a["w"][s, :k] > 1e-12
            means[s, live] = a["mean"][s, :k][live] / a["w"][s, :k][live, None]
            var = (a["sq"][s, :k][live] / a["w"][s, :k][live, None]
                   - means[s, live] ** 2)
            variances[s, live] = np.maximum(var, variance_floor)
        new_models[f] = HmmModel(
            pi=old.pi, trans=A,
            emission=GaussianMixtureEmission(weights, means, variances),
            topology=TOPOLOGY_LTR, exit=exit_)
    return (ModelBank(models=new_models, n_states=bank.n_states, dim=bank.dim,
                      uncovered=bank.uncovered), total_ll)


def train_models(samples, alphabet: Alphabet, cfg: TrainConfig | None = None,
                 n_states: int = 8, gap_states: int = 1) -> ModelBank:
    """Flat start then embedded Baum-Welch; mixture splits between rounds.

    `samples` is a list of (FeatureSequence, word list) pairs.  Forms absent
    from the data keep their flat-start parameters and are listed in
    bank.uncovered.
    """
    cfg = cfg or TrainConfig()
    if not samples:
        raise NoDecodableSequencesError("no training samples")
    dims = {seq.dim for seq, _ in samples}
    if len(dims) != 1:
        raise DimensionMismatchError("training sequences disagree on dim")
    bank = _flat_start(samples, alphabet, n_states, gap_states,
                       cfg.variance_floor)
    if bank.uncovered:
        log.warning("forms with no training data: %s",
                    ", ".join(bank.uncovered))

    def run_round(bank):
        prev_ll = None
        for _ in range(cfg.max_iterations):
            bank, ll = _embedded_iteration(bank, samples, alphabet,
                                           cfg.variance_floor)
            if prev_ll is not None and ll - prev_ll < cfg.theta:
                break
            prev_ll = ll
        return bank

    bank = run_round(bank)
    while next(iter(bank.models.values())).emission.n_components < cfg.target_components:
        bank = ModelBank(
            models={f: split_mixtures(m, cfg.target_components)
                    for f, m in bank.models.items()},
            n_states=bank.n_states, dim=bank.dim, uncovered=bank.uncovered)
        bank = run_round(bank)
    return bank


# ---------------------------------------------------------------------------
# decoding

_GAP_SHARE = 0.5  # portion of word-exit mass routed through the gap model


def _viterbi_lattice_py(logb, delta0, log_self, log_next, starts, word_final,
                        gap_off, gap_final, log_enter_direct, log_enter_gap,
                        log_gap_to_start):
    T, total = logb.shape
    delta = delta0.copy()
    psi = np.zeros((T, total), dtype=np.int32)
    psi[0] = np.arange(total)
    idx_all = np.arange(total)
    for t in range(1, T):
        stay = delta + log_self
        shifted = np.full(total, -np.inf)
        shifted[1:] = delta[:-1] + log_next[:-1]
        take_shift = shifted >= stay  # prefer the lower predecessor on ties
        best = np.where(take_shift, shifted, stay)
        pred = np.where(take_shift, idx_all - 1, idx_all)
        # entries into word starts: direct word-to-word or via the gap model
        enter_scores = delta[word_final] + log_enter_direct
        src = int(np.argmax(enter_scores))
        direct_score = enter_scores[src]
        gap_score = delta[gap_final] + log_gap_to_start
        if gap_score > direct_score:
            entry_score, entry_src = gap_score, gap_final
        else:
            entry_score, entry_src = direct_score, int(word_final[src])
        upd = entry_score > best[starts]
        best[starts] = np.where(upd, entry_score, best[starts])
        pred[starts] = np.where(upd, entry_src, pred[starts])
        # entry into the gap model
        gap_in = delta[word_final] + log_enter_gap
        gsrc = int(np.argmax(gap_in))
        if gap_in[gsrc] > best[gap_off]:
            best[gap_off] = gap_in[gsrc]
            pred[gap_off] = int(word_final[gsrc])
        delta = best + logb[t]
        psi[t] = pred
    return delta, psi


def _viterbi_lattice_loops(logb, delta0, log_self, log_next, starts,
                           word_final, gap_off, gap_final, log_enter_direct,
                           log_enter_gap, log_gap_to_start):
    # scalar-loop twin of _viterbi_lattice_py, written for numba
    T, total = logb.shape
    nw = len(word_final)
    delta = delta0.copy()
    best = np.empty(total)
    psi = np.zeros((T, total), dtype=np.int32)
    for i in range(total):
        psi[0, i] = i
    for t in range(1, T):
        best[0] = delta[0] + log_self[0]
        psi[t, 0] = 0
        for i in range(1, total):
            stay = delta[i] + log_self[i]
            shift = delta[i - 1] + log_next[i - 1]
            if shift >= stay:  # prefer the lower predecessor on ties
                best[i] = shift
                psi[t, i] = i - 1
            else:
                best[i] = stay
                psi[t, i] = i
        direct_score = -np.inf
        src = 0
        for w in range(nw):
            v = delta[word_final[w]] + log_enter_direct[w]
            if v > direct_score:
                direct_score = v
                src = w
        gap_score = delta[gap_final] + log_gap_to_start
        if gap_score > direct_score:
            entry_score, entry_src = gap_score, gap_final
        else:
            entry_score, entry_src = direct_score, int(word_final[src])
        for w in range(nw):
            s = starts[w]
            if entry_score > best[s]:
                best[s] = entry_score
                psi[t, s] = entry_src
        gap_best = -np.inf
        gsrc = 0
        for w in range(nw):
            v = delta[word_final[w]] + log_enter_gap[w]
            if v > gap_best:
                gap_best = v
                gsrc = w
        if gap_best > best[gap_off]:
            best[gap_off] = gap_best
            psi[t, gap_off] = word_final[gsrc]
        for i in range(total):
            delta[i] = best[i] + logb[t, i]
    return delta, psi


try:
    from numba import njit as _njit

    _viterbi_lattice = _njit(cache=True)(_viterbi_lattice_loops)
except ImportError:  # pragma: no cover - exercised only without numba
    _viterbi_lattice = _viterbi_lattice_py


class LineDecoder:
    """Viterbi decoder over a uniform-prior loop of word models.

    The word lattice (concatenated word models, transition structure, pooled
    emission parameters) depends only on the lexicon and model bank, so it is
    built once here and reused across lines.
    """

    def __init__(self, lexicon: Lexicon, bank: ModelBank, alphabet: Alphabet,
                 system_id: str = "sys"):
        self.system_id = system_id
        words = Lexicon(lexicon.words).words
        word_models = [
            build_word_model(expand_positional_forms(w, alphabet), bank)
            for w in words]
        gap = bank.get(GAP_FORM)
        n_words = len(words)
        blocks = [wm.model for wm in word_models] + [gap]
        sizes = [m.n_states for m in blocks]
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
        total = sum(sizes)
        gap_off = offsets[-1]

        log_self = np.full(total, -np.inf)
        log_next = np.full(total, -np.inf)
        with np.errstate(divide="ignore"):
            for m, o in zip(blocks, offsets):
                idx = np.arange(m.n_states)
                log_self[o + idx] = np.log(m.trans[idx, idx])
                if m.n_states > 1:
                    log_next[o + idx[:-1]] = np.log(
                        m.trans[idx[:-1], idx[:-1] + 1])

        word_final = np.array(
            [offsets[i] + sizes[i] - 1 for i in range(n_words)])
        word_exit = np.array([blocks[i].exit[-1] for i in range(n_words)])
        gap_exit = gap.exit[-1]
        with np.errstate(divide="ignore"):
            log_enter_direct = np.log(word_exit * (1 - _GAP_SHARE) / n_words)
            log_enter_gap = np.log(word_exit * _GAP_SHARE)
        # pooled emission over all blocks so one mixture evaluation covers
        # the whole lattice
        k = max(m.emission.n_components for m in blocks)
        padded = [_pad_mixture(m.emission, k) for m in blocks]
        self._emission = GaussianMixtureEmission(
            weights=np.vstack([p.weights for p in padded]),
            means=np.vstack([p.means for p in padded]),
            variances=np.vstack([p.variances for p in padded]),
        )
        state_to_block = np.empty(total, dtype=np.intp)
        for i, (o, s) in enumerate(zip(offsets, sizes)):
            state_to_block[o:o + s] = i

        self.words = words
        self._n_words = n_words
        self._total = total
        self._gap_off = int(gap_off)
        self._gap_final = int(gap_off + gap.n_states - 1)
        self._log_self = log_self
        self._log_next = log_next
        self._word_final = word_final.astype(np.int64)
        self._word_exit = word_exit
        self._starts = offsets[:n_words].astype(np.int64)
        self._log_enter_direct = log_enter_direct
        self._log_enter_gap = log_enter_gap
        self._log_gap_to_start = float(
            math.log(max(gap_exit / n_words, 1e-300)))
        self._state_to_block = state_to_block

    def decode(self, features: FeatureSequence,
               sample_id: str = "sample") -> HypothesisTranscript:
        return _decode_lattice(self, features, sample_id)


def recognize_line(features: FeatureSequence, lexicon: Lexicon,
                   bank: ModelBank, alphabet: Alphabet,
                   system_id: str = "sys", sample_id: str = "sample"
                   ) -> HypothesisTranscript:
    """One-shot wrapper around LineDecoder.

    Output words carry half-open frame extents that tile [0, T); frames the
    path spends in the inter-word gap model attach to the preceding word.
    """
    return LineDecoder(lexicon, bank, alphabet,
                       system_id=system_id).decode(features, sample_id)


def _decode_lattice(dec: LineDecoder, features: FeatureSequence,
                    sample_id: str) -> HypothesisTranscript:
    words = dec.words
    n_words = dec._n_words
    starts = dec._starts
    word_final = dec._word_final
    logb = dec._emission.log_prob_matrix(features.frames)
    T = len(features)

    delta0 = np.full(dec._total, -np.inf)
    delta0[starts] = -math.log(n_words) + logb[0, starts]
    delta, psi = _viterbi_lattice(
        logb, delta0, dec._log_self, dec._log_next, starts, word_final,
        dec._gap_off, dec._gap_final, dec._log_enter_direct,
        dec._log_enter_gap, dec._log_gap_to_start)

    # terminate at a word-final state (its exit mass ends the line)
    with np.errstate(divide="ignore"):
        term = delta[word_final] + np.log(dec._word_exit)
    best_word = int(np.argmax(term))
    if not np.isfinite(term[best_word]):
        raise ZeroProbabilityError("no admissible decoding path")
    path = np.empty(T, dtype=np.intp)
    path[T - 1] = word_final[best_word]
    for t in range(T - 2, -1, -1):
        path[t] = psi[t + 1][path[t + 1]]

    # per-frame emission posterior of the chosen state among all states
    m = logb.max(axis=1, keepdims=True)
    lse = (m[:, 0] + np.log(np.exp(logb - m).sum(axis=1)))
    frame_logpost = logb[np.arange(T), path] - lse

    # map states to word indices; gap frames merge into the preceding word
    block_path = dec._state_to_block[path]
    hyp_words: list[HypothesisWord] = []
    run_start = 0
    runs: list[tuple[int, int, int]] = []  # (block, start, end)
    for t in range(1, T + 1):
        boundary = t == T or block_path[t] != block_path[t - 1] \
            or (block_path[t] == block_path[t - 1]
                and t < T and path[t] < path[t - 1])
        if boundary:
            runs.append((int(block_path[run_start]), run_start, t))
            run_start = t
    merged: list[list[int]] = []
    for block, lo, hi in runs:
        if block == n_words and merged:  # gap: extend the previous word
            merged[-1][2] = hi
        elif block == n_words:
            merged.append([block, lo, hi])  # leading gap, resolved below
        else:
            if merged and merged[-1][0] == n_words:
                lo = merged.pop()[1]  # leading gap attaches forward
            merged.append([block, lo, hi])
    for block, lo, hi in merged:
        if block == n_words:
            continue
        conf = float(np.exp(np.mean(frame_logpost[lo:hi])))
        hyp_words.append(HypothesisWord(word=words[block], t_start=lo, t_end=hi,
                                        confidence=min(max(conf, 0.0), 1.0)))
    return HypothesisTranscript(sample_id=sample_id, system_id=dec.system_id,
                                words=tuple(hyp_words))


# ---------------------------------------------------------------------------
# CTM-style hypothesis files

def save_hypotheses(transcripts) -> str:
    lines = []
    for tr in transcripts:
        for w in tr.words:
            lines.append(f"{tr.sample_id} {tr.system_id} {w.t_start} {w.t_end} "
                         f"{w.word} {w.confidence:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")


def load_hypotheses(text: str) -> list[HypothesisTranscript]:
    grouped: dict[tuple[str, str], list[HypothesisWord]] = {}
    order: list[tuple[str, str]] = []
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        sample_id, system_id, t0, t1, word, conf = ln.split()
        key = (sample_id, system_id)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(HypothesisWord(word=word, t_start=int(t0),
                                           t_end=int(t1),
                                           confidence=float(conf)))
    return [HypothesisTranscript(sample_id=s, system_id=y,
                                 words=tuple(grouped[(s, y)]))
            for s, y in order]
