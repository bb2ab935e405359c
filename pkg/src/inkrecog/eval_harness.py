"""Synthetic data, dataset splits, scoring, and the end-to-end experiment.

The experiment generates noisy synthetic ink lines, trains several recognizer
variants that differ in preprocessing and feature extraction, combines their
test-set outputs with ROVER, and reports per-system and combined word
recognition rates.
"""

from __future__ import annotations

import logging
import math
import random
import zlib
from dataclasses import dataclass, asdict

import numpy as np

from .errors import TooFewSamplesError
from .features import (
    FeatureSequence,
    apply_normalizer,
    extract_offline_windows,
    extract_online_features,
    fit_normalizer,
)
from .hmm import TrainConfig
from .ink_model import InkTrace, Point, Stroke, render_offline
from .preprocess import PreprocessConfig, run_online_pipeline
from .recognizer import (
    Alphabet,
    HypothesisTranscript,
    Lexicon,
    LineDecoder,
    recognize_line,
    synthetic_alphabet,
    train_models,
)
from .rover_combine import AlignmentParams, SystemRanking, combine

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# dataset split

@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    validation_meta: tuple[str, ...]
    validation_lm: tuple[str, ...]  # reserved for language modeling; unused
    test: tuple[str, ...]

    def stages(self):
        return (self.train, self.validation_meta, self.validation_lm, self.test)


DEFAULT_RATIOS = (0.6, 0.15, 0.1, 0.15)


def split_four_stages(sample_ids, ratios=DEFAULT_RATIOS, seed: int = 0
                      ) -> DatasetSplit:
    """Seeded shuffle, then largest-remainder partition into four stages."""
    ids = list(sample_ids)
    if len(ids) < 4:
        raise TooFewSamplesError(f"need >= 4 samples, got {len(ids)}")
    rng = random.Random(seed)
    rng.shuffle(ids)
    n = len(ids)
    exact = [r * n for r in ratios]
    counts = [int(math.floor(e)) for e in exact]
    remainders = sorted(range(4), key=lambda i: exact[i] - counts[i],
                        reverse=True)
    for i in remainders:
        if sum(counts) == n:
            break
        counts[i] += 1
    # every stage must be non-empty
    for i in range(4):
        if counts[i] == 0:
            donor = max(range(4), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    parts = []
    pos = 0
    for c in counts:
        parts.append(tuple(ids[pos:pos + c]))
        pos += c
    return DatasetSplit(*parts)


# ---------------------------------------------------------------------------
# scoring

@dataclass(frozen=True)
class ScoreReport:
    n_ref_words: int
    n_correct: int
    n_substitutions: int
    n_deletions: int
    n_insertions: int
    recognition_rate: float  # percent
    accuracy: float          # percent; the "precision" column in reports

    def rate_str(self) -> str:
        return f"{self.recognition_rate:.1f}%"

    def accuracy_str(self) -> str:
        return f"{self.accuracy:.1f}%"


def recognition_rate(hyp: list[str], ref: list[str]) -> ScoreReport:
    """Word-level edit-distance scoring with unit costs.

    recognition_rate = 100 * correct / n_ref
    accuracy = 100 * (correct - insertions) / n_ref, clamped to [-100, 100].
    """
    m, n = len(ref), len(hyp)
    dp = np.zeros((m + 1, n + 1))
    dp[:, 0] = np.arange(m + 1)
    dp[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            sub = dp[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            dp[i, j] = min(sub, dp[i - 1, j] + 1, dp[i, j - 1] + 1)
    cor = sub_ = dele = ins = 0
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] \
                and ref[i - 1] == hyp[j - 1]:
            cor += 1
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + 1:
            sub_ += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    if m == 0:
        rate = 100.0 if n == 0 else 0.0
        acc = 100.0 if n == 0 else -100.0
    else:
        rate = 100.0 * cor / m
        acc = max(-100.0, 100.0 * (cor - ins) / m)
    return ScoreReport(n_ref_words=m, n_correct=cor, n_substitutions=sub_,
                       n_deletions=dele, n_insertions=ins,
                       recognition_rate=rate, accuracy=acc)


def score_corpus(pairs) -> ScoreReport:
    """Pool counts over (hyp words, ref words) pairs into one report."""
    cor = sub_ = dele = ins = m = 0
    for hyp, ref in pairs:
        r = recognition_rate(hyp, ref)
        cor += r.n_correct
        sub_ += r.n_substitutions
        dele += r.n_deletions
        ins += r.n_insertions
        m += r.n_ref_words
    rate = 100.0 * cor / m if m else 100.0
    acc = max(-100.0, 100.0 * (cor - ins) / m) if m else 100.0
    return ScoreReport(n_ref_words=m, n_correct=cor, n_substitutions=sub_,
                       n_deletions=dele, n_insertions=ins,
                       recognition_rate=rate, accuracy=acc)


# ---------------------------------------------------------------------------
# synthetic ink

@dataclass(frozen=True)
class SynthConfig:
    alphabet_size: int = 10
    jitter_sigma: float = 0.0
    hook_probability: float = 0.0
    hook_size: float = 0.08
    gap_probability: float = 0.0
    slant_deg: float = 0.0
    words_per_line: int = 3
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.hook_probability <= 1.0
                and 0.0 <= self.gap_probability <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.jitter_sigma < 0:
            raise ValueError("jitter sigma must be >= 0")


@dataclass
class SynthStats:
    n_strokes: int = 0
    n_hooks: int = 0
    n_dropped_points: int = 0
    n_points: int = 0


_TEMPLATE_SPACING = 0.2
_CHAR_ADVANCE = 1.3
_WORD_ADVANCE = 2.2
_POINT_DT_MS = 10.0
_CHAR_GAP_MS = 400.0
_TEMPLATE_SEED = 7919


def char_template(char: str) -> np.ndarray:
    """Deterministic per-symbol polyline in the unit box, evenly resampled."""
    rng = np.random.default_rng([_TEMPLATE_SEED, ord(char)])
    n = int(rng.integers(4, 7))
    pts = rng.random((n, 2))
    pts[:, 0] = np.sort(pts[:, 0])  # progress left to right
    seg = np.hypot(*np.diff(pts, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(0.0, arc[-1] + 1e-9, _TEMPLATE_SPACING)
    xs = np.interp(targets, arc, pts[:, 0])
    ys = np.interp(targets, arc, pts[:, 1])
    return np.column_stack([xs, ys])


def inject_hook(points: np.ndarray, rng: np.random.Generator,
                size: float) -> np.ndarray:
    """Append a short, sharply turning tail to a polyline."""
    d = points[-1] - points[-2]
    ang = math.atan2(d[1], d[0]) + math.radians(135.0) * rng.choice([-1.0, 1.0])
    step = np.array([math.cos(ang), math.sin(ang)]) * (size / 2.0)
    return np.vstack([points, points[-1] + step, points[-1] + 2 * step])


def _drop_points(points: np.ndarray, rng: np.random.Generator,
                 p: float) -> tuple[np.ndarray, int]:
    if len(points) < 4 or p <= 0:
        return points, 0
    keep = np.ones(len(points), dtype=bool)
    interior = rng.random(len(points) - 2) < p
    keep[1:-1] = ~interior
    return points[keep], int(interior.sum())


def synth_dataset_with_stats(cfg: SynthConfig, lexicon: Lexicon, n_lines: int
                             ) -> tuple[list[InkTrace], SynthStats]:
    """Render noisy ink lines with transcripts; deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    stats = SynthStats()
    shear = math.tan(math.radians(cfg.slant_deg))
    traces = []
    words = list(lexicon.words)
    for li in range(n_lines):
        # cycle the lexicon so every word keeps training coverage
        line_words = [words[(li * cfg.words_per_line + k) % len(words)]
                      for k in range(cfg.words_per_line)]
        rng.shuffle(line_words)
        strokes = []
        t = 0.0
        x0 = 0.0
        for word in line_words:
            for char in word:
                pts = char_template(char).copy()
                pts[:, 0] += x0
                if cfg.jitter_sigma > 0:
                    pts += rng.normal(0.0, cfg.jitter_sigma, pts.shape)
                pts, dropped = _drop_points(pts, rng, cfg.gap_probability)
                stats.n_dropped_points += dropped
                if rng.random() < cfg.hook_probability:
                    pts = inject_hook(pts, rng, cfg.hook_size)
                    stats.n_hooks += 1
                if shear:
                    pts[:, 0] = pts[:, 0] + shear * (1.0 - pts[:, 1])
                stroke_pts = tuple(
                    Point(float(x), float(y), t + i * _POINT_DT_MS)
                    for i, (x, y) in enumerate(pts))
                strokes.append(Stroke(stroke_pts))
                stats.n_strokes += 1
                stats.n_points += len(stroke_pts)
                t += len(stroke_pts) * _POINT_DT_MS + _CHAR_GAP_MS
                x0 += _CHAR_ADVANCE
            x0 += _WORD_ADVANCE - _CHAR_ADVANCE
        traces.append(InkTrace(sample_id=f"line{li:04d}",
                               strokes=tuple(strokes),
                               transcript=tuple(line_words)))
    return traces, stats


def synth_dataset(cfg: SynthConfig, lexicon: Lexicon, n_lines: int
                  ) -> list[InkTrace]:
    return synth_dataset_with_stats(cfg, lexicon, n_lines)[0]


# ---------------------------------------------------------------------------
# experiment

@dataclass(frozen=True)
class SystemConfig:
    system_id: str
    mode: str = "online"  # online | offline
    preprocess: bool = True
    resample_distance: float = 0.1
    render_scale: float = 12.0
    pen_width: int = 1
    # per-system override; None falls back to the experiment-wide value.
    # Coarse feature rates need fewer states so concatenated line models
    # stay shorter than the frame count.
    n_states: int | None = None
    # fraction of the training lines this system sees; values below 1.0
    # decorrelate system errors (each system trains on its own deterministic
    # subsample) while keeping expected strengths even
    train_fraction: float = 1.0
    # feature columns this system ignores; distinct feature views are another
    # way recognizer variants decorrelate without losing much accuracy
    drop_features: tuple[int, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig = SynthConfig(
        jitter_sigma=0.18, hook_probability=0.3, gap_probability=0.05,
        slant_deg=4.0, words_per_line=4)
    n_lines: int = 128
    lexicon_size: int = 12
    word_len_range: tuple[int, int] = (3, 4)
    split_seed: int = 0
    # test-heavy split: the directional finding needs enough test words for
    # a vote-corrected error to show up, more than it needs training lines
    split_ratios: tuple[float, float, float, float] = (0.245, 0.018, 0.06,
                                                       0.677)
    # three recognizer variants that differ in feature view (dropped
    # columns), model size, sampling rate, and training subsample; diverse
    # enough to decorrelate errors while staying comparably strong
    systems: tuple[SystemConfig, ...] = (
        SystemConfig(system_id="s1", mode="online", resample_distance=0.11,
                     drop_features=(0,)),
        SystemConfig(system_id="s2", mode="online", resample_distance=0.12,
                     n_states=5, drop_features=(0, 4)),
        SystemConfig(system_id="s3", mode="online", resample_distance=0.13,
                     drop_features=(0,), train_fraction=0.9),
    )
    # few states per form keeps concatenated line models shorter than the
    # frame count of every desk-scale line
    n_states: int = 6
    train_iterations: int = 5
    target_components: int = 1

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        synth = SynthConfig(**doc.get("synth", {}))
        sys_docs = [dict(s) for s in doc.get("systems", [])]
        for s in sys_docs:
            if "drop_features" in s:
                s["drop_features"] = tuple(s["drop_features"])
        systems = tuple(SystemConfig(**s) for s in sys_docs)
        kwargs = {k: v for k, v in doc.items() if k not in ("synth", "systems")}
        for key in ("word_len_range", "split_ratios"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        base = ExperimentConfig(synth=synth, **kwargs) if systems == () else \
            ExperimentConfig(synth=synth, systems=systems, **kwargs)
        return base


@dataclass
class ExperimentReport:
    system_scores: dict[str, ScoreReport]
    combined: ScoreReport
    ranking: tuple[str, ...]
    best_single: str

    @property
    def delta(self) -> float:
        return (self.combined.recognition_rate
                - self.system_scores[self.best_single].recognition_rate)

    def to_markdown(self) -> str:
        lines = [
            "| System | Recognition Rate | Precision |",
            "| --- | --- | --- |",
        ]
        for sid, score in self.system_scores.items():
            lines.append(f"| {sid} | {score.rate_str()} | {score.accuracy_str()} |")
        lines += [
            "",
            "| Combination | Recognition Rate | Precision |",
            "| --- | --- | --- |",
            f"| Best single ({self.best_single}) | "
            f"{self.system_scores[self.best_single].rate_str()} | "
            f"{self.system_scores[self.best_single].accuracy_str()} |",
            f"| ROVER combination | {self.combined.rate_str()} | "
            f"{self.combined.accuracy_str()} |",
            "",
            f"Delta (combined - best single): {self.delta:+.1f} points",
        ]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "systems": {k: asdict(v) for k, v in self.system_scores.items()},
            "combined": asdict(self.combined),
            "ranking": list(self.ranking),
            "best_single": self.best_single,
            "delta": self.delta,
        }


def make_lexicon(alphabet: Alphabet, size: int, word_len_range=(2, 3),
                 seed: int = 1) -> Lexicon:
    rng = np.random.default_rng([seed, 104729])
    words = []
    seen = set()
    while len(words) < size:
        n = int(rng.integers(word_len_range[0], word_len_range[1] + 1))
        w = "".join(rng.choice(list(alphabet.chars), size=n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return Lexicon(words=tuple(words))


def _line_features(trace: InkTrace, sys_cfg: SystemConfig,
                   pre_cfg: PreprocessConfig) -> FeatureSequence:
    if sys_cfg.preprocess:
        trace = run_online_pipeline(trace, pre_cfg)
    if sys_cfg.mode == "offline":
        image = render_offline(trace, scale=sys_cfg.render_scale,
                               pen_width=sys_cfg.pen_width, margin=1)
        seq = extract_offline_windows(image)
    else:
        seq = extract_online_features(trace, sys_cfg.resample_distance)
    if sys_cfg.drop_features:
        frames = np.delete(seq.frames, list(sys_cfg.drop_features), axis=1)
        seq = FeatureSequence(frames=frames, source=seq.source)
    return seq


def run_experiment(cfg: ExperimentConfig | None = None,
                   seed: int | None = None) -> ExperimentReport:
    """Synth -> split -> per-system train/recognize -> ROVER -> scores.

    `seed`, when given, overrides both the synthesis and the split seed so a
    whole experiment re-rolls from one number.
    """
    import dataclasses

    cfg = cfg or ExperimentConfig()
    if seed is not None:
        cfg = dataclasses.replace(
            cfg,
            synth=dataclasses.replace(cfg.synth, seed=seed),
            split_seed=seed,
        )
    alphabet = synthetic_alphabet(cfg.synth.alphabet_size)
    lexicon = make_lexicon(alphabet, cfg.lexicon_size, cfg.word_len_range)
    traces = synth_dataset(cfg.synth, lexicon, cfg.n_lines)
    by_id = {t.sample_id: t for t in traces}
    split = split_four_stages([t.sample_id for t in traces],
                              ratios=cfg.split_ratios, seed=cfg.split_seed)
    pre_cfg = PreprocessConfig()
    train_cfg = TrainConfig(max_iterations=cfg.train_iterations,
                            target_components=cfg.target_components)

    test_hyps: dict[str, list[HypothesisTranscript]] = {sid: [] for sid in split.test}
    val_scores: dict[str, float] = {}
    test_scores: dict[str, ScoreReport] = {}
    for sys_cfg in cfg.systems:
        feats = {sid: _line_features(by_id[sid], sys_cfg, pre_cfg)
                 for sid in by_id}
        norm = fit_normalizer([feats[sid] for sid in split.train])
        feats = {sid: apply_normalizer(f, norm) for sid, f in feats.items()}
        train_ids = list(split.train)
        if sys_cfg.train_fraction < 1.0:
            keep = max(1, int(round(sys_cfg.train_fraction * len(train_ids))))
            sub_seed = (cfg.split_seed * 8191 +
                        zlib.crc32(sys_cfg.system_id.encode())) % (2 ** 32)
            rng = np.random.default_rng(sub_seed)
            train_ids = [train_ids[i] for i in
                         sorted(rng.permutation(len(train_ids))[:keep])]
        samples = [(feats[sid], by_id[sid].transcript) for sid in train_ids]
        bank = train_models(samples, alphabet, train_cfg,
                            n_states=sys_cfg.n_states or cfg.n_states)

        decoder = LineDecoder(lexicon, bank, alphabet,
                              system_id=sys_cfg.system_id)

        def decode(sid):
            return decoder.decode(feats[sid], sample_id=sid)

        val_pairs = []
        for sid in split.validation_meta:
            hyp = decode(sid)
            val_pairs.append((hyp.word_list(), list(by_id[sid].transcript)))
        val_scores[sys_cfg.system_id] = score_corpus(val_pairs).recognition_rate

        test_pairs = []
        for sid in split.test:
            hyp = decode(sid)
            test_hyps[sid].append(hyp)
            test_pairs.append((hyp.word_list(), list(by_id[sid].transcript)))
        test_scores[sys_cfg.system_id] = score_corpus(test_pairs)

    ranking = SystemRanking(systems=tuple(sorted(
        val_scores, key=lambda s: -val_scores[s])))
    params = AlignmentParams()
    combined_pairs = []
    for sid in split.test:
        merged = combine(test_hyps[sid], params, ranking)
        combined_pairs.append((merged.word_list(), list(by_id[sid].transcript)))
    combined = score_corpus(combined_pairs)
    best_single = max(test_scores, key=lambda s: test_scores[s].recognition_rate)
    return ExperimentReport(system_scores=test_scores, combined=combined,
                            ranking=ranking.systems, best_single=best_single)
