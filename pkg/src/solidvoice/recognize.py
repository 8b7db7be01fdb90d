"""Toy CTC command recognizer: the stand-in for a voice assistant's
speech recognition model.

A 10-word vocabulary of two-tone 200 ms "words" feeds a per-frame
log-magnitude spectral front end (64 bins over 0-4 kHz on a 16 kHz
stream) and a single affine layer with softmax over 11 classes
(10 words + blank), trained with exact-gradient CTC and decoded by
best-path collapse. Deliberately small: the perturbation trainer
differentiates through the whole model by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .signals import (
    REC_RATE_HZ,
    SampledSignal,
    SignalError,
    Transcript,
    cer,
)

__all__ = [
    "Word",
    "Vocabulary",
    "FeatureConfig",
    "Recognizer",
    "TrainingSetSpec",
    "TrainingError",
    "InfeasibleLabelError",
    "default_vocabulary",
    "synth_command",
    "featurize",
    "forward",
    "ctc_loss",
    "ctc_grad_logits",
    "greedy_decode",
    "decode_signal",
    "train_recognizer",
    "save_recognizer",
    "load_recognizer",
]

WORD_DURATION_S = 0.2
MAX_COMMAND_WORDS = 7
PEAK_NORM = 0.8

NUM_FEATURES = 64
NUM_WORDS = 10
NUM_CLASSES = NUM_WORDS + 1  # words + blank
BLANK = NUM_WORDS


class RecognizerError(ValueError):
    pass


class TrainingError(RecognizerError):
    def __init__(self, final_cer: float, epochs: int):
        self.final_cer = final_cer
        self.epochs = epochs
        super().__init__(
            f"held-out CER {final_cer:.3f} after {epochs} epochs did not reach target"
        )


class InfeasibleLabelError(RecognizerError):
    """Label needs more frames than the utterance provides."""


@dataclass(frozen=True)
class Word:
    token: int
    label: str
    tone_hz: tuple[float, float]


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[Word, ...]

    def __post_init__(self):
        if len(self.words) != NUM_WORDS:
            raise RecognizerError(f"vocabulary must hold {NUM_WORDS} words")
        pairs = set()
        for i, w in enumerate(self.words):
            if w.token != i:
                raise RecognizerError("word tokens must be 0..9 in order")
            for f in w.tone_hz:
                if not (300.0 <= f <= 3400.0):
                    raise RecognizerError(
                        f"word {w.label!r}: tone {f} Hz outside the 300-3400 Hz recipe band"
                    )
            if w.tone_hz in pairs:
                raise RecognizerError(f"duplicate tone pair {w.tone_hz}")
            pairs.add(w.tone_hz)

    def labels(self, transcript: Transcript) -> str:
        return " ".join(self.words[t].label for t in transcript)

    def tokens_for_labels(self, labels) -> Transcript:
        by_label = {w.label: w.token for w in self.words}
        try:
            return Transcript(tuple(by_label[l] for l in labels))
        except KeyError as e:
            raise RecognizerError(f"unknown word {e.args[0]!r}") from None


_DEFAULT_WORDS = [
    ("hey", (450.0, 1950.0)),
    ("phone", (600.0, 2075.0)),
    ("open", (750.0, 2200.0)),
    ("camera", (900.0, 2325.0)),
    ("send", (1050.0, 2450.0)),
    ("message", (1200.0, 2575.0)),
    ("play", (1350.0, 2700.0)),
    ("music", (1500.0, 2825.0)),
    ("call", (1650.0, 2950.0)),
    ("stop", (1800.0, 3075.0)),
]


def default_vocabulary() -> Vocabulary:
    return Vocabulary(tuple(Word(i, lbl, pair) for i, (lbl, pair) in enumerate(_DEFAULT_WORDS)))


def synth_command(words: Transcript, vocab: Vocabulary, gap_s: float = 0.05,
                  sample_rate_hz: float = REC_RATE_HZ) -> SampledSignal:
    """Concatenate two-tone word units with silence gaps; peak 0.8.

    Each word is 200 ms of its two sinusoids under a raised-cosine envelope.
    """
    if not (1 <= len(words) <= MAX_COMMAND_WORDS):
        raise RecognizerError(f"commands must have 1-{MAX_COMMAND_WORDS} words, got {len(words)}")
    if gap_s < 0:
        raise RecognizerError("gap_s must be >= 0")
    fs = sample_rate_hz
    n_word = int(round(WORD_DURATION_S * fs))
    n_gap = int(round(gap_s * fs))
    t = np.arange(n_word) / fs
    envelope = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n_word) / n_word))
    pieces = []
    for i, token in enumerate(words):
        if not (0 <= token < NUM_WORDS):
            raise RecognizerError(f"token {token} outside the vocabulary")
        f1, f2 = vocab.words[token].tone_hz
        unit = (np.sin(2 * np.pi * f1 * t) + np.sin(2 * np.pi * f2 * t)) * envelope
        pieces.append(unit)
        if i < len(words) - 1 and n_gap:
            pieces.append(np.zeros(n_gap))
    x = np.concatenate(pieces)
    peak = np.max(np.abs(x))
    return SampledSignal(x * (PEAK_NORM / peak), fs)


@dataclass(frozen=True)
class FeatureConfig:
    """Per-frame log-magnitude spectral features on the 16 kHz stream."""

    frame_len_s: float = 0.025
    hop_s: float = 0.010
    num_bins: int = NUM_FEATURES
    band_hz: float = 4000.0
    log_floor: float = 1e-6    # eps_l inside the log
    mag_floor: float = 1e-12   # eps_m inside the sqrt

    def __post_init__(self):
        if not (self.frame_len_s > self.hop_s > 0):
            raise RecognizerError("frame length must exceed hop and both must be > 0")
        if self.log_floor <= 0 or self.mag_floor <= 0:
            raise RecognizerError("feature floors must be strictly positive")

    def frame_len(self, fs: float) -> int:
        return int(round(self.frame_len_s * fs))

    def hop(self, fs: float) -> int:
        return int(round(self.hop_s * fs))

    def bin_freqs_hz(self) -> np.ndarray:
        return np.arange(self.num_bins) * (self.band_hz / self.num_bins)


@lru_cache(maxsize=8)
def _dft_matrices(num_bins, band_hz, frame_len, fs):
    freqs = np.arange(num_bins) * (band_hz / num_bins)
    n = np.arange(frame_len)
    arg = 2.0 * np.pi * np.outer(freqs, n) / fs
    return np.cos(arg), np.sin(arg)


def frame_signal(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n_frames = (len(samples) - frame_len) // hop + 1
    idx = np.arange(n_frames)[:, None] * hop + np.arange(frame_len)[None, :]
    return samples[idx]


def featurize(signal: SampledSignal, config: FeatureConfig | None = None) -> np.ndarray:
    """(frames x num_bins) log-magnitude features.

    Per bin: log(eps_l + sqrt(eps_m + Re^2 + Im^2)) of the frame's DFT
    sampled at num_bins uniform frequencies over [0, band_hz).
    """
    config = config or FeatureConfig()
    fs = signal.sample_rate_hz
    if fs != REC_RATE_HZ:
        raise RecognizerError(f"features are defined on the {REC_RATE_HZ:.0f} Hz stream, got {fs}")
    frame_len = config.frame_len(fs)
    hop = config.hop(fs)
    if len(signal) < frame_len:
        raise RecognizerError(f"signal shorter than one frame ({frame_len} samples)")
    frames = frame_signal(signal.samples, frame_len, hop)
    cos_m, sin_m = _dft_matrices(config.num_bins, config.band_hz, frame_len, fs)
    re = frames @ cos_m.T
    im = -(frames @ sin_m.T)
    mag = np.sqrt(config.mag_floor + re * re + im * im)
    return np.log(config.log_floor + mag)


@dataclass(frozen=True)
class Recognizer:
    """Affine + softmax acoustic model over the spectral features."""

    weights: np.ndarray   # (num_bins, num_classes)
    bias: np.ndarray      # (num_classes,)
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    vocabulary: Vocabulary = field(default_factory=default_vocabulary)
    provenance: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.shape != (self.feature_config.num_bins, NUM_CLASSES):
            raise RecognizerError(f"weights must be {(self.feature_config.num_bins, NUM_CLASSES)}")
        if b.shape != (NUM_CLASSES,):
            raise RecognizerError(f"bias must be ({NUM_CLASSES},)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise RecognizerError("weights must be finite")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def untrained(cls, **kw) -> "Recognizer":
        return cls(np.zeros((NUM_FEATURES, NUM_CLASSES)), np.zeros(NUM_CLASSES), **kw)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def forward(recognizer: Recognizer, features: np.ndarray) -> np.ndarray:
    """Per-frame log-probabilities (frames x 11)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != recognizer.feature_config.num_bins:
        raise RecognizerError(f"features must be (frames, {recognizer.feature_config.num_bins})")
    return log_softmax(features @ recognizer.weights + recognizer.bias)


def greedy_decode(log_probs: np.ndarray, blank: int | None = None) -> Transcript:
    """Best path: per-frame argmax, collapse repeats, strip blanks.

    Ties resolve to the highest class index, i.e. to blank, so a totally
    uninformative model decodes to the empty transcript.
    """
    lp = np.asarray(log_probs)
    if lp.size == 0:
        return Transcript(())
    k = lp.shape[1]
    blank = k - 1 if blank is None else blank
    path = k - 1 - np.argmax(lp[:, ::-1], axis=1)
    tokens = []
    prev = None
    for c in path:
        if c != prev and c != blank:
            tokens.append(int(c))
        prev = c
    return Transcript(tuple(tokens))


def _extended_label(tokens: tuple[int, ...], blank: int) -> np.ndarray:
    ext = np.full(2 * len(tokens) + 1, blank, dtype=np.int64)
    ext[1::2] = tokens
    return ext


def _min_frames(tokens: tuple[int, ...]) -> int:
    repeats = sum(1 for a, b in zip(tokens, tokens[1:]) if a == b)
    return len(tokens) + repeats


def ctc_loss(log_probs: np.ndarray, label: Transcript,
             blank: int | None = None) -> tuple[float, np.ndarray]:
    """CTC negative log-likelihood and its exact gradient w.r.t. log_probs.

    The forward-backward recursion runs in log space; the gradient treats
    the log-probability matrix entries as free variables (so it matches
    finite differences applied directly to them).
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2:
        raise RecognizerError("log_probs must be (frames, classes)")
    t_len, k = lp.shape
    blank = k - 1 if blank is None else blank
    tokens = tuple(label.tokens)
    if any(not (0 <= t < k) or t == blank for t in tokens):
        raise RecognizerError("label tokens must be valid non-blank classes")
    if t_len < _min_frames(tokens):
        raise InfeasibleLabelError(
            f"label needs >= {_min_frames(tokens)} frames, got {t_len}"
        )
    ext = _extended_label(tokens, blank)
    s_len = ext.size
    lp_ext = lp[:, ext]  # (T, S)

    # skip transitions s-2 -> s are allowed into non-blank states that
    # differ from the state two back
    can_skip = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    neg = -np.inf
    alpha = np.full((t_len, s_len), neg)
    alpha[0, 0] = lp_ext[0, 0]
    if s_len > 1:
        alpha[0, 1] = lp_ext[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate([[neg], prev[:-1]])
        skip = np.where(can_skip, np.concatenate([[neg, neg], prev[:-2]]), neg)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), skip) + lp_ext[t]

    tail = alpha[-1, -1] if s_len == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    loss = -tail
    if not np.isfinite(loss):
        raise RecognizerError("label has no feasible alignment")

    # beta[t, s]: completion probability from state s after emitting at t
    beta = np.full((t_len, s_len), neg)
    beta[-1, -1] = 0.0
    if s_len > 1:
        beta[-1, -2] = 0.0
    fwd_skip = np.zeros(s_len, dtype=bool)
    fwd_skip[:-2] = can_skip[2:]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + lp_ext[t + 1]
        stay = nxt
        step = np.concatenate([nxt[1:], [neg]])
        skip = np.where(fwd_skip, np.concatenate([nxt[2:], [neg, neg]]), neg)
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)

    # state posteriors normalized by the total path probability
    post = np.exp(alpha + beta + loss)  # (T, S), each row sums to ~1
    grad = np.zeros_like(lp)
    for s in range(s_len):
        grad[:, ext[s]] -= post[:, s]
    return float(loss), grad


def ctc_grad_logits(log_probs: np.ndarray, grad_log_probs: np.ndarray) -> np.ndarray:
    """Compose the CTC gradient through the log-softmax that produced
    log_probs, yielding the gradient w.r.t. the affine logits."""
    p = np.exp(log_probs)
    row = grad_log_probs.sum(axis=1, keepdims=True)
    return grad_log_probs - p * row


def decode_signal(recognizer: Recognizer, signal: SampledSignal) -> Transcript:
    feats = featurize(signal, recognizer.feature_config)
    return greedy_decode(forward(recognizer, feats))


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainingSetSpec:
    """Synthetic corpus recipe: random 2-7 word commands, present once clean
    and once lightly noised, both under a random playback gain so the model
    tolerates the level shift the receive chain introduces."""

    n_commands: int = 120          # x2 instances (clean + noised) >= 200 total
    n_heldout: int = 40
    min_words: int = 2
    max_words: int = 7
    gap_s: float = 0.05
    noise_snr_db: float = 20.0
    gain_range: tuple[float, float] = (0.3, 1.0)
    learning_rate: float = 0.05
    max_epochs: int = 2000
    target_cer: float = 0.05

    def __post_init__(self):
        if 2 * self.n_commands < 200:
            raise RecognizerError("training set must hold >= 200 instances")
        if not (1 <= self.min_words <= self.max_words <= MAX_COMMAND_WORDS):
            raise RecognizerError("bad word-count range")


def random_transcript(rng: np.random.Generator, min_words: int, max_words: int) -> Transcript:
    length = int(rng.integers(min_words, max_words + 1))
    return Transcript(tuple(int(t) for t in rng.integers(0, NUM_WORDS, length)))


def _build_corpus(vocab, spec, rng):
    train = []
    for _ in range(spec.n_commands):
        label = random_transcript(rng, spec.min_words, spec.max_words)
        wave = synth_command(label, vocab, spec.gap_s).samples
        gain_clean = rng.uniform(*spec.gain_range)
        train.append((label, gain_clean * wave))
        gain_noisy = rng.uniform(*spec.gain_range)
        noisy = gain_noisy * wave
        p_noise = np.mean(noisy**2) / 10.0 ** (spec.noise_snr_db / 10.0)
        noisy = noisy + rng.normal(0.0, np.sqrt(p_noise), noisy.size)
        train.append((label, noisy))
    heldout = []
    for _ in range(spec.n_heldout):
        label = random_transcript(rng, spec.min_words, spec.max_words)
        heldout.append((label, synth_command(label, vocab, spec.gap_s).samples))
    return train, heldout


def heldout_cer(recognizer: Recognizer, items) -> float:
    total = 0.0
    for label, feats in items:
        hyp = greedy_decode(forward(recognizer, feats))
        total += cer(label, hyp)
    return total / len(items)


def train_recognizer(vocab: Vocabulary, spec: TrainingSetSpec | None = None,
                     seed: int = 0) -> Recognizer:
    """Full-batch plain gradient descent on the mean CTC loss until the
    held-out CER drops below target. Deterministic for a fixed seed."""
    spec = spec or TrainingSetSpec()
    cfg = FeatureConfig()
    rng = np.random.default_rng(seed)
    train, heldout = _build_corpus(vocab, spec, rng)
    train_feats = [
        (label, featurize(SampledSignal(w, REC_RATE_HZ), cfg)) for label, w in train
    ]
    held_feats = [
        (label, featurize(SampledSignal(w, REC_RATE_HZ), cfg)) for label, w in heldout
    ]
    w = np.zeros((cfg.num_bins, NUM_CLASSES))
    b = np.zeros(NUM_CLASSES)
    n = len(train_feats)
    final_cer = np.inf
    for epoch in range(1, spec.max_epochs + 1):
        gw = np.zeros_like(w)
        gb = np.zeros_like(b)
        for label, feats in train_feats:
            lp = log_softmax(feats @ w + b)
            _, glp = ctc_loss(lp, label)
            gz = ctc_grad_logits(lp, glp)
            gw += feats.T @ gz
            gb += gz.sum(axis=0)
        w -= spec.learning_rate * gw / n
        b -= spec.learning_rate * gb / n
        total = 0.0
        for label, feats in held_feats:
            total += cer(label, greedy_decode(log_softmax(feats @ w + b)))
        final_cer = total / len(held_feats)
        if final_cer < spec.target_cer:
            return Recognizer(w, b, cfg, vocab,
                              provenance=f"seed={seed} epochs={epoch} heldout_cer={final_cer:.4f}")
    raise TrainingError(final_cer, spec.max_epochs)


# ---------------------------------------------------------------------------
# serialization: versioned plain text, 17 significant digits

_FORMAT_HEADER = "solidvoice-recognizer v1"


def save_recognizer(recognizer: Recognizer, path) -> None:
    lines = [_FORMAT_HEADER,
             f"{recognizer.weights.shape[0]} {recognizer.weights.shape[1]}"]
    for row in recognizer.weights:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    lines.append(" ".join(f"{x:.17g}" for x in recognizer.bias))
    Path(path).write_text("\n".join(lines) + "\n")


def load_recognizer(path, vocabulary: Vocabulary | None = None) -> Recognizer:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != _FORMAT_HEADER:
        raise RecognizerError(f"{path}: not a {_FORMAT_HEADER} file")
    rows, cols = (int(v) for v in text[1].split())
    if cols != NUM_CLASSES:
        raise RecognizerError(f"{path}: expected {NUM_CLASSES} classes, got {cols}")
    values = [np.array([float(x) for x in line.split()]) for line in text[2:2 + rows + 1]]
    if len(values) != rows + 1 or any(v.size != cols for v in values):
        raise RecognizerError(f"{path}: malformed weight block")
    w = np.vstack(values[:rows])
    b = values[rows]
    cfg = FeatureConfig(num_bins=rows) if rows != NUM_FEATURES else FeatureConfig()
    return Recognizer(w, b, cfg, vocabulary or default_vocabulary(),
                      provenance=f"loaded:{path}")
