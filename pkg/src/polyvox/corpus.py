"""Synthetic multilingual corpus generation and cleaning.

A toy language is a permutation cipher over a shared 20-symbol alphabet:
graphemes map bijectively to phonemes, and each phoneme has a canonical
feature vector in a fixed bank. Utterance feature frames are the phoneme
vectors repeated ``frames_per_phoneme`` times, a trailing silence chunk, a
small per-speaker offset, and Gaussian noise. Nearest-neighbour decoding of
clean frames recovers the phoneme sequence exactly.

On-disk layout (written by ``datagen``):
  manifest.tsv   id, language, speaker, text, feature_path, split (UTF-8 TSV)
  languages.tsv  language_id, name, permutation (phoneme ids, comma joined)
  features/*.fvec  flat binary: 3 uint64 header (magic, N, F) + N*F float64 LE
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ConfigError, ContractError, SeededRng

ALPHABET = "abcdefghijklmnopqrst"
ALPHABET_SIZE = len(ALPHABET)
PAD_ID = 0  # token 0 is padding; grapheme g maps to token g+1
VOCAB_SIZE = ALPHABET_SIZE + 1
SILENCE_ID = ALPHABET_SIZE  # bank row index of the silence vector

FEATURE_MAGIC = 0x584F56464541_54  # arbitrary fixed tag for .fvec files
BANK_SEED = 0x7E0_BA_2C  # the bank is a package-level constant

MIN_BANK_DISTANCE = 0.5
SPEAKER_OFFSET_NORM = 0.1
FRAME_NOISE_SIGMA = 0.01


def text_to_tokens(text: str) -> np.ndarray:
    out = np.empty(len(text), dtype=np.int64)
    for i, ch in enumerate(text):
        g = ord(ch) - ord("a")
        if not 0 <= g < ALPHABET_SIZE:
            raise ContractError(f"text contains symbol {ch!r} outside the alphabet")
        out[i] = g + 1
    return out


def tokens_to_text(tokens) -> str:
    return "".join(ALPHABET[t - 1] for t in tokens if t != PAD_ID)


class PhonemeBank:
    """Canonical feature vectors for the 20 phonemes plus silence.

    The vectors are orthonormal columns of a seeded random rotation, so all
    pairwise distances are sqrt(2) and the midpoint of any two vectors is
    strictly closer to both of them than to any third (slack ~0.52). The
    bank is a fixed function of the package-level seed: every corpus shares
    it.
    """

    def __init__(self, feature_dim: int = 24, frames_per_phoneme: int = 2):
        n = ALPHABET_SIZE + 1
        if feature_dim < n:
            raise ConfigError(
                f"PhonemeBank: feature_dim {feature_dim} < {n} breaks the "
                "orthonormal construction"
            )
        if frames_per_phoneme < 1:
            raise ConfigError("PhonemeBank: frames_per_phoneme must be >= 1")
        self.feature_dim = feature_dim
        self.frames_per_phoneme = frames_per_phoneme
        rng = SeededRng(BANK_SEED)
        q, r = np.linalg.qr(rng.normal((feature_dim, feature_dim)))
        q *= np.sign(np.diag(r))  # fix the QR sign ambiguity for determinism
        self.vectors = np.ascontiguousarray(q[:, :n].T)  # [n, feature_dim]

    def nearest(self, frames: np.ndarray) -> np.ndarray:
        """Index of the nearest bank vector for each row of frames [N, F]."""
        if frames.size == 0:
            return np.empty(0, dtype=np.int64)
        d2 = ((frames[:, None, :] - self.vectors[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)

    def min_pairwise_distance(self) -> float:
        d = np.linalg.norm(self.vectors[:, None] - self.vectors[None, :], axis=2)
        np.fill_diagonal(d, np.inf)
        return float(d.min())

    def midpoint_slack(self) -> float:
        """min over pairs (p,q) and third vectors z of |mid-z| - |p-q|/2."""
        v = self.vectors
        n = v.shape[0]
        worst = np.inf
        for p in range(n):
            for q in range(p + 1, n):
                mid = (v[p] + v[q]) / 2
                dm = np.linalg.norm(mid - v, axis=1)
                half = np.linalg.norm(v[p] - v[q]) / 2
                sl = dm - half
                sl[[p, q]] = np.inf
                worst = min(worst, float(sl.min()))
        return worst


@dataclass
class ToyLanguage:
    """A grapheme-to-phoneme permutation cipher."""

    id: int
    name: str
    permutation: np.ndarray  # phoneme id for each grapheme id

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(ALPHABET_SIZE)):
            raise ContractError(f"language {self.name}: permutation is not a bijection")
        self.permutation = perm

    def phonemes(self, text: str) -> np.ndarray:
        return self.permutation[text_to_tokens(text) - 1]


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int((a != b).sum())


@dataclass
class Utterance:
    id: str
    language_id: int
    speaker_id: int
    text: str
    frames: np.ndarray | None
    split: str = "train"
    duration: int = 0  # frame count (duration proxy)

    def __post_init__(self):
        if not self.text:
            raise ContractError(f"utterance {self.id}: empty text")
        if self.frames is not None:
            self.duration = int(self.frames.shape[0])


@dataclass
class CorpusConfig:
    num_languages: int = 4
    speakers_per_language: int = 2
    examples_per_language: int = 480
    min_text_len: int = 3
    max_text_len: int = 30
    feature_dim: int = 24
    frames_per_phoneme: int = 2
    val_per_language: int = 40
    test_per_language: int = 40

    def validate(self):
        if self.num_languages < 1:
            raise ConfigError("corpus: num_languages must be >= 1")
        if not 3 <= self.min_text_len <= self.max_text_len <= 30:
            raise ConfigError("corpus: text lengths must satisfy 3 <= min <= max <= 30")
        if self.val_per_language + self.test_per_language >= self.examples_per_language:
            raise ConfigError("corpus: val+test must be smaller than examples_per_language")


class Corpus:
    """In-memory corpus: languages, phoneme bank, utterances with frames."""

    def __init__(self, cfg: CorpusConfig, languages, bank, utterances):
        self.cfg = cfg
        self.languages: list[ToyLanguage] = languages
        self.bank: PhonemeBank = bank
        self.utterances: list[Utterance] = utterances

    @property
    def num_languages(self) -> int:
        return len(self.languages)

    @property
    def num_speakers(self) -> int:
        return self.cfg.num_languages * self.cfg.speakers_per_language

    def split(self, name: str) -> list[Utterance]:
        return [u for u in self.utterances if u.split == name]

    def by_language(self, utts=None) -> dict[int, list[Utterance]]:
        out: dict[int, list[Utterance]] = {l.id: [] for l in self.languages}
        for u in self.utterances if utts is None else utts:
            out.setdefault(u.language_id, []).append(u)
        return out

    def reference_phonemes(self, utt: Utterance) -> np.ndarray:
        return self.languages[utt.language_id].phonemes(utt.text)

    def primary_speaker(self, language_id: int) -> int:
        return language_id * self.cfg.speakers_per_language


def _make_language(lid: int, existing, rng: SeededRng) -> ToyLanguage:
    for attempt in range(1000):
        perm = rng.child("lang", lid, attempt).permutation(ALPHABET_SIZE)
        if all(hamming(perm, other.permutation) >= ALPHABET_SIZE // 2 for other in existing):
            return ToyLanguage(id=lid, name=f"lang{lid}", permutation=perm)
    raise ContractError(f"could not draw a distinct permutation for language {lid}")


def speaker_offset(bank: PhonemeBank, speaker_id: int) -> np.ndarray:
    v = SeededRng(BANK_SEED).child("speaker", speaker_id).normal(bank.feature_dim)
    return SPEAKER_OFFSET_NORM * v / np.linalg.norm(v)


def render_frames(
    bank: PhonemeBank, phonemes: np.ndarray, speaker_id: int, rng: SeededRng | None
) -> np.ndarray:
    """Frames for a phoneme sequence: each phoneme repeated r times, one
    trailing silence chunk, speaker offset, optional noise."""
    r = bank.frames_per_phoneme
    seq = np.concatenate([phonemes, [SILENCE_ID]])
    frames = np.repeat(bank.vectors[seq], r, axis=0)
    frames = frames + speaker_offset(bank, speaker_id)
    if rng is not None:
        frames = frames + rng.normal(frames.shape, FRAME_NOISE_SIGMA)
    return frames


def generate_toy_corpus(cfg: CorpusConfig, seed: int) -> Corpus:
    """Deterministic synthetic corpus: same seed, same corpus, byte for byte."""
    cfg.validate()
    rng = SeededRng(seed)
    bank = PhonemeBank(cfg.feature_dim, cfg.frames_per_phoneme)
    languages: list[ToyLanguage] = []
    for lid in range(cfg.num_languages):
        languages.append(_make_language(lid, languages, rng))

    utterances = []
    for lang in languages:
        split_tags = ["train"] * cfg.examples_per_language
        order = rng.child("split", lang.id).permutation(cfg.examples_per_language)
        for j in order[: cfg.val_per_language]:
            split_tags[j] = "val"
        for j in order[cfg.val_per_language : cfg.val_per_language + cfg.test_per_language]:
            split_tags[j] = "test"
        for i in range(cfg.examples_per_language):
            u_rng = rng.child("utt", lang.id, i)
            length = int(u_rng.integers(cfg.min_text_len, cfg.max_text_len + 1))
            graphemes = u_rng.integers(0, ALPHABET_SIZE, size=length)
            text = "".join(ALPHABET[g] for g in graphemes)
            speaker = lang.id * cfg.speakers_per_language + int(
                u_rng.integers(0, cfg.speakers_per_language)
            )
            frames = render_frames(
                bank, lang.permutation[graphemes], speaker, u_rng.child("noise")
            )
            utterances.append(
                Utterance(
                    id=f"u{lang.id:02d}-{i:05d}",
                    language_id=lang.id,
                    speaker_id=speaker,
                    text=text,
                    frames=frames,
                    split=split_tags[i],
                )
            )
    return Corpus(cfg, languages, bank, utterances)


# ---------------------------------------------------------------------------
# Cleaning
# ---------------------------------------------------------------------------


@dataclass
class CleanReport:
    dropped_window: dict[int, int] = field(default_factory=dict)
    dropped_outlier: dict[int, int] = field(default_factory=dict)
    kept: dict[int, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def total_dropped(self) -> int:
        return sum(self.dropped_window.values()) + sum(self.dropped_outlier.values())


def outlier_filter(utts: list[Utterance]) -> list[Utterance]:
    """Single 3-sigma pass over duration groups keyed by exact transcript
    length. Population sigma; the interval is open; sigma=0 groups survive."""
    groups: dict[int, list[Utterance]] = {}
    for u in utts:
        groups.setdefault(len(u.text), []).append(u)
    keep: set[str] = set()
    for members in groups.values():
        durs = np.array([u.duration for u in members], dtype=float)
        mu = durs.mean()
        sigma = durs.std()  # population
        if sigma == 0.0:
            keep.update(u.id for u in members)
            continue
        lo, hi = mu - 3.0 * sigma, mu + 3.0 * sigma
        for u, d in zip(members, durs):
            if lo < d < hi:
                keep.add(u.id)
    return [u for u in utts if u.id in keep]


def clean_corpus(
    utts: list[Utterance],
    min_dur: float,
    max_dur: float,
    min_chars: int,
    max_chars: int,
) -> tuple[list[Utterance], CleanReport]:
    """Window filter followed by the outlier filter repeated to fixpoint
    (so cleaning is idempotent). Returns survivors and per-language counts."""
    report = CleanReport()
    langs = sorted({u.language_id for u in utts})
    for l in langs:
        report.dropped_window[l] = 0
        report.dropped_outlier[l] = 0
    windowed = []
    for u in utts:
        if min_dur <= u.duration <= max_dur and min_chars <= len(u.text) <= max_chars:
            windowed.append(u)
        else:
            report.dropped_window[u.language_id] += 1
    survivors = windowed
    while True:
        nxt = outlier_filter(survivors)
        if len(nxt) == len(survivors):
            break
        survivors = nxt
    kept_ids = {u.id for u in survivors}
    for u in windowed:
        if u.id not in kept_ids:
            report.dropped_outlier[u.language_id] += 1
    for l in langs:
        n = sum(1 for u in survivors if u.language_id == l)
        report.kept[l] = n
        if n == 0:
            report.warnings.append(f"language {l}: no examples survived cleaning")
    return survivors, report


def subset_per_language(
    utts: list[Utterance], n: int, rng: SeededRng
) -> list[Utterance]:
    """Uniform per-language sample without replacement, seeded."""
    by_lang: dict[int, list[Utterance]] = {}
    for u in utts:
        by_lang.setdefault(u.language_id, []).append(u)
    out: list[Utterance] = []
    for lid in sorted(by_lang):
        members = by_lang[lid]
        if n > len(members):
            raise ContractError(
                f"subset_per_language: language {lid} has {len(members)} examples, need {n}"
            )
        idx = rng.child("subset", lid).permutation(len(members))[:n]
        out.extend(members[i] for i in sorted(idx))
    return out


# ---------------------------------------------------------------------------
# Disk I/O
# ---------------------------------------------------------------------------


def write_feature_file(path: str, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    n, f = frames.shape
    with open(path, "wb") as fh:
        np.array([FEATURE_MAGIC, n, f], dtype="<u8").tofile(fh)
        frames.astype("<f8").tofile(fh)


def read_feature_file(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype="<u8", count=3)
        if header.size != 3 or header[0] != FEATURE_MAGIC:
            raise ContractError(f"{path}: not a feature file (bad header)")
        n, f = int(header[1]), int(header[2])
        data = np.fromfile(fh, dtype="<f8", count=n * f)
    if data.size != n * f:
        raise ContractError(f"{path}: truncated feature payload")
    return data.reshape(n, f)


def read_feature_header(path: str) -> tuple[int, int]:
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype="<u8", count=3)
    if header.size != 3 or header[0] != FEATURE_MAGIC:
        raise ContractError(f"{path}: not a feature file (bad header)")
    return int(header[1]), int(header[2])


def save_corpus(corpus: Corpus, out_dir: str) -> list[str]:
    """Write manifest.tsv, languages.tsv and per-utterance feature files.
    Returns the relative paths written (deterministic order)."""
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    written = []
    lang_path = os.path.join(out_dir, "languages.tsv")
    with open(lang_path, "w", encoding="utf-8") as fh:
        fh.write("language_id\tname\tpermutation\n")
        for lang in corpus.languages:
            perm = ",".join(str(p) for p in lang.permutation)
            fh.write(f"{lang.id}\t{lang.name}\t{perm}\n")
    written.append("languages.tsv")
    man_path = os.path.join(out_dir, "manifest.tsv")
    with open(man_path, "w", encoding="utf-8") as fh:
        fh.write("id\tlanguage\tspeaker\ttext\tfeature_path\tsplit\n")
        for u in corpus.utterances:
            rel = f"features/{u.id}.fvec"
            fh.write(
                f"{u.id}\t{u.language_id}\t{u.speaker_id}\t{u.text}\t{rel}\t{u.split}\n"
            )
            write_feature_file(os.path.join(out_dir, rel), u.frames)
            written.append(rel)
    written.append("manifest.tsv")
    meta_path = os.path.join(out_dir, "corpus.tsv")
    with open(meta_path, "w", encoding="utf-8") as fh:
        fh.write("key\tvalue\n")
        for key in (
            "num_languages", "speakers_per_language", "examples_per_language",
            "min_text_len", "max_text_len", "feature_dim", "frames_per_phoneme",
            "val_per_language", "test_per_language",
        ):
            fh.write(f"{key}\t{getattr(corpus.cfg, key)}\n")
    written.append("corpus.tsv")
    return written


def load_corpus(in_dir: str, load_frames: bool = True) -> Corpus:
    meta_path = os.path.join(in_dir, "corpus.tsv")
    kv = {}
    with open(meta_path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            k, v = line.rstrip("\n").split("\t")
            kv[k] = int(v)
    cfg = CorpusConfig(**{k: v for k, v in kv.items() if k in CorpusConfig.__dataclass_fields__})
    bank = PhonemeBank(cfg.feature_dim, cfg.frames_per_phoneme)
    languages = []
    with open(os.path.join(in_dir, "languages.tsv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            lid, name, perm = line.rstrip("\n").split("\t")
            languages.append(
                ToyLanguage(
                    id=int(lid), name=name,
                    permutation=np.array([int(p) for p in perm.split(",")]),
                )
            )
    utterances = []
    with open(os.path.join(in_dir, "manifest.tsv"), encoding="utf-8") as fh:
        header = next(fh).rstrip("\n").split("\t")
        expected = ["id", "language", "speaker", "text", "feature_path", "split"]
        if header != expected:
            raise ContractError(f"manifest.tsv: header {header} != {expected}")
        for line in fh:
            uid, lang, spk, text, rel, split = line.rstrip("\n").split("\t")
            fpath = os.path.join(in_dir, rel)
            if load_frames:
                frames = read_feature_file(fpath)
                utt = Utterance(uid, int(lang), int(spk), text, frames, split)
            else:
                n, _ = read_feature_header(fpath)
                utt = Utterance(uid, int(lang), int(spk), text, None, split)
                utt.duration = n
            utterances.append(utt)
    return Corpus(cfg, languages, bank, utterances)
