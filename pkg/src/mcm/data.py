"""Corpus ingestion, tokenization, vocabulary, encoding, stratified
splitting, and a synthetic bilingual corpus generator.

The generator exists so the whole pipeline can be exercised offline: each
class owns a disjoint keyword pool split across an English-like and a
Roman-Urdu-like vocabulary, records code-switch between the two at a
configurable rate, and token spellings are perturbed to mimic the
non-standard orthography of romanized text.
"""
from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

DEFAULT_CLASSES = [
    "Appreciation",
    "Satisfied",
    "Peripheral complaint",
    "Demanded inquiry",
    "Corruption",
    "Lagged response",
    "Unresponsive",
    "Medicine payment",
    "Adverse behavior",
    "Resource nonexistence",
    "Grievance ascribed",
    "Obnoxious/irrelevant",
]

# Published class shares in percent; they add up to 100.1 as rounded, so
# profiles normalize them.
_CLASS_PERCENTS = [43.1, 31.1, 8.2, 5.7, 3.5, 2.1, 2.0, 1.8, 1.5, 0.6, 0.3, 0.2]


@dataclass
class LabeledText:
    text: str
    label: int


@dataclass
class ClassProfile:
    """Class names with target proportions that sum to 1."""

    names: list
    proportions: np.ndarray

    def __post_init__(self):
        self.proportions = np.asarray(self.proportions, dtype=np.float64)
        if len(self.names) != self.proportions.size:
            raise ValueError("names and proportions disagree in length")
        if np.any(self.proportions <= 0) or np.any(self.proportions > 1):
            raise ValueError("proportions must lie in (0, 1]")
        if abs(self.proportions.sum() - 1.0) > 1e-9:
            raise ValueError("proportions must sum to 1")

    @property
    def num_classes(self) -> int:
        return len(self.names)


def table1_profile() -> ClassProfile:
    """The 12-class skew profile of the SMS feedback corpus."""
    raw = np.asarray(_CLASS_PERCENTS)
    return ClassProfile(list(DEFAULT_CLASSES), raw / raw.sum())


# ---------------------------------------------------------------------------
# tokenization and loading


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties.

    Deliberately no stemming, transliteration, or spelling normalization.
    """
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            tokens.append(tok)
    return tokens


@dataclass
class TsvLoadResult:
    records: list
    rejections: list  # (line_number, reason)

    @property
    def records_in(self) -> int:
        return len(self.records) + len(self.rejections)


def load_tsv(path, class_names=None, text_col: int = 0, label_col: int = 1) -> TsvLoadResult:
    """Read "text<TAB>label" lines into labeled records.

    Malformed lines (missing tab, unknown label, fewer than two tokens)
    are collected into the rejection report instead of aborting the load.
    ``text_col``/``label_col`` remap other column layouts.
    """
    names = list(class_names) if class_names is not None else list(DEFAULT_CLASSES)
    label_ids = {name: i for i, name in enumerate(names)}
    records = []
    rejections = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                rejections.append((line_no, "empty line"))
                continue
            if (text_col, label_col) == (0, 1):
                text, sep, label = line.rpartition("\t")
                if not sep:
                    rejections.append((line_no, "missing tab separator"))
                    continue
            else:
                parts = line.split("\t")
                if max(text_col, label_col) >= len(parts):
                    rejections.append((line_no, "too few columns"))
                    continue
                text, label = parts[text_col], parts[label_col]
            label = label.strip()
            if label not in label_ids:
                rejections.append((line_no, f"unknown label {label!r}"))
                continue
            if len(tokenize(text)) < 2:
                rejections.append((line_no, "fewer than 2 tokens"))
                continue
            records.append(LabeledText(text, label_ids[label]))
    return TsvLoadResult(records, rejections)


def write_tsv(records, path, class_names=None) -> None:
    names = list(class_names) if class_names is not None else list(DEFAULT_CLASSES)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{rec.text}\t{names[rec.label]}\n")


# ---------------------------------------------------------------------------
# vocabulary and encoding


@dataclass
class Vocabulary:
    token_to_id: dict
    id_to_token: list
    min_count: int

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


def build_vocab(records, min_count: int = 2) -> Vocabulary:
    """Frequency-then-lexicographic ids after the pad/unk specials."""
    if not records:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for rec in records:
        counts.update(tokenize(rec.text))
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    id_to_token = [PAD_TOKEN, UNK_TOKEN] + kept
    return Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token, min_count)


@dataclass
class EncodedCorpus:
    sequences: np.ndarray  # (n, max_len) int64, right-padded with PAD_ID
    labels: np.ndarray     # (n,) int64
    max_len: int

    def __len__(self) -> int:
        return len(self.labels)


def encode_tokens(tokens, vocab: Vocabulary, max_len: int) -> np.ndarray:
    row = np.full(max_len, PAD_ID, dtype=np.int64)
    for i, tok in enumerate(tokens[:max_len]):
        row[i] = vocab.id(tok)
    return row


def encode(records, vocab: Vocabulary, max_len: int) -> EncodedCorpus:
    """Truncate to the first max_len tokens and right-pad."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    n = len(records)
    seqs = np.full((n, max_len), PAD_ID, dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    for i, rec in enumerate(records):
        seqs[i] = encode_tokens(tokenize(rec.text), vocab, max_len)
        labels[i] = rec.label
    return EncodedCorpus(seqs, labels, max_len)


def token_id_sequences(records, vocab: Vocabulary) -> list:
    """Unpadded id sequences, e.g. for embedding pretraining."""
    return [[vocab.id(t) for t in tokenize(rec.text)] for rec in records]


def pick_max_len(records, cap: int = 64) -> int:
    """95th percentile of token lengths, at least 2, capped."""
    lengths = [len(tokenize(rec.text)) for rec in records]
    if not lengths:
        raise ValueError("no records to size the sequence length from")
    return int(min(max(int(np.ceil(np.percentile(lengths, 95))), 2), cap))


# ---------------------------------------------------------------------------
# stratified split


def stratified_split(records, train_fraction: float, rng: np.random.Generator):
    """Per-class shuffle, then per-class split at round(fraction * n_c).

    Returns (train, test); together they partition the input records.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    by_class = {}
    for i, rec in enumerate(records):
        by_class.setdefault(rec.label, []).append(i)
    for label, idxs in sorted(by_class.items()):
        if len(idxs) < 2:
            raise ValueError(f"class {label} has fewer than 2 records")
    train, test = [], []
    for label in sorted(by_class):
        idxs = by_class[label]
        order = rng.permutation(len(idxs))
        cut = int(round(train_fraction * len(idxs)))
        for j, k in enumerate(order):
            (train if j < cut else test).append(records[idxs[k]])
    return train, test


def apportion(n: int, proportions: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding of n * proportions to integers summing to n."""
    quotas = n * np.asarray(proportions, dtype=np.float64)
    counts = np.floor(quotas).astype(np.int64)
    short = n - counts.sum()
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


# ---------------------------------------------------------------------------
# synthetic corpus generation

# One disjoint keyword pool per class, split into an English-like and a
# Roman-Urdu-like vocabulary; fillers are shared across classes.
CLASS_KEYWORDS = [
    (["thanks", "thankyou", "appreciate", "excellent", "wonderful", "bravo", "amazing", "grateful"],
     ["shukria", "mehrbani", "zabardast", "behtreen", "umda", "tareef", "shandar", "mashallah"]),
    (["satisfied", "happy", "fine", "resolved", "sorted", "pleased", "solved", "content"],
     ["theek", "acha", "khush", "mutmaeen", "sahi", "barhiya", "razi", "hogaya"]),
    (["parking", "queue", "crowded", "procedure", "paperwork", "counter", "maze", "congested"],
     ["qatar", "bheer", "kaghazat", "chakkar", "dhakkay", "lambi", "intezargah", "pechida"]),
    (["inquiry", "investigate", "probe", "verify", "review", "audit", "examine", "clarify"],
     ["tehqeeq", "jaanch", "parhtal", "maloomat", "tafteesh", "poochgach", "janchlo", "khulasa"]),
    (["bribe", "corruption", "demanded", "extortion", "kickback", "payoff", "grease", "crooked"],
     ["rishwat", "paisay", "ghoos", "khaya", "mangta", "wasooli", "bhatta", "badunwani"]),
    (["late", "delayed", "slow", "overdue", "lagged", "postponed", "sluggish", "tardy"],
     ["dair", "taakheer", "susti", "mahinay", "haftay", "derhui", "ataktay", "dheela"]),
    (["unresponsive", "ignored", "silence", "noreply", "unanswered", "deaf", "unattended", "ghosted"],
     ["jawab", "nahimila", "khamoshi", "sunwai", "bekhabar", "laparwah", "anjaan", "chuppi"]),
    (["medicine", "pharmacy", "prescription", "tablets", "syrup", "injection", "drugs", "dosage"],
     ["dawai", "dawaiyan", "goliyan", "nuskha", "sharbat", "teeka", "marham", "dawakhana"]),
    (["rude", "aggressive", "shouted", "misbehaved", "insulted", "hostile", "arrogant", "abusive"],
     ["badtameez", "gussa", "chillaya", "beizzati", "badsuluki", "akkharpan", "jhirakna", "taana"]),
    (["shortage", "unavailable", "lacking", "scarce", "outofstock", "missing", "depleted", "absent"],
     ["qillat", "kami", "mojood", "nayab", "khatam", "thoray", "nadarad", "muyassar"]),
    (["harassment", "misconduct", "threatened", "blackmail", "victimized", "coerced", "exploited", "intimidated"],
     ["zulm", "badfaili", "dhamki", "shikayat", "harasgi", "ziadti", "jabar", "dabaya"]),
    (["lottery", "advertisement", "spam", "unrelated", "promo", "gibberish", "random", "nonsense"],
     ["faltu", "bakwas", "ishtihar", "befaida", "bematlab", "fuzool", "anapshanap", "bejaan"]),
]

# Fillers are shared across classes but keep the language split, so a
# record with mix_rate=0 stays entirely inside one vocabulary.
FILLER_WORDS = (["the", "is", "was", "for", "and", "this", "with"],
                ["ka", "ki", "ko", "hai", "tha", "hum", "mera", "aur"])

_FILLER_RATE = 0.08


def _perturb(token: str, op: int, pos: int) -> str:
    """Spelling-variation noise: swap, drop, or double one character."""
    if op == 0 and len(token) >= 2:                   # swap adjacent
        p = pos % (len(token) - 1)
        return token[:p] + token[p + 1] + token[p] + token[p + 2:]
    if op == 1 and len(token) >= 3:                   # drop one
        p = pos % len(token)
        return token[:p] + token[p + 1:]
    p = pos % len(token)                              # double one
    return token[:p] + token[p] + token[p:]


def gen_synthetic(profile: ClassProfile, n: int, mix_rate: float, noise_rate: float,
                  rng: np.random.Generator) -> list:
    """Generate n labeled records following the profile's class skew.

    Each record draws 3..12 tokens; its base vocabulary (English-like or
    Roman-Urdu-like) is chosen per record, and each token switches to the
    other vocabulary with probability ``mix_rate``. Each token's spelling
    is perturbed with probability ``noise_rate``. Class counts follow the
    profile exactly (largest-remainder apportionment), so empirical
    frequencies converge as fast as possible.
    """
    c = profile.num_classes
    if n < 10 * c:
        raise ValueError(f"need at least {10 * c} records for {c} classes")
    if c > len(CLASS_KEYWORDS):
        raise ValueError("not enough keyword pools for this profile")
    counts = apportion(n, profile.proportions)
    labels = np.repeat(np.arange(c), counts)

    lengths = rng.integers(3, 13, size=n)
    total = int(lengths.sum())
    base_lang = rng.integers(0, 2, size=n)
    switch = rng.random(total) < mix_rate
    use_filler = rng.random(total) < _FILLER_RATE
    pick = rng.integers(0, 1 << 30, size=total)
    noisy = rng.random(total) < noise_rate
    noise_op = rng.integers(0, 3, size=total)
    noise_pos = rng.integers(0, 1 << 30, size=total)

    records = []
    cursor = 0
    for r in range(n):
        label = int(labels[r])
        pools = CLASS_KEYWORDS[label]
        tokens = []
        for j in range(cursor, cursor + int(lengths[r])):
            lang = (int(base_lang[r]) + int(switch[j])) % 2
            pool = FILLER_WORDS[lang] if use_filler[j] else pools[lang]
            tok = pool[pick[j] % len(pool)]
            if noisy[j]:
                tok = _perturb(tok, int(noise_op[j]), int(noise_pos[j]))
            tokens.append(tok)
        cursor += int(lengths[r])
        records.append(LabeledText(" ".join(tokens), label))

    order = rng.permutation(n)
    return [records[i] for i in order]
