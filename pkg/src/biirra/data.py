"""Synthetic bilingual person-retrieval data.

Each identity is a vector of attribute values (one per slot). Images are patch
grids in which a fixed band of patches carries a feature pattern for each
slot's value. Source-language captions list the attribute words in slot order
with optional filler words; the target language maps every word through a
fixed bijection and reverses the word order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoders import CLS_ID, MASK_ID, PAD_ID

SLOT_NAMES = ("hat", "hair", "shirt", "bag", "pants", "shoes", "belt", "coat")
VALUE_NAMES = ("black", "white", "red", "blue", "green", "yellow", "gray", "brown",
               "pink", "purple", "orange", "beige")
TARGET_SLOT = ("mo", "ka", "tin", "ru", "pe", "zo", "bel", "ko")
TARGET_VALUE = ("lu", "ne", "sa", "vi", "do", "ki", "fa", "go", "mi", "pu", "ra", "be")
SOURCE_FILLERS = ("a", "the", "with", "and")
TARGET_FILLERS = ("el", "na", "kon", "i")
LANGUAGES = ("source", "target")


class DatasetFormatError(ValueError):
    pass


def _name(names, i, prefix):
    return names[i] if i < len(names) else f"{prefix}{i}"


@dataclass
class Vocab:
    n_slots: int
    n_values: int
    words: list = field(init=False)
    language_of: dict = field(init=False)

    def __post_init__(self):
        self.words = ["[PAD]", "[CLS]", "[MASK]"]
        self.language_of = {}
        for lang in LANGUAGES:
            for s in range(self.n_slots):
                for v in range(self.n_values):
                    self._add(self.attribute_word(s, v, lang), lang)
            for w in (SOURCE_FILLERS if lang == "source" else TARGET_FILLERS):
                self._add(w, lang)
        self.index = {w: i for i, w in enumerate(self.words)}

    def _add(self, word, lang):
        self.words.append(word)
        self.language_of[word] = lang

    def __len__(self):
        return len(self.words)

    def attribute_word(self, slot, value, language):
        if language == "source":
            return f"{_name(VALUE_NAMES, value, 'v')}-{_name(SLOT_NAMES, slot, 's')}"
        return f"{_name(TARGET_SLOT, slot, 'z')}{_name(TARGET_VALUE, value, 'q')}"

    def translate_word(self, word):
        """The bijection from source words to target words."""
        if word in SOURCE_FILLERS:
            return TARGET_FILLERS[SOURCE_FILLERS.index(word)]
        slot, value = self.parse_attribute(word)
        return self.attribute_word(slot, value, "target")

    def parse_attribute(self, word):
        for lang in LANGUAGES:
            for s in range(self.n_slots):
                for v in range(self.n_values):
                    if self.attribute_word(s, v, lang) == word:
                        return s, v
        raise KeyError(word)

    def lexicon(self):
        """Source word -> target word for every non-reserved source word."""
        return {w: self.translate_word(w) for w in self.words[3:] if self.language_of[w] == "source"}

    def to_dict(self):
        return {"n_slots": self.n_slots, "n_values": self.n_values}


def tokenize(words, language, vocab, max_len):
    """CLS + word ids, PAD-filled to ``max_len``; OOV or overflow raises."""
    if len(words) + 1 > max_len:
        raise ValueError(f"text of {len(words)} words does not fit L={max_len} with CLS")
    ids = [CLS_ID]
    for w in words:
        if vocab.language_of.get(w) != language:
            raise KeyError(f"word {w!r} is not in the {language} vocabulary")
        ids.append(vocab.index[w])
    ids.extend([PAD_ID] * (max_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def detokenize(ids, vocab):
    return [vocab.words[i] for i in ids if i not in (PAD_ID, CLS_ID, MASK_ID)]


@dataclass
class PatchGrid:
    rows: int
    cols: int
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.rows * self.cols:
            raise ValueError("patch features must be (rows*cols, f)")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("patch features must be finite")


@dataclass
class Triplet:
    image: PatchGrid
    source_tokens: np.ndarray
    target_tokens: np.ndarray
    identity: int
    image_id: int = -1

    def __eq__(self, other):
        return (isinstance(other, Triplet) and self.identity == other.identity
                and self.image_id == other.image_id
                and self.image.rows == other.image.rows and self.image.cols == other.image.cols
                and np.array_equal(self.image.features, other.image.features)
                and np.array_equal(self.source_tokens, other.source_tokens)
                and np.array_equal(self.target_tokens, other.target_tokens))


@dataclass
class SyntheticSpec:
    n_identities: int = 24
    test_identities: int = 8
    images_per_identity: int = 4
    texts_per_image: int = 2
    n_slots: int = 4
    n_values: int = 3
    grid: tuple = (8, 8)
    feature_dim: int = 8
    max_len: int = 16
    noise_text: float = 0.0
    noise_visual: float = 0.1
    filler_prob: float = 0.3
    seed: int = 0


@dataclass
class SyntheticDataset:
    train: list
    test: list
    vocab: Vocab
    attributes: np.ndarray
    patterns: np.ndarray
    spec: SyntheticSpec


def slot_regions(n_patches, n_slots):
    """Contiguous raster bands of patches, one per attribute slot."""
    return np.array_split(np.arange(n_patches), n_slots)


def _unique_rows(a):
    return len({tuple(r) for r in a}) == len(a)


def _draw_attributes(spec, rng):
    n_test = spec.test_identities
    n_train = spec.n_identities - n_test
    for _ in range(1000):
        # every value of every slot shows up in training when n_train >= n_values
        train = np.stack([rng.permutation(np.resize(np.arange(spec.n_values), n_train))
                          for _ in range(spec.n_slots)], axis=1)
        if _unique_rows(train):
            break
    else:
        raise ValueError("could not draw distinct training identities")
    seen = {tuple(r) for r in train}
    test = []
    while len(test) < n_test:
        row = tuple(int(v) for v in rng.integers(0, spec.n_values, spec.n_slots))
        if row not in seen:
            seen.add(row)
            test.append(row)
    test = np.asarray(test, dtype=np.int64).reshape(n_test, spec.n_slots)
    return np.concatenate([train, test]).astype(np.int64)


def render_image(attrs, patterns, spec, rng):
    rows, cols = spec.grid
    feats = np.zeros((rows * cols, spec.feature_dim))
    for s, band in enumerate(slot_regions(rows * cols, spec.n_slots)):
        feats[band] = patterns[s, attrs[s]]
    if spec.noise_visual > 0:
        feats = feats + spec.noise_visual * rng.normal(size=feats.shape)
    return PatchGrid(rows, cols, feats)


def caption_words(attrs, vocab, filler_prob, rng):
    words = []
    for s, v in enumerate(attrs):
        if rng.random() < filler_prob:
            words.append(SOURCE_FILLERS[int(rng.integers(len(SOURCE_FILLERS)))])
        words.append(vocab.attribute_word(s, int(v), "source"))
    return words


def translate_words(words, vocab, noise, rng):
    """Map through the bijection, reverse, and flip attribute values with prob ``noise``."""
    out = []
    for w in reversed(words):
        t = vocab.translate_word(w)
        if noise > 0 and w not in SOURCE_FILLERS and rng.random() < noise:
            s, v = vocab.parse_attribute(w)
            wrong = (v + 1 + int(rng.integers(vocab.n_values - 1))) % vocab.n_values
            t = vocab.attribute_word(s, wrong, "target")
        out.append(t)
    return out


def generate_synthetic_dataset(spec: SyntheticSpec) -> SyntheticDataset:
    if spec.n_identities < 2:
        raise ValueError("need at least two identities")
    if not 1 <= spec.test_identities < spec.n_identities:
        raise ValueError("test_identities must leave at least one training identity")
    if spec.n_values < 2 or spec.n_values ** spec.n_slots < spec.n_identities:
        raise ValueError("attribute vocabulary too small for the requested identities")
    if 2 * spec.n_slots + 1 > spec.max_len:
        raise ValueError("max_len cannot hold every attribute with fillers")
    rng = np.random.default_rng(spec.seed)
    vocab = Vocab(spec.n_slots, spec.n_values)
    patterns = rng.normal(size=(spec.n_slots, spec.n_values, spec.feature_dim))
    patterns /= np.linalg.norm(patterns, axis=-1, keepdims=True)
    attributes = _draw_attributes(spec, rng)
    n_train = spec.n_identities - spec.test_identities

    train, test = [], []
    image_id = 0
    for ident, attrs in enumerate(attributes):
        for _ in range(spec.images_per_identity):
            image = render_image(attrs, patterns, spec, rng)
            for _ in range(spec.texts_per_image):
                src = caption_words(attrs, vocab, spec.filler_prob, rng)
                tgt = translate_words(src, vocab, spec.noise_text, rng)
                trip = Triplet(image,
                               tokenize(src, "source", vocab, spec.max_len),
                               tokenize(tgt, "target", vocab, spec.max_len),
                               ident, image_id)
                (train if ident < n_train else test).append(trip)
            image_id += 1
    return SyntheticDataset(train, test, vocab, attributes, patterns, spec)


# -- batching --------------------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray
    source_ids: np.ndarray
    target_ids: np.ndarray
    identities: np.ndarray
    image_ids: np.ndarray

    def __len__(self):
        return len(self.identities)


def stack_triplets(triplets):
    return Batch(
        np.stack([t.image.features for t in triplets]),
        np.stack([t.source_tokens for t in triplets]),
        np.stack([t.target_tokens for t in triplets]),
        np.asarray([t.identity for t in triplets], dtype=np.int64),
        np.asarray([t.image_id for t in triplets], dtype=np.int64),
    )


def _epoch_order(identities, batch_size, rng):
    n = len(identities)
    order = rng.permutation(n)
    chunks = [list(order[i:i + batch_size]) for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2].extend(chunks.pop())
    # repair single-identity chunks by swapping with another chunk
    for ci, chunk in enumerate(chunks):
        if len({identities[i] for i in chunk}) > 1:
            continue
        mine = identities[chunk[0]]
        fixed = False
        for cj, other in enumerate(chunks):
            if cj == ci:
                continue
            for k, j in enumerate(other):
                if identities[j] == mine:
                    continue
                rest = [identities[x] for x in other if x != j] + [mine]
                if len(set(rest)) > 1:
                    other[k], chunk[0] = chunk[0], j
                    fixed = True
                    break
            if fixed:
                break
    return chunks


def collate(triplets, batch_size, rng):
    """One epoch of identity-aware batches covering every triplet exactly once."""
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    ids = [t.identity for t in triplets]
    if len(set(ids)) < 2:
        raise ValueError("dataset needs at least two identities")
    return [stack_triplets([triplets[i] for i in chunk])
            for chunk in _epoch_order(ids, batch_size, rng)]


# -- JSONL i/o ------------------------------------------------------------------

def triplet_to_dict(t):
    return {
        "identity": int(t.identity),
        "image_id": int(t.image_id),
        "image": {"rows": t.image.rows, "cols": t.image.cols, "features": t.image.features.tolist()},
        "source_tokens": [int(i) for i in t.source_tokens],
        "target_tokens": [int(i) for i in t.target_tokens],
    }


def triplet_from_dict(doc):
    img = doc["image"]
    return Triplet(
        PatchGrid(int(img["rows"]), int(img["cols"]), np.asarray(img["features"], dtype=np.float64)),
        np.asarray(doc["source_tokens"], dtype=np.int64),
        np.asarray(doc["target_tokens"], dtype=np.int64),
        int(doc["identity"]),
        int(doc.get("image_id", -1)),
    )


def write_dataset(path, triplets):
    with open(path, "w") as fh:
        for t in triplets:
            fh.write(json.dumps(triplet_to_dict(t)) + "\n")


def read_dataset(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(triplet_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    return out
