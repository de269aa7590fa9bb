import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from biirra.data import (
    CLS_ID, PAD_ID, DatasetFormatError, SyntheticSpec, Vocab, collate, detokenize,
    generate_synthetic_dataset, read_dataset, render_image, slot_regions, tokenize, write_dataset,
)


def _decode(tokens, vocab):
    out = {}
    for w in detokenize(tokens, vocab):
        try:
            s, v = vocab.parse_attribute(w)
        except KeyError:
            continue
        out[s] = v
    return [out[s] for s in range(vocab.n_slots)]


def test_noiseless_texts_decode_to_attributes(small_dataset):
    ds = small_dataset
    for t in ds.train + ds.test:
        attrs = list(ds.attributes[t.identity])
        assert _decode(t.source_tokens, ds.vocab) == attrs
        assert _decode(t.target_tokens, ds.vocab) == attrs


def test_target_is_reversed_bijection(small_dataset):
    vocab = small_dataset.vocab
    t = small_dataset.train[0]
    src = detokenize(t.source_tokens, vocab)
    tgt = detokenize(t.target_tokens, vocab)
    assert tgt == [vocab.translate_word(w) for w in reversed(src)]
    lex = vocab.lexicon()
    assert len(set(lex.values())) == len(lex)


def test_image_locality():
    spec = SyntheticSpec(n_slots=4, n_values=3, grid=(4, 4), noise_visual=0.0)
    rng = np.random.default_rng(0)
    patterns = rng.normal(size=(4, 3, spec.feature_dim))
    a = render_image(np.array([0, 1, 2, 0]), patterns, spec, rng).features
    b = render_image(np.array([0, 2, 2, 0]), patterns, spec, rng).features
    changed = np.flatnonzero(np.any(a != b, axis=1))
    assert list(changed) == list(slot_regions(16, 4)[1])


def test_textual_noise_flips_only_target():
    ds = generate_synthetic_dataset(SyntheticSpec(n_identities=10, test_identities=2, noise_text=0.5,
                                                  seed=1))
    flipped = 0
    for t in ds.train:
        attrs = list(ds.attributes[t.identity])
        assert _decode(t.source_tokens, ds.vocab) == attrs
        flipped += sum(a != b for a, b in zip(_decode(t.target_tokens, ds.vocab), attrs))
    assert flipped > 0


def test_same_seed_is_byte_identical(tmp_path):
    paths = []
    for k in range(2):
        ds = generate_synthetic_dataset(SyntheticSpec(n_identities=6, test_identities=2, seed=9))
        p = tmp_path / f"d{k}.jsonl"
        write_dataset(p, ds.train + ds.test)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_identity_disjoint_split(desk_dataset):
    train_ids = {t.identity for t in desk_dataset.train}
    test_ids = {t.identity for t in desk_dataset.test}
    assert train_ids.isdisjoint(test_ids)
    assert len(train_ids) == 16
    rows = {tuple(r) for r in desk_dataset.attributes}
    assert len(rows) == len(desk_dataset.attributes)


def test_every_value_seen_in_training(desk_dataset):
    ds = desk_dataset
    train_attrs = ds.attributes[sorted({t.identity for t in ds.train})]
    for s in range(ds.spec.n_slots):
        assert set(train_attrs[:, s]) == set(range(ds.spec.n_values))


def test_nearest_neighbour_separability(desk_dataset):
    ds = desk_dataset
    seen, feats, ids = set(), [], []
    for t in ds.test:
        if t.image_id not in seen:
            seen.add(t.image_id)
            feats.append(t.image.features.ravel())
            ids.append(t.identity)
    x = np.array(feats)
    d = ((x[:, None] - x[None]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    ids = np.array(ids)
    assert np.all(ids[d.argmin(1)] == ids)


def test_generator_errors():
    with pytest.raises(ValueError):
        generate_synthetic_dataset(SyntheticSpec(n_identities=20, test_identities=4, n_slots=2,
                                                 n_values=2))
    with pytest.raises(ValueError):
        generate_synthetic_dataset(SyntheticSpec(n_identities=4, test_identities=4))
    with pytest.raises(ValueError):
        generate_synthetic_dataset(SyntheticSpec(n_slots=8, max_len=10))


def test_tokenize_edges():
    vocab = Vocab(2, 2)
    w = vocab.attribute_word(0, 1, "source")
    assert list(tokenize([], "source", vocab, 3)) == [CLS_ID, PAD_ID, PAD_ID]
    assert len(tokenize([w, w], "source", vocab, 3)) == 3
    with pytest.raises(ValueError):
        tokenize([w, w, w], "source", vocab, 3)
    with pytest.raises(KeyError):
        tokenize(["nonsense"], "source", vocab, 4)
    with pytest.raises(KeyError):
        tokenize([w], "target", vocab, 4)


@given(st.integers(2, 40), st.integers(2, 9), st.integers(0, 10_000))
def test_collate_covers_epoch(n, batch_size, seed):
    ids = [i % 3 if n > 2 else i for i in range(n)]

    class T:
        def __init__(self, i, ident):
            self.identity, self.image_id = ident, i
            self.image = type("G", (), {"features": np.zeros((1, 1))})()
            self.source_tokens = self.target_tokens = np.zeros(2, dtype=np.int64)

    trips = [T(i, ident) for i, ident in enumerate(ids)]
    batches = collate(trips, batch_size, np.random.default_rng(seed))
    covered = sorted(int(i) for b in batches for i in b.image_ids)
    assert covered == list(range(n))
    for b in batches:
        assert len(b) >= 2 and len(set(b.identities.tolist())) > 1


def test_collate_errors(small_dataset, rng):
    with pytest.raises(ValueError):
        collate(small_dataset.train, 1, rng)
    one = [t for t in small_dataset.train if t.identity == 0]
    with pytest.raises(ValueError):
        collate(one, 2, rng)


def test_jsonl_round_trip(tmp_path):
    ds = generate_synthetic_dataset(SyntheticSpec(n_identities=15, test_identities=3,
                                                  images_per_identity=4, texts_per_image=2, seed=5))
    trips = (ds.train + ds.test)[:100]
    assert len(trips) == 100
    p = tmp_path / "t.jsonl"
    write_dataset(p, trips)
    assert read_dataset(p) == trips


def test_corrupted_line_reports_number(tmp_path, small_dataset):
    p = tmp_path / "t.jsonl"
    write_dataset(p, small_dataset.train[:4])
    lines = p.read_text().splitlines()
    doc = json.loads(lines[2])
    del doc["source_tokens"]
    lines[2] = json.dumps(doc)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        read_dataset(p)
    lines[2] = "{not json"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        read_dataset(p)
