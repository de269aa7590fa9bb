"""Translate, score, split and rewrite a source-language corpus."""

from __future__ import annotations

import collections
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .scoring import default_threshold, noise_level, phi_histogram, split_by_threshold

HISTOGRAM_BINS = 20


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SourceRecord:
    image_id: str
    identity: int
    source_text: str

    def __post_init__(self):
        if not self.source_text:
            raise ValueError(f"record {self.image_id!r} has empty source text")


@dataclass
class ScoredTranslation:
    record: SourceRecord
    target_text: str
    phi: float
    verdict: str = ""


@dataclass
class OutputRecord:
    record: SourceRecord
    target_text: str
    phi: float
    provenance: str

    def to_json(self):
        return {
            "image_id": self.record.image_id,
            "identity": self.record.identity,
            "source_text": self.record.source_text,
            "target_text": self.target_text,
            "phi": self.phi,
            "provenance": self.provenance,
        }


@dataclass
class PipelineReport:
    theta: float | None
    n_clean: int
    n_noisy: int
    histogram: list
    failures: list
    fit_skipped: bool = False
    warnings: dict = field(default_factory=dict)

    def to_json(self):
        return {"theta": self.theta, "n_clean": self.n_clean, "n_noisy": self.n_noisy,
                "histogram": list(self.histogram), "failures": list(self.failures)}


def _apply(fn, items, workers):
    """Run ``fn`` on each item, keeping order; exceptions come back as values."""
    def guarded(item):
        try:
            return fn(item)
        except Exception as exc:  # backend failures quarantine the record
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(guarded, items))
    return [guarded(x) for x in items]


def run_ldat(corpus, backend, scorer, target_language, theta=None, workers=1):
    """Returns (output records in corpus order, PipelineReport).

    Records whose translation or rewrite raises are left out of the output and
    listed in ``report.failures``. Rewritten texts are not scored again.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus is empty")
    seen = set()
    for r in corpus:
        if r.image_id in seen:
            raise ValueError(f"duplicate image_id {r.image_id!r}")
        seen.add(r.image_id)

    failures = []
    translated = _apply(lambda r: backend.translate(r.source_text, target_language), corpus, workers)
    counter = collections.Counter()
    scored = []
    for rec, out in zip(corpus, translated):
        if isinstance(out, Exception):
            failures.append(rec.image_id)
            continue
        scored.append(ScoredTranslation(rec, out, noise_level(rec.source_text, out, scorer, counter)))

    phis = [s.phi for s in scored]
    if theta is None and phis:
        theta = default_threshold(phis)
    clean, noisy = split_by_threshold(scored, theta) if phis else ([], [])
    for s in clean:
        s.verdict = "clean"
    for s in noisy:
        s.verdict = "noisy"

    fit_skipped = not clean
    if not fit_skipped:
        backend.fit([(s.record.source_text, s.target_text) for s in clean])
    rewritten = _apply(lambda s: backend.rewrite(s.record.image_id, s.record.source_text,
                                                 target_language), noisy, workers)

    by_id = {s.record.image_id: OutputRecord(s.record, s.target_text, s.phi, "direct") for s in clean}
    for s, out in zip(noisy, rewritten):
        if isinstance(out, Exception):
            failures.append(s.record.image_id)
        else:
            by_id[s.record.image_id] = OutputRecord(s.record, out, s.phi, "rewritten")

    order = {r.image_id: i for i, r in enumerate(corpus)}
    failures.sort(key=order.__getitem__)
    output = [by_id[r.image_id] for r in corpus if r.image_id in by_id]
    report = PipelineReport(theta, len(clean), len(noisy), phi_histogram(phis, HISTOGRAM_BINS),
                            failures, fit_skipped, dict(counter))
    return output, report


# -- JSONL i/o ------------------------------------------------------------------

def read_corpus(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                out.append(SourceRecord(str(doc["image_id"]), int(doc["identity"]), doc["source_text"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"line {lineno}: {exc}") from exc
    return out


def write_corpus(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"image_id": r.image_id, "identity": r.identity,
                                 "source_text": r.source_text}, ensure_ascii=False) + "\n")


def dumps_output(records):
    return "".join(json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in records)


def write_output(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_output(records))


def write_report(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
        fh.write("\n")


# -- bridge to the synthetic triplets -----------------------------------------

def corpus_from_triplets(triplets, vocab):
    """One record per triplet; ids are ``img<image_id>#<k>`` with k counting captions of an image."""
    from ..data import detokenize

    seen = collections.Counter()
    out = []
    for t in triplets:
        k = seen[t.image_id]
        seen[t.image_id] += 1
        out.append(SourceRecord(f"img{t.image_id}#{k}", int(t.identity),
                                " ".join(detokenize(t.source_tokens, vocab))))
    return out


def retarget_triplets(triplets, records, vocab, max_len):
    """Replace each triplet's target tokens with the pipeline's text, matched by record order."""
    import dataclasses

    from ..data import tokenize

    if len(records) != len(triplets):
        raise ValueError("need one output record per triplet")
    return [dataclasses.replace(t, target_tokens=tokenize(r.target_text.split(), "target", vocab, max_len))
            for t, r in zip(triplets, records)]
