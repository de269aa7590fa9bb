"""Translator backends: a deterministic mock and a chat-completion HTTP client."""

from __future__ import annotations

import collections
import json
import os
import urllib.error
import urllib.request
import zlib
from pathlib import Path
from typing import Protocol

import numpy as np

from .prompts import render_rewrite_prompt, render_translation_prompt


class TranslatorBackend(Protocol):
    def translate(self, source_text: str, target_language: str) -> str: ...

    def rewrite(self, image_ref: str, source_text: str, target_language: str) -> str: ...

    def fit(self, clean_examples) -> object: ...


class BackendError(RuntimeError):
    pass


def write_manifest(directory, payload):
    path = Path(directory) / "finetune_manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


class MockTranslator:
    """Word-substitution translator over a fixed lexicon.

    ``translate`` maps each word through the lexicon, reverses the order and,
    with probability ``noise`` per word, swaps in a wrong target word. The
    draws are seeded by (seed, text), so the mock is a pure function of its
    inputs. ``fit`` learns word pairs from clean translations by majority
    vote; ``rewrite`` prefers those pairs and falls back to a fresh noisy
    translation for words it never saw.
    """

    def __init__(self, lexicon, seed=0, noise=0.0, manifest_dir=None, fail_on=()):
        self.lexicon = dict(lexicon)
        self.seed = int(seed)
        self.noise = float(noise)
        self.manifest_dir = manifest_dir
        self.fail_on = frozenset(fail_on)
        self.learned = {}
        self._targets = sorted(set(self.lexicon.values()))

    def _rng(self, salt, text):
        return np.random.default_rng([self.seed, salt, zlib.crc32(text.encode("utf-8"))])

    def _noisy(self, words, rng):
        out = []
        for w in reversed(words):
            t = self.lexicon.get(w, w)
            if self.noise > 0 and w in self.lexicon and rng.random() < self.noise:
                alts = [x for x in self._targets if x != t]
                t = alts[int(rng.integers(len(alts)))]
            out.append(t)
        return out

    def translate(self, source_text, target_language):
        if source_text in self.fail_on:
            raise BackendError(f"mock failure on {source_text!r}")
        return " ".join(self._noisy(source_text.split(), self._rng(0, source_text)))

    def rewrite(self, image_ref, source_text, target_language):
        if source_text in self.fail_on:
            raise BackendError(f"mock failure on {source_text!r}")
        words = source_text.split()
        fallback = self._noisy(words, self._rng(1, f"{image_ref}\x00{source_text}"))
        n = len(words)
        return " ".join(self.learned.get(words[n - 1 - i], fallback[i]) for i in range(n))

    def fit(self, clean_examples):
        votes = collections.defaultdict(collections.Counter)
        n = 0
        for source_text, target_text in clean_examples:
            src, tgt = source_text.split(), target_text.split()
            if len(src) != len(tgt):
                continue
            for s, t in zip(src, reversed(tgt)):
                votes[s][t] += 1
            n += 1
        # majority vote, ties to the lexicographically smallest word
        self.learned = {s: min(c, key=lambda w: (-c[w], w)) for s, c in votes.items()}
        if self.manifest_dir is not None:
            write_manifest(self.manifest_dir, {
                "job": "lora-finetune", "backend": "mock", "n_examples": n,
                "learned_pairs": len(self.learned),
            })
        return self


class HttpChatBackend:
    """Chat-completion client configured by LDAT_ENDPOINT, LDAT_API_KEY and LDAT_MODEL.

    ``fit`` does not train anything remotely; it writes a manifest describing
    the adapter fine-tuning job so it can be run elsewhere.
    """

    def __init__(self, endpoint, model, api_key=None, timeout=60.0, manifest_dir=None):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.manifest_dir = manifest_dir

    @classmethod
    def from_env(cls, environ=None, **kwargs):
        env = os.environ if environ is None else environ
        endpoint = env.get("LDAT_ENDPOINT")
        if not endpoint:
            raise BackendError("LDAT_ENDPOINT is not set")
        return cls(endpoint, env.get("LDAT_MODEL", "default"), env.get("LDAT_API_KEY"), **kwargs)

    def _complete(self, prompt):
        body = {"model": self.model, "temperature": 0,
                "messages": [{"role": "user", "content": prompt}]}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.endpoint, json.dumps(body).encode("utf-8"), headers)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                doc = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
            raise BackendError(f"request to {self.endpoint} failed: {exc}") from exc
        try:
            return doc["choices"][0]["message"]["content"].strip()
        except (KeyError, IndexError, TypeError, AttributeError) as exc:
            raise BackendError(f"unexpected response shape: {doc!r}") from exc

    def translate(self, source_text, target_language):
        return self._complete(render_translation_prompt(source_text, target_language))

    def rewrite(self, image_ref, source_text, target_language):
        return self._complete(render_rewrite_prompt(image_ref, source_text, target_language))

    def fit(self, clean_examples):
        examples = [{"source": s, "target": t} for s, t in clean_examples]
        if self.manifest_dir is not None:
            write_manifest(self.manifest_dir, {
                "job": "lora-finetune", "backend": "http", "model": self.model,
                "n_examples": len(examples), "examples": examples,
            })
        return self
