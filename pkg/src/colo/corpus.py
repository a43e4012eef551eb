"""Dataset ingestion, synthetic corpus generation, and model input layout.

Synthetic documents are built so that a per-sentence classifier has a real
but imperfect signal: summary-worthy sentences are dense in document-topic
tokens, their positions are uniform (so a lead heuristic is weak), and most
documents carry a near-duplicate of one summary sentence.  The duplicate is
individually high-scoring yet redundant inside a candidate set, which is a
set-level property only a summary-level ranker can exploit.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field

from .errors import ColoError

PAD, UNK, DOC, CLS, SEP, BOS, EOS = range(7)

RESERVED_TOKENS = ("<pad>", "<unk>", "<doc>", "<cls>", "<sep>", "<bos>", "<eos>")

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")


class Vocabulary:
    """Bijective token/id mapping with fixed reserved ids 0..6."""

    def __init__(self, tokens: list[str]):
        self._id2tok = list(RESERVED_TOKENS) + list(tokens)
        self._tok2id = {t: i for i, t in enumerate(self._id2tok)}
        if len(self._tok2id) != len(self._id2tok):
            raise ColoError("vocabulary contains duplicate tokens")

    @classmethod
    def build(cls, texts) -> "Vocabulary":
        """Collect the sorted set of word tokens appearing in ``texts``."""
        seen: set[str] = set()
        for text in texts:
            seen.update(_TOKEN_RE.findall(text.lower()))
        seen.difference_update(RESERVED_TOKENS)
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self._id2tok)

    def __contains__(self, token: str) -> bool:
        return token in self._tok2id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._id2tok == other._id2tok

    def id(self, token: str) -> int:
        return self._tok2id.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._id2tok[idx]


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.id(t) for t in _TOKEN_RE.findall(text.lower())]


def detokenize(ids, vocab: Vocabulary) -> str:
    return " ".join(vocab.token(i) for i in ids)


@dataclass
class Document:
    id: str
    sentences: list[list[int]]
    reference: list[int]
    raw_sentences: list[str]
    raw_summary: str = ""

    def __post_init__(self):
        if not self.sentences:
            raise ColoError(f"document {self.id}: no sentences")
        if any(len(s) == 0 for s in self.sentences):
            raise ColoError(f"document {self.id}: empty sentence")


@dataclass
class Dataset:
    documents: list[Document]
    vocab: Vocabulary

    def __len__(self) -> int:
        return len(self.documents)

    def __post_init__(self):
        ids = [d.id for d in self.documents]
        if len(set(ids)) != len(ids):
            raise ColoError("dataset contains duplicate document ids")
        v = len(self.vocab)
        for d in self.documents:
            for s in d.sentences:
                if any(t >= v or t < 0 for t in s):
                    raise ColoError(f"document {d.id}: token id out of range")
            if any(t >= v or t < 0 for t in d.reference):
                raise ColoError(f"document {d.id}: reference token id out of range")


def load_jsonl(path, vocab: Vocabulary | None = None) -> Dataset:
    """Read one {"id","sentences","summary"} object per line.

    When no vocabulary is supplied one is built from the file so ids are
    stable for a given file content.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ColoError(f"malformed JSON at line {lineno}: {e.msg}") from e
            for key in ("id", "sentences", "summary"):
                if key not in obj:
                    raise ColoError(f"missing key {key} at line {lineno}")
            if not isinstance(obj["sentences"], list) or not all(
                isinstance(s, str) for s in obj["sentences"]
            ):
                raise ColoError(f"sentences must be a list of strings at line {lineno}")
            rows.append(obj)
    if vocab is None:
        texts = []
        for obj in rows:
            texts.extend(obj["sentences"])
            texts.append(obj["summary"])
        vocab = Vocabulary.build(texts)
    docs = [
        Document(
            id=str(obj["id"]),
            sentences=[tokenize(s, vocab) for s in obj["sentences"]],
            reference=tokenize(obj["summary"], vocab),
            raw_sentences=list(obj["sentences"]),
            raw_summary=obj["summary"],
        )
        for obj in rows
    ]
    return Dataset(docs, vocab)


def save_jsonl(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in dataset.documents:
            f.write(
                json.dumps(
                    {"id": d.id, "sentences": d.raw_sentences, "summary": d.raw_summary},
                    sort_keys=True,
                )
                + "\n"
            )


@dataclass
class SynthSpec:
    n_docs: int = 500
    vocab_size: int = 120
    sentences_range: tuple[int, int] = (9, 12)
    tokens_range: tuple[int, int] = (6, 10)
    summary_range: tuple[int, int] = (2, 2)
    topic_size: int = 12
    salient_fraction: float = 0.5
    topic_density: float = 0.9
    secondary_density: float = 0.9
    filler_density: float = 0.05
    redundancy_prob: float = 0.9
    variant_overlap: float = 0.85
    noise_rate: float = 0.1
    size_by_length: bool = False

    def validate(self) -> None:
        for name in ("sentences_range", "tokens_range", "summary_range"):
            lo, hi = getattr(self, name)
            if not (1 <= lo <= hi):
                raise ColoError(f"synth spec: invalid {name} ({lo}, {hi})")
        if self.n_docs < 1:
            raise ColoError("synth spec: n_docs must be >= 1")
        if self.summary_range[1] + 2 > self.sentences_range[0]:
            raise ColoError(
                "synth spec: need at least summary_max + 2 sentences per document"
            )
        if self.vocab_size < 2 * self.topic_size:
            raise ColoError("synth spec: vocab_size too small for topic_size")
        if self.topic_size < self.summary_range[1]:
            raise ColoError("synth spec: need at least one topic word per summary sentence")
        for name in (
            "salient_fraction",
            "topic_density",
            "secondary_density",
            "filler_density",
            "redundancy_prob",
            "variant_overlap",
            "noise_rate",
        ):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ColoError(f"synth spec: {name} must be in [0, 1]")


def _synth_sentence(rng, topic: list[str], other: list[str], density: float, n: int):
    return [
        rng.choice(topic) if rng.random() < density else rng.choice(other)
        for _ in range(n)
    ]


def synth_corpus(spec: SynthSpec, seed: int) -> Dataset:
    """Deterministic synthetic dataset with a nontrivial extractive oracle.

    Each document's topic splits into one slice per summary sentence, and
    each slice is voiced by a source sentence plus, usually, an
    interchangeable twin drawn from the same slice mixture.  The reference
    uses only the sources, so source and twin are indistinguishable one
    sentence at a time: a per-sentence scorer cannot avoid pairing two
    sentences from the same slice, while a summary-level ranker can prefer
    sets that cover every slice once.  Source positions are uniform, so a
    lead heuristic is weak.  With ``size_by_length`` the summary sentence
    count is a deterministic function of document length.
    """
    spec.validate()
    rng = random.Random(seed)
    words = [f"w{i}" for i in range(spec.vocab_size)]
    n_salient = max(spec.topic_size, int(spec.vocab_size * spec.salient_fraction))
    salient_pool = words[:n_salient]
    filler_pool = words[n_salient:] or words
    vocab = Vocabulary(sorted(words))
    s_lo, s_hi = spec.sentences_range
    mid_sents = (s_lo + s_hi) // 2

    documents = []
    for doc_idx in range(spec.n_docs):
        n_sents = rng.randint(*spec.sentences_range)
        if spec.size_by_length:
            n_summary = spec.summary_range[0] if n_sents <= mid_sents else spec.summary_range[1]
        else:
            n_summary = rng.randint(*spec.summary_range)
        topic = rng.sample(salient_pool, spec.topic_size)
        subtopics = [topic[j::n_summary] for j in range(n_summary)]
        source_pos = sorted(rng.sample(range(n_sents), n_summary))
        primary = rng.choice(source_pos)

        sents: list[list[str] | None] = [None] * n_sents
        for j, p in enumerate(source_pos):
            n_tok = rng.randint(*spec.tokens_range)
            density = spec.topic_density if p == primary else spec.secondary_density
            sents[p] = _synth_sentence(rng, subtopics[j], filler_pool, density, n_tok)

        # twins copy most of their source and resample the rest from the
        # source's own slice mixture, so the two are statistically
        # indistinguishable one sentence at a time
        for j, p in enumerate(source_pos):
            free = [i for i in range(n_sents) if sents[i] is None]
            if len(free) <= 1 or rng.random() >= spec.redundancy_prob:
                continue
            density = spec.topic_density if p == primary else spec.secondary_density
            twin = [
                t
                if rng.random() < spec.variant_overlap
                else (
                    rng.choice(subtopics[j])
                    if rng.random() < density
                    else rng.choice(filler_pool)
                )
                for t in sents[p]
            ]
            sents[rng.choice(free)] = twin

        for i in range(n_sents):
            if sents[i] is None:
                n_tok = rng.randint(*spec.tokens_range)
                sents[i] = _synth_sentence(
                    rng, topic, filler_pool, spec.filler_density, n_tok
                )

        ref_words = []
        for p in source_pos:
            for t in sents[p]:
                if rng.random() < spec.noise_rate:
                    ref_words.append(rng.choice(salient_pool))
                else:
                    ref_words.append(t)

        raw_sentences = [" ".join(s) for s in sents]
        raw_summary = " ".join(ref_words)
        documents.append(
            Document(
                id=f"synth-{doc_idx:05d}",
                sentences=[[vocab.id(t) for t in s] for s in sents],
                reference=[vocab.id(t) for t in ref_words],
                raw_sentences=raw_sentences,
                raw_summary=raw_summary,
            )
        )
    return Dataset(documents, vocab)


@dataclass
class ModelInput:
    token_ids: list[int]
    doc_pos: int
    cls_pos: list[int]
    sent_spans: list[tuple[int, int]]
    n_dropped: int = 0


def build_model_input(doc: Document, vocab: Vocabulary, max_len: int) -> ModelInput:
    """Lay out ``<doc> (<cls> sent <sep>)*`` truncated at sentence granularity."""
    ids = [DOC]
    cls_pos: list[int] = []
    spans: list[tuple[int, int]] = []
    kept = 0
    for sent in doc.sentences:
        needed = 2 + len(sent)
        if len(ids) + needed > max_len:
            break
        cls_pos.append(len(ids))
        ids.append(CLS)
        spans.append((len(ids), len(ids) + len(sent)))
        ids.extend(sent)
        ids.append(SEP)
        kept += 1
    if kept == 0:
        raise ColoError(
            f"document {doc.id} untruncatable: first sentence exceeds max_len={max_len}"
        )
    return ModelInput(
        token_ids=ids,
        doc_pos=0,
        cls_pos=cls_pos,
        sent_spans=spans,
        n_dropped=len(doc.sentences) - kept,
    )
