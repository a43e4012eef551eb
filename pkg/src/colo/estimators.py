"""Scikit-learn style wrappers around the training and selection pipelines.

These are thin adapters: ``fit`` builds a vocabulary and runs the training
loop from :mod:`colo.training` (or :mod:`colo.abstractive`), ``predict``
returns one summary string per document.  All heavy lifting stays in the
underlying modules; the wrappers only translate between raw text and the
package's document types, so they stay compatible with ``get_params`` /
``set_params`` / ``clone``.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from .abstractive import (
    AbsTrainConfig,
    Seq2SeqConfig,
    Seq2SeqModel,
    select_abs,
    train_abs,
)
from .candidates import CandidateSpec
from .corpus import Dataset, Document, Vocabulary, tokenize
from .encoder import EncoderConfig, ExtractiveModel
from .errors import ColoError
from .inference import select_colo
from .metrics import DiscriminatorKind
from .training import TrainConfig, train


def _raw_pairs(X, y=None) -> list[tuple[list[str], str]]:
    refs = list(y) if y is not None else [""] * len(X)
    if y is not None and len(refs) != len(X):
        raise ColoError(f"X has {len(X)} docs but y has {len(refs)} summaries")
    pairs = []
    for i, item in enumerate(X):
        if isinstance(item, Document):
            pairs.append((list(item.raw_sentences), item.raw_summary or refs[i]))
            continue
        sents = (
            [p.strip() for p in item.split(".") if p.strip()]
            if isinstance(item, str)
            else [str(s) for s in item]
        )
        if not sents:
            raise ColoError(f"document {i} is empty")
        pairs.append((sents, str(refs[i])))
    return pairs


def _make_docs(pairs, vocab: Vocabulary) -> list[Document]:
    return [
        Document(
            id=f"doc-{i:05d}",
            sentences=[tokenize(s, vocab) for s in sents],
            reference=tokenize(summary, vocab),
            raw_sentences=sents,
            raw_summary=summary,
        )
        for i, (sents, summary) in enumerate(pairs)
    ]


def _build_dataset(pairs) -> Dataset:
    vocab = Vocabulary.build(
        [s for sents, _ in pairs for s in sents] + [r for _, r in pairs]
    )
    return Dataset(_make_docs(pairs, vocab), vocab)


class ColoExtractiveSummarizer(BaseEstimator):
    """Extractive summarizer selecting a sentence subset by anchor cosine.

    ``X`` is a sequence of documents (strings split on periods, lists of
    sentence strings, or prebuilt :class:`~colo.corpus.Document`), ``y``
    the reference summaries.  After ``fit`` the model selects, for each
    input document, the candidate subset whose mean sentence embedding is
    closest to the document embedding.
    """

    def __init__(self, nums=(2, 3), n_prime=6, d_model=64, n_layers=1,
                 n_heads=4, warmup_steps_bce=200, combined_steps=1900,
                 batch_size=4, margin=0.01, rank_loss_normalize=False,
                 lr_scale=0.08, lr_warmup=200, discriminator="rouge12mean",
                 seed=0):
        self.nums = nums
        self.n_prime = n_prime
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.warmup_steps_bce = warmup_steps_bce
        self.combined_steps = combined_steps
        self.batch_size = batch_size
        self.margin = margin
        self.rank_loss_normalize = rank_loss_normalize
        self.lr_scale = lr_scale
        self.lr_warmup = lr_warmup
        self.discriminator = discriminator
        self.seed = seed

    def fit(self, X, y):
        dataset = _build_dataset(_raw_pairs(X, y))
        cspec = CandidateSpec(nums=tuple(self.nums), n_prime=self.n_prime)
        enc = EncoderConfig(vocab_size=len(dataset.vocab), d_model=self.d_model,
                            n_layers=self.n_layers, n_heads=self.n_heads,
                            ffn_dim=2 * self.d_model)
        model = ExtractiveModel(enc, seed=self.seed)
        cfg = TrainConfig(
            margin=self.margin,
            warmup_steps_bce=self.warmup_steps_bce,
            combined_steps=self.combined_steps,
            batch_size=self.batch_size,
            seed=self.seed,
            kind=DiscriminatorKind(self.discriminator),
            rank_loss_normalize=self.rank_loss_normalize,
            candidate_spec=cspec,
            lr_warmup=self.lr_warmup,
            lr_scale=self.lr_scale,
        )
        result = train(model, dataset, cfg, sampling="online")
        self.model_ = model
        self.vocab_ = dataset.vocab
        self.spec_ = cspec
        self.reports_ = result.reports
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise ColoError("predict called before fit")
        out = []
        for doc in _make_docs(_raw_pairs(X), self.vocab_):
            pick = select_colo(self.model_, doc, self.spec_, self.vocab_)
            out.append(" . ".join(doc.raw_sentences[i] for i in pick.indices))
        return out


class ColoAbstractiveSummarizer(BaseEstimator):
    """Abstractive summarizer re-ranking its own diverse beam candidates."""

    def __init__(self, d_model=64, n_layers=1, dec_layers=1, n_heads=4,
                 max_decode_len=12, beam_size=8, num_groups=8,
                 diversity_penalty=1.0, warmup_steps_nll=300,
                 combined_steps=800, batch_size=4, margin=0.01,
                 lr_scale=0.08, lr_warmup=200, discriminator="rouge12mean",
                 seed=0):
        self.d_model = d_model
        self.n_layers = n_layers
        self.dec_layers = dec_layers
        self.n_heads = n_heads
        self.max_decode_len = max_decode_len
        self.beam_size = beam_size
        self.num_groups = num_groups
        self.diversity_penalty = diversity_penalty
        self.warmup_steps_nll = warmup_steps_nll
        self.combined_steps = combined_steps
        self.batch_size = batch_size
        self.margin = margin
        self.lr_scale = lr_scale
        self.lr_warmup = lr_warmup
        self.discriminator = discriminator
        self.seed = seed

    def fit(self, X, y):
        dataset = _build_dataset(_raw_pairs(X, y))
        enc = EncoderConfig(vocab_size=len(dataset.vocab), d_model=self.d_model,
                            n_layers=self.n_layers, n_heads=self.n_heads,
                            ffn_dim=2 * self.d_model)
        cfg = Seq2SeqConfig(encoder=enc, dec_layers=self.dec_layers,
                            dec_heads=self.n_heads,
                            max_decode_len=self.max_decode_len,
                            beam_size=self.beam_size,
                            num_groups=self.num_groups,
                            diversity_penalty=self.diversity_penalty)
        model = Seq2SeqModel(cfg, seed=self.seed)
        tcfg = AbsTrainConfig(
            margin=self.margin,
            warmup_steps_nll=self.warmup_steps_nll,
            combined_steps=self.combined_steps,
            batch_size=self.batch_size,
            seed=self.seed,
            kind=DiscriminatorKind(self.discriminator),
            lr_scale=self.lr_scale,
            lr_warmup=self.lr_warmup,
        )
        train_abs(model, dataset, tcfg)
        self.model_ = model
        self.vocab_ = dataset.vocab
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise ColoError("predict called before fit")
        out = []
        for doc in _make_docs(_raw_pairs(X), self.vocab_):
            cand = select_abs(self.model_, doc, self.vocab_, by="cosine")
            out.append(" ".join(self.vocab_.token(t) for t in cand.text_tokens()))
        return out
