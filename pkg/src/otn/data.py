"""Dataset loading, vocabulary building, pretrained embeddings, and
aspect-relative position indices.

Datasets are JSON lines, one record per line:
  sentiment classification: {"tokens": [...], "aspect": [start, end],
                             "label": "positive"|"neutral"|"negative"}
  opinion extraction:       {"tokens": [...], "aspect": [start, end],
                             "tags": ["O","B","I", ...]}

Embeddings are plain text, `token v1 ... v300` per line.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

log = logging.getLogger(__name__)

PAD = 0
UNK = 1

SENTIMENT_LABELS = ("positive", "neutral", "negative")
TAG_NAMES = ("O", "B", "I")
TAG_INDEX = {name: i for i, name in enumerate(TAG_NAMES)}


class DatasetError(ValueError):
    """A dataset file is malformed or violates an instance invariant."""


@dataclass(frozen=True)
class AspectSpan:
    """Token span of the aspect: [start, end), 0-based."""
    start: int
    end: int

    def validate(self, n_tokens):
        if not (0 <= self.start < self.end <= n_tokens):
            raise DatasetError(
                "aspect span [%d, %d) invalid for %d tokens"
                % (self.start, self.end, n_tokens))


@dataclass(frozen=True)
class AlscInstance:
    tokens: tuple
    aspect: AspectSpan
    label: int  # index into SENTIMENT_LABELS

    def to_record(self):
        return {"tokens": list(self.tokens),
                "aspect": [self.aspect.start, self.aspect.end],
                "label": SENTIMENT_LABELS[self.label]}


@dataclass(frozen=True)
class AoweInstance:
    tokens: tuple
    aspect: AspectSpan
    tags: tuple  # per-token indices into TAG_NAMES

    def to_record(self):
        return {"tokens": list(self.tokens),
                "aspect": [self.aspect.start, self.aspect.end],
                "tags": [TAG_NAMES[t] for t in self.tags]}


def _parse_common(record, lineno):
    tokens = record.get("tokens")
    if not isinstance(tokens, list) or not tokens or \
            not all(isinstance(t, str) for t in tokens):
        raise DatasetError("line %d: 'tokens' must be a non-empty string list" % lineno)
    aspect = record.get("aspect")
    if not (isinstance(aspect, list) and len(aspect) == 2
            and all(isinstance(v, int) for v in aspect)):
        raise DatasetError("line %d: 'aspect' must be [start, end]" % lineno)
    span = AspectSpan(aspect[0], aspect[1])
    try:
        span.validate(len(tokens))
    except DatasetError as exc:
        raise DatasetError("line %d: %s" % (lineno, exc)) from None
    return tuple(tokens), span


def _iter_records(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError("line %d: malformed JSON (%s)" % (lineno, exc)) from None
            yield lineno, record


def load_alsc_dataset(path):
    """Load sentiment-classification instances, preserving file order."""
    instances = []
    for lineno, record in _iter_records(path):
        tokens, span = _parse_common(record, lineno)
        label = record.get("label")
        if label not in SENTIMENT_LABELS:
            raise DatasetError("line %d: label %r not in %s"
                               % (lineno, label, list(SENTIMENT_LABELS)))
        instances.append(AlscInstance(tokens, span, SENTIMENT_LABELS.index(label)))
    return instances


def load_aowe_dataset(path):
    """Load opinion-extraction instances, preserving file order.

    An I tag with no preceding B or I is accepted with a warning; the
    evaluation's lenient decoder handles it.
    """
    instances = []
    for lineno, record in _iter_records(path):
        tokens, span = _parse_common(record, lineno)
        tags = record.get("tags")
        if not isinstance(tags, list) or len(tags) != len(tokens):
            raise DatasetError("line %d: tag sequence length %s != %d tokens"
                               % (lineno, "missing" if tags is None else len(tags),
                                  len(tokens)))
        try:
            tag_ids = tuple(TAG_INDEX[t] for t in tags)
        except KeyError as exc:
            raise DatasetError("line %d: unknown tag %s" % (lineno, exc)) from None
        prev = TAG_INDEX["O"]
        for i, t in enumerate(tag_ids):
            if t == TAG_INDEX["I"] and prev == TAG_INDEX["O"]:
                log.warning("%s line %d: I tag at position %d has no open span",
                            path, lineno, i)
            prev = t
        instances.append(AoweInstance(tokens, span, tag_ids))
    return instances


class Vocabulary:
    """Token-to-index map with reserved entries: 0 = padding, 1 = unknown."""

    def __init__(self, tokens=()):
        self._index = {"<pad>": PAD, "<unk>": UNK}
        self._tokens = ["<pad>", "<unk>"]
        for token in tokens:
            self.add(token)

    def add(self, token):
        if token not in self._index:
            self._index[token] = len(self._tokens)
            self._tokens.append(token)
        return self._index[token]

    def index(self, token):
        return self._index.get(token, UNK)

    def token(self, index):
        return self._tokens[index]

    def encode(self, tokens):
        return np.array([self.index(t) for t in tokens], dtype=np.intp)

    @property
    def tokens(self):
        return list(self._tokens)

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._index


def build_vocab(*datasets):
    """Union vocabulary over the datasets, indices by first occurrence."""
    if not datasets:
        raise DatasetError("build_vocab needs at least one dataset")
    vocab = Vocabulary()
    for dataset in datasets:
        for instance in dataset:
            for token in instance.tokens:
                vocab.add(token)
    return vocab


class EmbeddingTable:
    """Frozen pretrained word matrix plus a trainable position matrix.

    Position row p holds the embedding for distance p to the aspect span;
    distances at or beyond max_position clamp to the last row.
    """

    def __init__(self, word, position, max_position):
        self.word = word            # Tensor, |V| x word_dim, frozen
        self.position = position    # Tensor, max_position x pos_dim, trainable
        self.max_position = max_position

    @property
    def word_dim(self):
        return self.word.shape[1]

    @property
    def pos_dim(self):
        return self.position.shape[1]


def read_embedding_file(path, dim=None):
    """Parse a `token v1 ... vD` text file into {token: vector}."""
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise DatasetError(
                    "%s line %d: expected %d values, found %d"
                    % (path, lineno, dim, len(values)))
            try:
                vectors[token] = np.array(values, dtype=np.float64)
            except ValueError:
                raise DatasetError("%s line %d: non-numeric value" % (path, lineno)) from None
    return vectors


def load_pretrained_embeddings(path, vocab, rng, pos_dim=100, max_position=128,
                               word_dim=None):
    """Build the embedding table for a vocabulary from a pretrained file.

    Known tokens (matched as-is, then lowercased) get the file vectors
    bit-exactly; the padding row is zero; everything else, including the
    unknown token, is initialized U(-0.01, 0.01). The word matrix is frozen;
    the position matrix is trainable and initialized U(-0.01, 0.01).
    """
    pretrained = read_embedding_file(path, dim=word_dim)
    if not pretrained:
        raise DatasetError("embedding file %s contains no vectors" % path)
    dim = len(next(iter(pretrained.values())))
    word = rng.uniform(-0.01, 0.01, size=(len(vocab), dim))
    word[PAD] = 0.0
    hits = 0
    for index, token in enumerate(vocab.tokens):
        if index == PAD:
            continue
        vec = pretrained.get(token)
        if vec is None:
            vec = pretrained.get(token.lower())
        if vec is not None:
            word[index] = vec
            hits += 1
    total = len(vocab) - 2
    if total > 0:
        log.info("embedding coverage: %d/%d tokens from file (%.1f%% OOV)",
                 hits, total, 100.0 * (total - hits) / total)
    position = rng.uniform(-0.01, 0.01, size=(max_position, pos_dim))
    return EmbeddingTable(Tensor(word, requires_grad=False),
                          Tensor(position, requires_grad=True),
                          max_position)


def position_distances(n, aspect, max_position=None):
    """Distance of each of n token positions to the nearest aspect token.

    Zero on the span itself, increasing by one per step away on each side.
    Distances at or beyond max_position clamp to max_position - 1.
    """
    aspect.validate(n)
    idx = np.arange(n)
    dist = np.zeros(n, dtype=np.intp)
    dist[idx < aspect.start] = aspect.start - idx[idx < aspect.start]
    dist[idx >= aspect.end] = idx[idx >= aspect.end] - (aspect.end - 1)
    if max_position is not None and dist.max(initial=0) >= max_position:
        log.warning("clamping position distance %d to table size %d",
                    int(dist.max()), max_position)
        dist = np.minimum(dist, max_position - 1)
    return dist


@dataclass
class Batch:
    """A shuffled mini-batch padded to its longest sentence."""
    instances: list
    token_ids: np.ndarray  # B x L, padded with PAD
    mask: np.ndarray       # B x L bool, True at real tokens


def batchify(instances, batch_size, rng, vocab=None):
    """Yield shuffled, padded batches; the final partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(instances))
    for lo in range(0, len(instances), batch_size):
        chunk = [instances[i] for i in order[lo:lo + batch_size]]
        length = max(len(inst.tokens) for inst in chunk)
        token_ids = np.full((len(chunk), length), PAD, dtype=np.intp)
        mask = np.zeros((len(chunk), length), dtype=bool)
        for row, inst in enumerate(chunk):
            n = len(inst.tokens)
            if vocab is not None:
                token_ids[row, :n] = vocab.encode(inst.tokens)
            mask[row, :n] = True
        yield Batch(chunk, token_ids, mask)
