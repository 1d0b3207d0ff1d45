"""Lexicon-generated synthetic restaurant-review fixtures.

Each sentence mentions one or two aspects, each followed by an opinion
phrase from a polarity-typed lexicon. For a target aspect, the sentiment
label is the polarity of the opinion phrase nearest to it, and the tag
sequence marks exactly that phrase. Word vectors are random but fixed per
token, so both tasks are learnable from the lexicon alone.
"""

from dataclasses import dataclass

import numpy as np

from .data import AspectSpan, AlscInstance, AoweInstance, TAG_INDEX, SENTIMENT_LABELS

ASPECTS = ["pasta", "waiters", "pizza", "service", "decor", "wine",
           "dessert", "staff", "menu", "ambience"]
OPINIONS = {
    "positive": [["delicious"], ["friendly"], ["fantastic"], ["great"],
                 ["amazing"], ["out", "of", "this", "world"], ["superb"]],
    "neutral": [["average"], ["ordinary"], ["acceptable"], ["nothing", "special"],
                ["fine"]],
    "negative": [["awful"], ["rude"], ["terrible"], ["bland"], ["unfriendly"],
                 ["disappointing"], ["overpriced"]],
}
FILLERS = ["the", "is", "but", "and", "really", "quite", ".", "very"]


@dataclass(frozen=True)
class SyntheticExample:
    tokens: tuple
    aspect: AspectSpan
    label: int
    tags: tuple


def _clause(rng, aspect, opinion, out_tokens, tag_positions):
    out_tokens.append("the")
    aspect_start = len(out_tokens)
    out_tokens.append(aspect)
    aspect_span = AspectSpan(aspect_start, aspect_start + 1)
    out_tokens.append("is")
    if rng.random() < 0.4:
        out_tokens.append(rng.choice(["really", "quite", "very"]))
    opinion_start = len(out_tokens)
    out_tokens.extend(opinion)
    tag_positions.append((opinion_start, opinion_start + len(opinion)))
    return aspect_span


def generate_examples(n, rng):
    """n fully annotated (sentence, aspect) examples."""
    examples = []
    while len(examples) < n:
        tokens, spans = [], []
        polarities = []
        n_clauses = 2 if rng.random() < 0.5 else 1
        aspects = rng.choice(len(ASPECTS), size=n_clauses, replace=False)
        aspect_spans = []
        for ci in range(n_clauses):
            if ci:
                tokens.append("but")
            polarity = SENTIMENT_LABELS[rng.integers(len(SENTIMENT_LABELS))]
            opinion = OPINIONS[polarity][rng.integers(len(OPINIONS[polarity]))]
            aspect_spans.append(_clause(rng, ASPECTS[aspects[ci]], opinion,
                                        tokens, spans))
            polarities.append(polarity)
        tokens.append(".")
        target = int(rng.integers(n_clauses))
        start, end = spans[target]
        tags = [TAG_INDEX["O"]] * len(tokens)
        tags[start] = TAG_INDEX["B"]
        for i in range(start + 1, end):
            tags[i] = TAG_INDEX["I"]
        examples.append(SyntheticExample(tuple(tokens), aspect_spans[target],
                                         SENTIMENT_LABELS.index(polarities[target]),
                                         tuple(tags)))
    return examples


def to_alsc(examples):
    return [AlscInstance(e.tokens, e.aspect, e.label) for e in examples]


def to_aowe(examples):
    return [AoweInstance(e.tokens, e.aspect, e.tags) for e in examples]


def lexicon_tokens():
    tokens = set(ASPECTS) | set(FILLERS)
    for phrases in OPINIONS.values():
        for phrase in phrases:
            tokens.update(phrase)
    return sorted(tokens)


def write_embedding_file(path, dim, rng, tokens=None):
    """Write a plain-text embedding file with one random vector per token."""
    tokens = lexicon_tokens() if tokens is None else tokens
    with open(path, "w", encoding="utf-8") as fh:
        for token in tokens:
            vec = rng.uniform(-0.5, 0.5, size=dim)
            fh.write(token + " " + " ".join("%.6f" % v for v in vec) + "\n")


def write_jsonl(path, instances):
    import json
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_record()) + "\n")
