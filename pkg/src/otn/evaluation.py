"""Task metrics: sentiment accuracy and macro-F1, and exact-span
precision/recall/F1 over decoded BIO tags."""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .data import SENTIMENT_LABELS, TAG_INDEX

O, B, I = TAG_INDEX["O"], TAG_INDEX["B"], TAG_INDEX["I"]


@dataclass(frozen=True, order=True)
class Span:
    """Half-open token span [start, end)."""
    start: int
    end: int


@dataclass
class EvalReport:
    alsc: dict = field(default_factory=dict)
    aowe: dict = field(default_factory=dict)

    def to_json(self):
        return {"alsc": self.alsc, "aowe": self.aowe}

    def to_table(self):
        lines = []
        if self.alsc:
            lines.append("ALSC   acc %.4f   macro-F1 %.4f"
                         % (self.alsc["accuracy"], self.alsc["macro_f1"]))
            for name in SENTIMENT_LABELS:
                p, r, f = self.alsc["per_class"][name]
                lines.append("  %-9s P %.4f  R %.4f  F1 %.4f" % (name, p, r, f))
        if self.aowe:
            lines.append("AOWE   P %.4f   R %.4f   F1 %.4f   (tp %d / pred %d / gold %d)"
                         % (self.aowe["precision"], self.aowe["recall"],
                            self.aowe["f1"], self.aowe["tp"],
                            self.aowe["pred_count"], self.aowe["gold_count"]))
        return "\n".join(lines)


def decode_bio_spans(tags, strict=False):
    """Decode a B/I/O index sequence into a set of spans.

    Lenient mode (default) lets an I with no open span start one; strict mode
    drops such tokens. O always closes the open span.
    """
    spans = set()
    start = None
    for i, tag in enumerate(tags):
        if tag == B:
            if start is not None:
                spans.add(Span(start, i))
            start = i
        elif tag == I:
            if start is None and not strict:
                start = i
        else:
            if start is not None:
                spans.add(Span(start, i))
            start = None
    if start is not None:
        spans.add(Span(start, len(list(tags))))
    return spans


def encode_bio_tags(spans, n):
    """Inverse of decode_bio_spans for non-overlapping spans."""
    tags = [O] * n
    for span in sorted(spans):
        tags[span.start] = B
        for i in range(span.start + 1, span.end):
            tags[i] = I
    return tags


def span_prf(gold, pred):
    """Exact-span precision, recall and F1 over aligned per-instance span sets.

    A predicted span counts only if both its start and end equal a gold
    span's. With no predictions, precision is 1.0 when there is also no gold,
    else 0.0; F1 is 0 when P + R = 0.
    """
    if len(gold) != len(pred):
        raise ValueError("gold and pred lists differ in length: %d vs %d"
                         % (len(gold), len(pred)))
    tp = sum(len(set(g) & set(p)) for g, p in zip(gold, pred))
    n_pred = sum(len(p) for p in pred)
    n_gold = sum(len(g) for g in gold)
    if n_pred == 0:
        precision = 1.0 if n_gold == 0 else 0.0
    else:
        precision = tp / n_pred
    if n_gold == 0:
        recall = 1.0 if n_pred == 0 else 0.0
    else:
        recall = tp / n_gold
    # 2PR/(P+R) simplifies to 2tp/(pred+gold); computing it from the counts
    # keeps the result exact in the sense of rational count arithmetic
    if n_pred + n_gold == 0:
        f1 = 1.0
    else:
        f1 = 2 * tp / (n_pred + n_gold)
    return precision, recall, f1


def alsc_accuracy(gold, pred):
    if len(gold) != len(pred) or not gold:
        raise ValueError("need equal-length non-empty label lists")
    return sum(g == p for g, p in zip(gold, pred)) / len(gold)


def per_class_prf(gold, pred, n_classes=3):
    """Per-class (precision, recall, F1) from the confusion counts."""
    out = []
    for c in range(n_classes):
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        n_pred = sum(1 for p in pred if p == c)
        n_gold = sum(1 for g in gold if g == c)
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_gold if n_gold else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out.append((p, r, f))
    return out


def macro_f1(gold, pred, n_classes=3):
    """Unweighted mean of per-class F1; a class absent from both gold and
    predictions contributes 0.

    Computed in rational arithmetic with a single rounding at the end, so
    the result is the correctly rounded value of the exact mean."""
    if len(gold) != len(pred) or not gold:
        raise ValueError("need equal-length non-empty label lists")
    total = Fraction(0)
    for c in range(n_classes):
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        support = sum(1 for p in pred if p == c) + sum(1 for g in gold if g == c)
        # per-class 2PR/(P+R) simplifies to 2tp/(pred_count + gold_count)
        if support and tp:
            total += Fraction(2 * tp, support)
    return float(total / n_classes)


def alsc_report(gold, pred):
    per_class = per_class_prf(gold, pred)
    return {
        "accuracy": alsc_accuracy(gold, pred),
        "macro_f1": macro_f1(gold, pred),
        "per_class": {name: list(per_class[i])
                      for i, name in enumerate(SENTIMENT_LABELS)},
    }


def predict_alsc(params, vocab, instances):
    """Deterministic eval-mode sentiment predictions (argmax labels)."""
    from .model import forward_instance
    pred = []
    for inst in instances:
        result = forward_instance(inst, vocab, params, mode="eval",
                                  want_alsc=True, want_aowe=False)
        pred.append(int(np.argmax(result.alsc_probs.data)))
    return pred


def predict_aowe_spans(params, vocab, instances, strict=False):
    """Deterministic eval-mode opinion spans (argmax tags, then decoding)."""
    from .model import forward_instance
    pred = []
    for inst in instances:
        result = forward_instance(inst, vocab, params, mode="eval",
                                  want_alsc=False, want_aowe=True)
        tags = np.argmax(result.aowe_probs.data, axis=1)
        pred.append(decode_bio_spans(tags, strict=strict))
    return pred


def evaluate_model(params, vocab, alsc_data=None, aowe_data=None):
    """Metrics of a trained model on the given datasets."""
    report = EvalReport()
    if alsc_data and params.config.enable_alsc_task:
        gold = [inst.label for inst in alsc_data]
        report.alsc = alsc_report(gold, predict_alsc(params, vocab, alsc_data))
    if aowe_data and params.config.enable_aowe_task:
        gold = [decode_bio_spans(inst.tags) for inst in aowe_data]
        report.aowe = aowe_report(gold, predict_aowe_spans(params, vocab, aowe_data))
    return report


def aowe_report(gold_spans, pred_spans):
    p, r, f = span_prf(gold_spans, pred_spans)
    return {
        "precision": p,
        "recall": r,
        "f1": f,
        "tp": sum(len(set(g) & set(q)) for g, q in zip(gold_spans, pred_spans)),
        "pred_count": sum(len(q) for q in pred_spans),
        "gold_count": sum(len(g) for g in gold_spans),
    }
