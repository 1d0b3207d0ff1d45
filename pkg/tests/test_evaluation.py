from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otn.evaluation import (Span, decode_bio_spans, encode_bio_tags, span_prf,
                            alsc_accuracy, macro_f1, per_class_prf)

O, B, I = 0, 1, 2


def decode_oracle(tags):
    """Explicit state machine for lenient BIO decoding."""
    spans, start = set(), None
    for i, t in enumerate(tags):
        if t == B:
            if start is not None:
                spans.add((start, i))
            start = i
        elif t == I and start is None:
            start = i
        elif t == O and start is not None:
            spans.add((start, i))
            start = None
    if start is not None:
        spans.add((start, len(tags)))
    return spans


class TestDecode:
    def test_simple(self):
        assert decode_bio_spans([O, B, I, O]) == {Span(1, 3)}

    def test_multiword_phrase(self):
        # "Waiters are very friendly and the pasta is out of this world ."
        tags = [O, O, O, O, O, O, O, O, B, I, I, I, O]
        assert decode_bio_spans(tags) == {Span(8, 12)}

    def test_lenient_orphan_i(self):
        assert decode_bio_spans([I, I, O, B]) == {Span(0, 2), Span(3, 4)}

    def test_strict_drops_orphan_i(self):
        assert decode_bio_spans([I, I, O, B], strict=True) == {Span(3, 4)}

    def test_b_after_b_splits(self):
        assert decode_bio_spans([B, B, I]) == {Span(0, 1), Span(1, 3)}

    def test_trailing_span_closed(self):
        assert decode_bio_spans([O, B, I]) == {Span(1, 3)}

    @given(st.lists(st.sampled_from([O, B, I]), max_size=12))
    @settings(max_examples=200, deadline=None)
    def test_matches_state_machine_oracle(self, tags):
        got = {(s.start, s.end) for s in decode_bio_spans(tags)}
        assert got == decode_oracle(tags)

    @given(st.lists(st.sampled_from([O, B, I]), max_size=12))
    @settings(max_examples=200, deadline=None)
    def test_spans_disjoint_and_sorted(self, tags):
        spans = sorted(decode_bio_spans(tags))
        for a, b in zip(spans, spans[1:]):
            assert a.end <= b.start

    def test_roundtrip_well_formed(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            n = int(rng.integers(1, 15))
            tags = []
            while len(tags) < n:
                if rng.random() < 0.4:
                    span_len = int(rng.integers(1, min(4, n - len(tags)) + 1))
                    tags.extend([B] + [I] * (span_len - 1))
                else:
                    tags.append(O)
            tags = tags[:n]
            if tags and tags[-1] == I and B not in tags:
                continue
            assert encode_bio_tags(decode_bio_spans(tags), n) == tags


def span_prf_oracle(gold, pred):
    """Exact rational set-intersection oracle."""
    tp = sum(len(set(g) & set(p)) for g, p in zip(gold, pred))
    np_, ng = sum(map(len, pred)), sum(map(len, gold))
    p = Fraction(tp, np_) if np_ else (Fraction(1) if ng == 0 else Fraction(0))
    r = Fraction(tp, ng) if ng else (Fraction(1) if np_ == 0 else Fraction(0))
    f = 2 * p * r / (p + r) if p + r else Fraction(0)
    return p, r, f


def random_span_sets(rng, n_instances):
    out = []
    for _ in range(n_instances):
        length = int(rng.integers(1, 12))
        tags = rng.integers(0, 3, size=length)
        out.append(decode_bio_spans(tags))
    return out


class TestSpanPrf:
    def test_identical(self):
        sets = [{Span(0, 2)}, {Span(1, 3), Span(5, 6)}]
        assert span_prf(sets, sets) == (1.0, 1.0, 1.0)

    def test_off_by_one_no_credit(self):
        p, r, f = span_prf([[Span(0, 2)]], [[Span(0, 3)]])
        assert (p, r, f) == (0.0, 0.0, 0.0)

    def test_no_predictions_edge_cases(self):
        assert span_prf([set()], [set()]) == (1.0, 1.0, 1.0)
        p, r, f = span_prf([{Span(0, 1)}], [set()])
        assert (p, r, f) == (0.0, 0.0, 0.0)

    def test_misaligned_rejected(self):
        with pytest.raises(ValueError):
            span_prf([set()], [set(), set()])

    def test_matches_oracle_on_random_sequences(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            gold = random_span_sets(rng, 50)
            pred = random_span_sets(rng, 50)
            got = span_prf(gold, pred)
            expected = span_prf_oracle(gold, pred)
            for a, b in zip(got, expected):
                assert a == float(b)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(17)
        gold = random_span_sets(rng, 30)
        pred = random_span_sets(rng, 30)
        p1, r1, f1 = span_prf(gold, pred)
        p2, r2, f2 = span_prf(pred, gold)
        assert (p1, r1, f1) == (r2, p2, f2)

    def test_f1_bounded_by_max_pr(self):
        rng = np.random.default_rng(18)
        for _ in range(50):
            gold = random_span_sets(rng, 10)
            pred = random_span_sets(rng, 10)
            p, r, f = span_prf(gold, pred)
            assert f <= max(p, r) + 1e-12


def macro_f1_oracle(gold, pred, n_classes=3):
    """Confusion-matrix oracle in exact rational arithmetic."""
    total = Fraction(0)
    for c in range(n_classes):
        tp = sum(1 for g, p in zip(gold, pred) if g == p == c)
        fp = sum(1 for g, p in zip(gold, pred) if g != c and p == c)
        fn = sum(1 for g, p in zip(gold, pred) if g == c and p != c)
        prec = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        rec = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        total += 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0)
    return total / n_classes


class TestAlscMetrics:
    def test_accuracy(self):
        assert alsc_accuracy([0, 1, 2], [0, 1, 2]) == 1.0
        assert alsc_accuracy([0, 0, 0], [1, 1, 1]) == 0.0
        assert alsc_accuracy([0] * 7 + [1] * 3, [0] * 7 + [2] * 3) == 0.7

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            alsc_accuracy([], [])
        with pytest.raises(ValueError):
            macro_f1([], [])

    def test_perfect_macro_f1(self):
        assert macro_f1([0, 1, 2, 0], [0, 1, 2, 0]) == 1.0

    def test_constant_predictor(self):
        gold = [0, 0, 1, 1, 2, 2]
        pred = [0] * 6
        # class 0: P=2/6, R=1 -> F1=1/2; classes 1 and 2 score 0
        per = per_class_prf(gold, pred)
        assert per[0][2] == pytest.approx(0.5)
        assert per[1][2] == 0.0 and per[2][2] == 0.0
        assert macro_f1(gold, pred) == pytest.approx(0.5 / 3)

    def test_matches_confusion_oracle(self):
        rng = np.random.default_rng(19)
        gold = rng.integers(0, 3, size=200).tolist()
        pred = rng.integers(0, 3, size=200).tolist()
        assert macro_f1(gold, pred) == pytest.approx(float(macro_f1_oracle(gold, pred)),
                                                     abs=1e-15)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(20)
        gold = rng.integers(0, 3, size=100).tolist()
        pred = rng.integers(0, 3, size=100).tolist()
        base = macro_f1(gold, pred)
        for perm in ([1, 2, 0], [2, 0, 1], [0, 2, 1]):
            assert macro_f1([perm[g] for g in gold],
                            [perm[p] for p in pred]) == pytest.approx(base)
