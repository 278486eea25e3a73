import datetime as dt
import logging
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ziln_ltv import data
from ziln_ltv.data import (
    OOV_TOKEN,
    DataError,
    FeatureSchema,
    LtvExample,
    TransactionRecord,
    Vocabulary,
)

FIXTURES = Path(__file__).parent / "fixtures"
D = dt.date


def txn(cid, date, amount, brand="b"):
    return TransactionRecord(cid, date, amount, "ch", "cat", brand, "oz")


def small_schema():
    return FeatureSchema(("x",), (("brand", Vocabulary.from_values(["acme", "zenith"])),))


class TestVocabulary:
    def test_counts_then_lexicographic(self):
        assert data.build_vocab(["a", "a", "b"]).values == (OOV_TOKEN, "a", "b")
        assert data.build_vocab(["c", "b", "b", "a", "c"]).values == (OOV_TOKEN, "b", "c", "a")

    def test_min_count_drops_all_unique(self):
        assert data.build_vocab(["x", "y", "z"], min_count=2).values == (OOV_TOKEN,)

    def test_deterministic(self):
        vals = ["q", "r", "q", "s", "r", "q"]
        assert data.build_vocab(vals) == data.build_vocab(list(reversed(vals)))

    def test_bad_min_count(self):
        with pytest.raises(ValueError):
            data.build_vocab(["a"], min_count=0)

    def test_unknown_maps_to_zero(self):
        v = Vocabulary.from_values(["a", "b"])
        assert (v.index("a"), v.index("b"), v.index("nope"), v.index(OOV_TOKEN)) == (1, 2, 0, 0)

    def test_file_format(self, tmp_path):
        v = Vocabulary.from_values(["a", "b"])
        v.save(tmp_path / "v.txt")
        assert (tmp_path / "v.txt").read_text() == "<OOV>\na\nb\n"
        assert Vocabulary.load(tmp_path / "v.txt") == v

    def test_load_requires_oov_first(self, tmp_path):
        (tmp_path / "v.txt").write_text("a\nb\n")
        with pytest.raises(DataError):
            Vocabulary.load(tmp_path / "v.txt")

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            Vocabulary.from_values(["a", "a"])


class TestSchema:
    def test_duplicate_names(self):
        with pytest.raises(ValueError):
            FeatureSchema(("x", "x"))
        with pytest.raises(ValueError):
            FeatureSchema(("x",), (("x", Vocabulary.from_values([])),))

    def test_round_trip(self, tmp_path):
        s = small_schema()
        s.save(tmp_path / "s.json")
        assert FeatureSchema.load(tmp_path / "s.json") == s

    def test_vocabulary_file_relative(self):
        s = FeatureSchema.load(FIXTURES / "three_schema.json")
        assert s.vocabulary("brand").values == (OOV_TOKEN, "acme", "zenith")

    def test_bad_json(self, tmp_path):
        (tmp_path / "s.json").write_text("{nope")
        with pytest.raises(DataError):
            FeatureSchema.load(tmp_path / "s.json")


class TestLoadExamples:
    def test_fixture(self):
        schema = FeatureSchema.load(FIXTURES / "three_schema.json")
        got = data.load_examples(FIXTURES / "three_examples.csv", schema)
        assert got == [
            LtvExample("c1", [12.5, 3.0], [1], 0.0, 12.5),
            LtvExample("c2", [7.0, 1.0], [2], 41.25, 7.0),
            LtvExample("c3", [0.0, 2.0], [0], 3.5, 0.0),
        ]

    def test_header_only(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("id,label,first_purchase_value,x,brand\n")
        assert data.load_examples(p, small_schema()) == []

    def test_missing_column(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("id,label,first_purchase_value,x\n")
        with pytest.raises(DataError, match="brand"):
            data.load_examples(p, small_schema())

    def test_bad_number_reports_line(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("id,label,first_purchase_value,x,brand\na,1,1,2,acme\nb,1,1,oops,acme\n")
        with pytest.raises(DataError) as e:
            data.load_examples(p, small_schema())
        assert e.value.line == 3

    def test_negative_label(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("id,label,first_purchase_value,x,brand\na,-1,1,2,acme\n")
        with pytest.raises(DataError, match="negative"):
            data.load_examples(p, small_schema())

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.floats(0, 1e9, allow_nan=False),
                st.floats(-1e9, 1e9, allow_nan=False),
                st.sampled_from(["acme", "zenith", OOV_TOKEN]),
            ),
            max_size=20,
        )
    )
    def test_save_load_identity(self, tmp_path_factory, rows):
        schema = small_schema()
        v = schema.vocabulary("brand")
        examples = [LtvExample(f"id{i}", [x], [v.index(b)], lab, lab) for i, (lab, x, b) in enumerate(rows)]
        p = tmp_path_factory.mktemp("rt") / "e.csv"
        data.save_examples(p, examples, schema)
        assert data.load_examples(p, schema) == examples


class TestFeaturize:
    start, end = D(2012, 3, 1), D(2012, 7, 1)

    def test_windowing_example(self):
        recs = [txn("a", D(2012, 3, 5), 10), txn("a", D(2012, 4, 4), 5), txn("a", D(2013, 4, 9), 7)]
        (ex,) = data.featurize_transactions(recs, self.start, self.end, 365)
        assert (D(2013, 4, 9) - D(2012, 3, 5)).days == 400
        assert ex.label == 5.0 and ex.first_purchase_value == 10.0

    def test_one_time_purchaser(self):
        recs = [txn("a", D(2012, 3, 5), 10), txn("a", D(2012, 3, 5), 3)]
        (ex,) = data.featurize_transactions(recs, self.start, self.end)
        assert ex.label == 0.0 and ex.numerics == [13.0, 2.0]

    def test_cohort_filter(self):
        recs = [txn("in", D(2012, 6, 30), 1), txn("late", D(2012, 7, 1), 1), txn("early", D(2012, 2, 29), 1)]
        assert [e.id for e in data.featurize_transactions(recs, self.start, self.end)] == ["in"]

    def test_horizon_boundary(self):
        first = D(2012, 3, 5)
        recs = [txn("a", first, 1), txn("a", first + dt.timedelta(10), 2), txn("a", first + dt.timedelta(11), 4)]
        assert data.featurize_transactions(recs, self.start, self.end, 10)[0].label == 2.0

    def test_negative_floor_logged(self, caplog):
        recs = [txn("a", D(2012, 3, 5), 10), txn("a", D(2012, 3, 9), -30), txn("a", D(2012, 3, 19), 2)]
        with caplog.at_level(logging.INFO, logger="ziln_ltv.data"):
            (ex,) = data.featurize_transactions(recs, self.start, self.end)
        assert ex.label == 0.0 and "floored" in caplog.text

    def test_largest_item_attributes(self):
        recs = [txn("a", D(2012, 3, 5), 2, "small"), txn("a", D(2012, 3, 5), 9, "big")]
        s = data.summarize_customers(recs, self.start, self.end)
        assert s[0].attributes["brand"] == "big"

    def test_fixture_file(self):
        recs = data.load_transactions(FIXTURES / "transactions.csv")
        summaries = data.summarize_customers(recs, self.start, self.end)
        assert [(s.customer_id, s.label, s.initial_amount) for s in summaries] == [
            ("a", 5.0, 10.0),
            ("b", 0.0, 10.5),
            ("c", 0.0, 3.0),
        ]

    def test_shuffle_invariance(self):
        rng = np.random.default_rng(0)
        recs = []
        for c in range(40):
            first = D(2012, 3, 1) + dt.timedelta(int(rng.integers(0, 150)))
            for _ in range(int(rng.integers(1, 6))):
                day = first + dt.timedelta(int(rng.integers(0, 500)))
                amt = float(np.round(rng.normal(5, 8), 2))
                recs.append(txn(f"c{c:02d}", day, amt, str(rng.choice(["x", "y", "z"]))))
        base = data.featurize_transactions(recs, self.start, self.end)
        for _ in range(5):
            perm = [recs[i] for i in rng.permutation(len(recs))]
            assert data.featurize_transactions(perm, self.start, self.end) == base
        assert all(e.label == 0.0 or e.label > 0 for e in base)

    def test_errors(self):
        with pytest.raises(ValueError):
            data.featurize_transactions([], self.start, self.end)
        with pytest.raises(ValueError):
            data.featurize_transactions([txn("a", D(2012, 3, 5), 1)], self.end, self.start)


class TestLoadTransactions:
    def test_bad_date_line(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text(
            "customer_id,date,amount,chain,category,brand,size_measure\n"
            "a,2012-03-05,1,c,c,b,s\n"
            "a,03/05/2012,1,c,c,b,s\n"
        )
        with pytest.raises(DataError) as e:
            data.load_transactions(p)
        assert e.value.line == 3


class TestSplit:
    def test_sizes(self):
        tr, te = data.split(list(range(10)), 0.2, seed=1)
        assert (len(tr), len(te)) == (8, 2)

    def test_deterministic(self):
        assert data.split(list(range(50)), 0.3, 7) == data.split(list(range(50)), 0.3, 7)
        assert data.split(list(range(50)), 0.3, 7) != data.split(list(range(50)), 0.3, 8)

    @given(st.integers(2, 300), st.floats(0.01, 0.99), st.integers(0, 2**32 - 1))
    def test_partition(self, n, f, seed):
        tr, te = data.split(list(range(n)), f, seed)
        assert sorted(tr + te) == list(range(n)) and tr and te

    def test_errors(self):
        with pytest.raises(ValueError):
            data.split([1], 0.5, 0)
        with pytest.raises(ValueError):
            data.split([1, 2], 1.0, 0)


def test_encode():
    schema = small_schema()
    ex = [LtvExample("a", [1.5], [2], 3.0, 1.0), LtvExample("b", [-1.0], [0], 0.0, 2.0)]
    feats, labels, fpv = data.encode(ex, schema)
    np.testing.assert_array_equal(feats.numerics, [[1.5], [-1.0]])
    np.testing.assert_array_equal(feats.categoricals, [[2], [0]])
    np.testing.assert_array_equal(labels, [3.0, 0.0])
    np.testing.assert_array_equal(fpv, [1.0, 2.0])
    with pytest.raises(ValueError):
        data.encode([LtvExample("c", [1.0, 2.0], [0], 0.0)], schema)
