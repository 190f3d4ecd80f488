import csv

import pytest

from plansum.abstractor import Candidate, CandidateSet
from plansum.analysis import (
    compute_set_metrics, fusion_ratio, plan_adherence, quartile_bins, report,
    salience, uniqueness,
)
from plansum.corpus import segment
from plansum.plans import ContentPlan

from helpers import make_edu_doc


@pytest.fixture()
def doc():
    return make_edu_doc(["a b", "c d", "e f"], reference="a b", doc_id="m1")


class TestSalience:
    def test_identical_text(self, doc):
        assert salience(ContentPlan((0,), provenance="derived"), doc, ["a", "b"]) == 1.0

    def test_empty_plan(self, doc):
        assert salience(ContentPlan((), provenance="derived"), doc, ["a", "b"]) == 0.0

    def test_half_overlap(self, doc):
        value = salience(ContentPlan((0,), provenance="derived"), doc, ["a", "c"])
        assert value == pytest.approx(0.5)

    def test_empty_reference_rejected(self, doc):
        with pytest.raises(ValueError):
            salience(ContentPlan((0,), provenance="derived"), doc, [])


class TestUniqueness:
    def test_identical_plans(self):
        plans = [ContentPlan((0, 1), provenance="derived")] * 16
        assert uniqueness(plans) == 1

    def test_pairwise_distinct(self):
        plans = [ContentPlan((i,), provenance="derived") for i in range(16)]
        assert uniqueness(plans) == 16

    def test_set_equality_ignores_listing(self):
        plans = [ContentPlan((0, 1), provenance="derived"),
                 ContentPlan((0, 1), provenance="generated"),
                 ContentPlan((2,), provenance="derived")]
        assert uniqueness(plans) == 2

    def test_permutation_invariant(self):
        plans = [ContentPlan((0,), provenance="derived"),
                 ContentPlan((1,), provenance="derived"),
                 ContentPlan((0, 1), provenance="derived")]
        assert uniqueness(plans) == uniqueness(list(reversed(plans)))


class TestFusionRatio:
    def test_units_from_two_sentences_two_sentence_summary(self):
        text = ("The mayor opened the hall yesterday morning. "
                "The dog barked at noon loudly.")
        doc = segment(text, doc_id="f1")
        assert doc.num_edus == 2
        candidate = "The mayor opened the hall. The dog barked at noon."
        dcp = ContentPlan((0, 1), provenance="derived")
        assert fusion_ratio(candidate, doc, dcp) == 1.0

    def test_three_source_sentences_two_sentence_summary(self):
        text = ("The mayor opened the hall yesterday morning. "
                "The dog barked at noon loudly. "
                "Rain fell on the square all evening.")
        doc = segment(text, doc_id="f2")
        candidate = "The mayor opened the hall. The dog barked while rain fell."
        dcp = ContentPlan((0, 1, 2), provenance="derived")
        assert fusion_ratio(candidate, doc, dcp) == pytest.approx(1.5)

    def test_empty_dcp_flagged_zero(self, caplog):
        doc = segment("The mayor opened the hall yesterday morning.", doc_id="f3")
        with caplog.at_level("WARNING"):
            value = fusion_ratio("Nothing related.", doc,
                                 ContentPlan((), provenance="derived"))
        assert value == 0.0
        assert "fusion" in caplog.text

    def test_lower_bound_with_nonempty_dcp(self):
        text = ("The mayor opened the hall yesterday morning. "
                "The dog barked at noon loudly.")
        doc = segment(text, doc_id="f4")
        candidate = "The mayor opened the hall. The dog barked. Rain fell today."
        dcp = ContentPlan((0,), provenance="derived")
        n_sents = 3
        assert fusion_ratio(candidate, doc, dcp) >= 1 / n_sents


class TestPlanAdherence:
    def test_identical_plans(self):
        plan = ContentPlan((0, 2), provenance="generated")
        dcp = ContentPlan((0, 2), provenance="derived")
        assert plan_adherence(plan, dcp) == (1.0, 1.0, 1.0)

    def test_half_overlap(self):
        ecp = ContentPlan((0, 2), provenance="generated")
        dcp = ContentPlan((0, 1), provenance="derived")
        assert plan_adherence(ecp, dcp) == (0.5, 0.5, 0.5)

    def test_disjoint(self):
        ecp = ContentPlan((0,), provenance="generated")
        dcp = ContentPlan((1,), provenance="derived")
        assert plan_adherence(ecp, dcp) == (0.0, 0.0, 0.0)

    def test_empty_denominators_zero(self):
        empty = ContentPlan((), provenance="derived")
        assert plan_adherence(empty, empty) == (0.0, 0.0, 0.0)


def test_quartile_bins():
    bins = quartile_bins([1, 2, 3, 4, 5, 6, 7, 8])
    assert bins[0] == 0 and bins[-1] == 3
    assert sorted(set(bins)) == [0, 1, 2, 3]


def _perfect_set(doc, method="beam", k=3):
    cands = [Candidate(doc_id=doc.id, method=method, beam_index=i,
                       text=" ".join(doc.reference_tokens()))
             for i in range(k)]
    return CandidateSet(doc_id=doc.id, method=method, candidates=cands)


class TestReport:
    def test_single_document_tables(self, tmp_path):
        text = ("The mayor opened the hall yesterday morning, but the dog "
                "barked at noon loudly. Rain fell on the square all evening.")
        doc = segment(text, doc_id="t1", reference=None)
        doc = segment(text, doc_id="t1",
                      reference="The mayor opened the hall yesterday morning.")
        cset = _perfect_set(doc)
        written = report([cset], {doc.id: doc}, tmp_path, plots=False)
        table = list(csv.reader(open(written["uniqueness"])))
        assert table[0] == ["method", "uniqueness"]
        assert len(table) == 2

    def test_reference_echo_has_salience_one_everywhere(self):
        doc = make_edu_doc(["the mayor opened the hall", "the dog barked at noon"],
                           reference="the mayor opened the hall", doc_id="t2")
        cset = _perfect_set(doc)
        metrics = compute_set_metrics(cset, doc)
        assert all(s == pytest.approx(1.0) for s in metrics.salience_by_beam)

    def test_seven_tables_and_headers(self, tmp_path):
        text = ("The mayor opened the hall yesterday morning, but the dog "
                "barked at noon loudly. Rain fell on the square all evening.")
        doc = segment(text, doc_id="t3",
                      reference="The mayor opened the hall yesterday morning.")
        pga = CandidateSet(doc_id=doc.id, method="pga", candidates=[
            Candidate(doc_id=doc.id, method="pga", beam_index=0,
                      text=" ".join(doc.reference_tokens()),
                      plan=ContentPlan((0,), provenance="generated"), rank=0),
            Candidate(doc_id=doc.id, method="pga", beam_index=1,
                      text=" ".join(doc.edu_tokens(2)),
                      plan=ContentPlan((2,), provenance="generated"), rank=1),
        ])
        written = report([pga], {doc.id: doc}, tmp_path, plots=False)
        expected_headers = {
            "pga/rouge_by_beam": ["beam", "mean_r1", "mean_len"],
            "pga/salience_by_beam": ["beam", "salience"],
            "pga/quartiles": ["quartile", "mean_r1"],
            "uniqueness": ["method", "uniqueness"],
            "fusion": ["method", "fusion_ratio"],
            "adherence": ["method", "adherence_r", "adherence_p", "adherence_f1"],
            "plan_quality": ["method", "plan_r1", "plan_r2", "plan_rl", "unique_plans"],
        }
        assert set(written) == set(expected_headers)
        for key, header in expected_headers.items():
            with open(written[key]) as fh:
                assert next(csv.reader(fh)) == header

    def test_missing_reference_rows_absent_not_zero(self, tmp_path, caplog):
        text = "The mayor opened the hall yesterday morning."
        with_ref = segment(text, doc_id="w1", reference="The mayor opened the hall.")
        without = segment(text, doc_id="w2", reference=None)
        sets = [_perfect_set(with_ref), CandidateSet(
            doc_id="w2", method="beam",
            candidates=[Candidate(doc_id="w2", method="beam", beam_index=0, text="x y")])]
        with caplog.at_level("WARNING"):
            report(sets, {"w1": with_ref, "w2": without}, tmp_path, plots=False)
        assert "omitted" in caplog.text

    def test_plots_rendered(self, tmp_path):
        text = ("The mayor opened the hall yesterday morning, but the dog "
                "barked at noon loudly.")
        doc = segment(text, doc_id="t4",
                      reference="The mayor opened the hall yesterday morning.")
        written = report([_perfect_set(doc)], {doc.id: doc}, tmp_path, plots=True)
        for name in ("rouge_by_beam", "length_by_beam", "salience_by_beam",
                     "uniqueness_plot"):
            assert written[name].exists()
            assert written[name].suffix == ".png"
