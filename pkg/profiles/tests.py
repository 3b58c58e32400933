import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from core.exceptions import AllFieldsEmpty, EmptyField, InvalidLabelScheme, MedRankError, ParseError
from gateway.tokenizers import CharBudgetTokenizer, ReferenceTokenizer
from profiles.models import (
    DoctorProfile, GradedJudgment, LabelScheme, MedicalQuery, RankedList, ScoredCandidate
)
from profiles.services import (
    load_corpus, load_qrels, load_queries, render_query, serialize_profile, write_corpus, write_qrels
)


class DoctorProfileSerializationTests(SimpleTestCase):

    def test_only_non_empty_fields_in_order(self):
        profile = DoctorProfile('d1', title='Chief Physician', expertise='Lung cancer surgery')
        self.assertEqual(
            serialize_profile(profile),
            'Title: Chief Physician\nExpertise: Lung cancer surgery'
        )

    def test_field_order_is_respected(self):
        profile = DoctorProfile('d1', title='Chief Physician', expertise='Lung cancer surgery')
        text = serialize_profile(profile, field_order=('expertise', 'title'))
        self.assertEqual(text, 'Expertise: Lung cancer surgery\nTitle: Chief Physician')

    def test_all_empty_raises(self):
        with self.assertRaises(AllFieldsEmpty):
            serialize_profile(DoctorProfile('d1', title='   '))

    def test_empty_profile_loads_and_fails_at_serialization(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'corpus.jsonl'
            write_corpus(path, [DoctorProfile('d1', title='Chief Physician'), DoctorProfile('d2')])
            corpus = load_corpus(path)
        self.assertFalse(corpus['d1'].is_empty)
        self.assertTrue(corpus['d2'].is_empty)
        with self.assertRaises(AllFieldsEmpty):
            serialize_profile(corpus['d2'])

    def test_truncation_is_a_token_prefix(self):
        profile = DoctorProfile('d1', introduction='word ' * 500)
        tokenizer = ReferenceTokenizer()
        full = serialize_profile(profile, token_budget=10 ** 6, tokenizer=tokenizer)
        cut = serialize_profile(profile, token_budget=50, tokenizer=tokenizer)
        self.assertTrue(full.startswith(cut))
        self.assertEqual(tokenizer.count(cut), 50)

    def test_char_budget_fallback(self):
        profile = DoctorProfile('d1', introduction='x' * 100)
        text = serialize_profile(profile, token_budget=10, tokenizer=CharBudgetTokenizer(3))
        self.assertEqual(len(text), 30)

    def test_empty_doctor_id_rejected(self):
        with self.assertRaises(EmptyField):
            DoctorProfile('  ')

    def test_social_service_display_key(self):
        profile = DoctorProfile('d1', social_service='Volunteer clinic')
        self.assertEqual(serialize_profile(profile), 'Social Service: Volunteer clinic')


class MedicalQueryTests(SimpleTestCase):

    def test_render(self):
        query = MedicalQuery('q1', 'lung cancer', 'surgical treatment')
        self.assertEqual(
            query.rendered_text,
            'I want to find a doctor specializing in surgical treatment for lung cancer.'
        )

    def test_prefix_is_prepended(self):
        query = MedicalQuery('q1', 'lung cancer', 'surgical treatment').with_prefix('I am female.')
        self.assertTrue(query.rendered_text.startswith('I am female. I want to find'))

    def test_empty_disease_rejected(self):
        with self.assertRaises(EmptyField):
            render_query('', 'surgical treatment')

    def test_pair_key(self):
        self.assertEqual(MedicalQuery('q1', 'asthma', 'drug therapy').pair_key, '(asthma, drug therapy)')


class LabelSchemeTests(SimpleTestCase):

    def test_default_scheme(self):
        scheme = LabelScheme.default()
        self.assertEqual(scheme.names, ('Not Relevant', 'Low', 'Mid', 'High', 'Top'))
        self.assertEqual(scheme.scores, (0.0, 1.0, 2.0, 3.0, 4.0))

    def test_reduced_schemes(self):
        for size in (5, 4, 3, 2):
            scheme = LabelScheme.reduced(size)
            self.assertEqual(scheme.size, size)
            self.assertEqual(scheme.score_range, (0.0, float(size - 1)))
        self.assertEqual(LabelScheme.reduced(3).names, ('Not Relevant', 'Low', 'High'))

    def test_rejects_bad_schemes(self):
        with self.assertRaises(InvalidLabelScheme):
            LabelScheme((('A', 0),))
        with self.assertRaises(InvalidLabelScheme):
            LabelScheme((('A', 0), ('A', 1)))
        with self.assertRaises(InvalidLabelScheme):
            LabelScheme((('A', 1), ('B', 1)))

    def test_from_dict_forms(self):
        self.assertEqual(LabelScheme.from_dict(3), LabelScheme.reduced(3))
        self.assertEqual(LabelScheme.from_dict(['No', 'Yes']).names, ('No', 'Yes'))
        scheme = LabelScheme.from_dict(LabelScheme.default().to_dict())
        self.assertEqual(scheme, LabelScheme.default())


class RankedListTests(SimpleTestCase):

    def test_ties_break_by_doctor_id(self):
        ranked = RankedList.from_candidates('q1', [
            ScoredCandidate('d3', 1.0), ScoredCandidate('d1', 1.0), ScoredCandidate('d2', 2.0)
        ])
        self.assertEqual(ranked.doctor_ids, ('d2', 'd1', 'd3'))

    def test_rejects_duplicates_and_disorder(self):
        with self.assertRaises(MedRankError):
            RankedList('q1', (ScoredCandidate('d1', 1.0), ScoredCandidate('d1', 0.5)))
        with self.assertRaises(MedRankError):
            RankedList('q1', (ScoredCandidate('d1', 1.0), ScoredCandidate('d2', 2.0)))

    def test_probabilities_must_sum_to_one(self):
        with self.assertRaises(MedRankError):
            ScoredCandidate('d1', 1.0, label_probs=(0.5, 0.4))


class DatasetFileTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_corpus_roundtrip_and_duplicates(self):
        path = self.dir / 'corpus.jsonl'
        write_corpus(path, [DoctorProfile('d1', title='A'), DoctorProfile('d2', expertise='B')])
        self.assertEqual(set(load_corpus(path)), {'d1', 'd2'})

        with open(path, 'a', encoding='utf-8') as handle:
            handle.write('{"doctor_id": "d1", "title": "again"}\n')
        with self.assertRaises(ParseError) as ctx:
            load_corpus(path)
        self.assertEqual(ctx.exception.line_number, 3)

    def test_bad_json_reports_line(self):
        path = self.dir / 'queries.jsonl'
        path.write_text('{"query_id": "q1", "disease": "a", "treatment": "b"}\n{oops\n', encoding='utf-8')
        with self.assertRaises(ParseError) as ctx:
            load_queries(path)
        self.assertEqual(ctx.exception.line_number, 2)

    def test_qrels(self):
        path = self.dir / 'qrels.txt'
        write_qrels(path, [GradedJudgment('q1', 'd1', 5), GradedJudgment('q1', 'd2', 0)])
        self.assertEqual(load_qrels(path), {'q1': {'d1': 5, 'd2': 0}})

        path.write_text('q1 0 d1 7\n', encoding='utf-8')
        with self.assertRaises(ParseError):
            load_qrels(path)
