import tempfile
from pathlib import Path

import pandas as pd
from django.test import SimpleTestCase

from core.exceptions import ConfigError, CrossPairExhausted, PoolExhausted
from dataset_tools.models import MinedNegative, MiningParams, NegativeSource, PoolEntry
from dataset_tools.services import (
    dataset_statistics, generate_synthetic_fixture, load_pool, mine_hard_negatives, validate_dataset,
    write_fixture, write_review_sheet
)
from profiles.models import DoctorProfile, MedicalQuery

PAIR = '(lung cancer, surgical treatment)'


def long_pool(count, prefix='n', length=2000):
    return [PoolEntry(f'{prefix}{i:03d}', length, float(count - i)) for i in range(count)]


class MiningTests(SimpleTestCase):

    def setUp(self):
        self.positives = [f'p{i:03d}' for i in range(50)]
        self.donors = {'(asthma, drug therapy)': [(f'x{i:03d}', 5) for i in range(30)] + [('x999', 3)]}

    def test_one_to_one_with_cross_pair_share(self):
        pool = long_pool(200)
        # positives and short profiles never become negatives
        pool += [PoolEntry('p000', 5000, 999.0), PoolEntry('short', 1024, 998.0)]
        mined = mine_hard_negatives(PAIR, self.positives, pool, self.donors, MiningParams())

        self.assertEqual(len(mined), 50)
        sources = [m.source for m in mined]
        self.assertEqual(sources.count(NegativeSource.CROSS_PAIR), 15)
        self.assertEqual(sources[:35], [NegativeSource.POOL] * 35)
        ids = [m.doctor_id for m in mined]
        self.assertEqual(len(set(ids)), 50)
        self.assertNotIn('p000', ids)
        self.assertNotIn('short', ids)
        self.assertNotIn('x999', ids)
        # ceil(0.01 * 200) = 2 top entries are skipped
        self.assertNotIn('n000', ids)
        self.assertNotIn('n001', ids)

    def test_deterministic(self):
        pool = long_pool(200)
        first = mine_hard_negatives(PAIR, self.positives, pool, self.donors, MiningParams(seed=4))
        second = mine_hard_negatives(PAIR, self.positives, pool, self.donors, MiningParams(seed=4))
        self.assertEqual(first, second)

    def test_no_top_exclusion_keeps_the_best(self):
        params = MiningParams(top_exclude_fraction=0.0, replacement_fraction=0.0)
        mined = mine_hard_negatives(PAIR, ['p1', 'p2'], long_pool(10), {}, params)
        self.assertEqual(mined, [MinedNegative('n000', 'pool'), MinedNegative('n001', 'pool')])

    def test_pool_exhausted(self):
        with self.assertRaises(PoolExhausted):
            mine_hard_negatives(PAIR, ['p1', 'p2', 'p3', 'p4', 'p5'], long_pool(4), {}, MiningParams())

    def test_cross_pair_exhausted(self):
        donors = {'(asthma, drug therapy)': [('x1', 5)]}
        with self.assertRaises(CrossPairExhausted):
            mine_hard_negatives(PAIR, self.positives, long_pool(200), donors, MiningParams())

    def test_params_validation(self):
        with self.assertRaises(ConfigError) as ctx:
            MiningParams(replacement_fraction=1.5)
        self.assertEqual(ctx.exception.field, 'mining.replacement_fraction')


class SyntheticFixtureTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_default_fixture_is_balanced_and_valid(self):
        fixture = generate_synthetic_fixture(seed=7)
        self.assertEqual(len(fixture.queries), 38)
        self.assertEqual(len(fixture.qrels), 38 * 114)
        self.assertEqual(len({q.pair_key for q in fixture.queries}), 38)

        per_query = fixture.qrels_by_query()
        for judged in per_query.values():
            counts = pd.Series(list(judged.values())).value_counts()
            self.assertEqual(set(counts.index), {0, 1, 2, 3, 4, 5})
            self.assertEqual(set(counts.values), {19})

        paths = write_fixture(self.dir / 'fixture', fixture)
        report = validate_dataset(paths['corpus'], paths['queries'], paths['qrels'])
        self.assertEqual(report.status, 'clean')
        self.assertEqual(report.exit_code, 0)

        pool = load_pool(paths['pool'])
        self.assertEqual(len(pool), 38)
        first = fixture.queries[0]
        self.assertEqual(len(pool[first.pair_key]), 114 + 228)

    def test_same_seed_same_bytes(self):
        first = write_fixture(self.dir / 'a', generate_synthetic_fixture(seed=3, n_queries=4, docs_per_query=12))
        second = write_fixture(self.dir / 'b', generate_synthetic_fixture(seed=3, n_queries=4, docs_per_query=12))
        for name in first:
            self.assertEqual(first[name].read_bytes(), second[name].read_bytes(), msg=name)

    def test_too_few_documents_per_query(self):
        with self.assertRaises(ValueError):
            generate_synthetic_fixture(seed=1, n_queries=2, docs_per_query=5)


class ValidationTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.corpus = self.dir / 'corpus.jsonl'
        self.queries = self.dir / 'queries.jsonl'
        self.qrels = self.dir / 'qrels.txt'
        self.corpus.write_text(
            '{"doctor_id": "d1", "title": "Chief Physician"}\n{"doctor_id": "d2"}\n', encoding='utf-8'
        )
        self.queries.write_text(
            '{"query_id": "q1", "disease": "asthma", "treatment": "drug therapy"}\n'
            '{"query_id": "q2", "disease": "epilepsy", "treatment": "surgical treatment"}\n',
            encoding='utf-8'
        )

    def tearDown(self):
        self.tmp.cleanup()

    def test_warnings_only(self):
        self.qrels.write_text('q1 0 d1 3\n', encoding='utf-8')
        report = validate_dataset(self.corpus, self.queries, self.qrels)
        self.assertEqual({f.code for f in report.findings}, {'empty_profile', 'unjudged_query'})
        self.assertEqual(report.exit_code, 1)

    def test_errors_name_the_line(self):
        self.qrels.write_text('q1 0 d1 3\nq1 0 d9 2\nq3 0 d1 1\nq2 0 d2 7\nq1 0 d1 1\n', encoding='utf-8')
        report = validate_dataset(self.corpus, self.queries, self.qrels)
        by_code = {f.code: f for f in report.errors}
        self.assertEqual(by_code['dangling_doctor'].line_number, 2)
        self.assertEqual(by_code['dangling_query'].line_number, 3)
        self.assertEqual(by_code['relevance_out_of_range'].line_number, 4)
        self.assertEqual(by_code['duplicate_judgment'].line_number, 5)
        self.assertEqual(report.status, 'errors')
        self.assertEqual(report.exit_code, 2)


class ReviewAndStatisticsTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.corpus = {
            'd1': DoctorProfile('d1', title='Chief Physician', expertise='x' * 500),
            'd2': DoctorProfile('d2', department='Cardiology'),
        }

    def tearDown(self):
        self.tmp.cleanup()

    def test_review_sheet(self):
        negatives = {PAIR: [MinedNegative('d1', 'pool'), MinedNegative('d2', 'cross_pair')]}
        path = write_review_sheet(self.dir / 'review.csv', negatives, self.corpus)
        df = pd.read_csv(path)
        self.assertEqual(list(df.columns), ['pair_key', 'doctor_id', 'source', 'snippet'])
        self.assertEqual(len(df.loc[0, 'snippet']), 200)
        self.assertTrue(df.loc[0, 'snippet'].startswith('Title: Chief Physician | Expertise: '))
        self.assertEqual(df.loc[1, 'snippet'], 'Department: Cardiology')

    def test_statistics(self):
        queries = {'q1': MedicalQuery('q1', 'asthma', 'drug therapy')}
        stats = dataset_statistics(self.corpus, queries, {'q1': {'d1': 5, 'd2': 0}})
        self.assertEqual(stats['judgments'], 2)
        self.assertEqual(stats['label_histogram'], {0: 1, 5: 1})
        self.assertEqual(stats['label_histogram_per_query']['q1'], {0: 1, 5: 1})
        self.assertEqual(stats['length_coverage']['1024'], 1.0)
