import math
import tempfile
from itertools import permutations
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from core.exceptions import InsufficientStratum
from evaluation.metrics import dcg, ndcg_at_k, recall_at_k
from evaluation.models import FairnessMode, GainMode, RecallMode
from evaluation.services import (
    evaluate_rankings, evaluate_run, fairness_disease_sd, fairness_perturbation, group_by_disease,
    score_distribution
)
from gateway.models import BackendConfig, BackendKind
from gateway.services import BackendGateway
from profiles.models import DoctorProfile, LabelScheme, MedicalQuery
from scoring.runs import RunRow
from scoring.services import PointwiseRanker


def brute_dcg(gains):
    total = 0.0
    for position, value in enumerate(gains):
        total += value / math.log2(position + 2)
    return total


class NdcgTests(SimpleTestCase):

    def test_single_relevant_at_rank_two(self):
        value = ndcg_at_k(['d1', 'd2'], {'d1': 0, 'd2': 1}, 2)
        self.assertAlmostEqual(value, 1 / math.log2(3), places=12)
        self.assertAlmostEqual(value, 0.63093, places=5)

    def test_perfect_ranking_is_one(self):
        self.assertEqual(ndcg_at_k(['a', 'b', 'c'], {'a': 5, 'b': 3, 'c': 0}, 10), 1.0)

    def test_zero_ideal_gives_zero(self):
        self.assertEqual(ndcg_at_k(['a', 'b'], {'a': 0, 'b': 0}, 10), 0.0)

    def test_unjudged_ids_count_as_zero(self):
        self.assertAlmostEqual(ndcg_at_k(['x', 'a'], {'a': 1}, 2), 1 / math.log2(3), places=12)

    def test_matches_brute_force_over_all_orders(self):
        qrels = {'d1': 3, 'd2': 2, 'd3': 3, 'd4': 0, 'd5': 1, 'd6': 2}
        orders = list(permutations(qrels))
        self.assertEqual(len(orders), 720)
        for mode in (GainMode.EXPONENTIAL, GainMode.LINEAR):
            to_gain = (lambda r: 2 ** r - 1) if mode == GainMode.EXPONENTIAL else float
            for k in (1, 3, 6, 10):
                ideal = max(brute_dcg([to_gain(qrels[d]) for d in order][:k]) for order in orders)
                for order in orders:
                    expected = brute_dcg([to_gain(qrels[d]) for d in order][:k]) / ideal
                    self.assertAlmostEqual(ndcg_at_k(list(order), qrels, k, mode), expected, delta=1e-12)

    def test_linear_gain(self):
        self.assertEqual(dcg([2, 0], 2, GainMode.LINEAR), 2.0)
        self.assertEqual(dcg([2, 0], 2, GainMode.EXPONENTIAL), 3.0)


class RecallTests(SimpleTestCase):

    def test_standard_recall(self):
        qrels = {f'r{i}': 1 for i in range(10)}
        qrels.update({f'n{i}': 0 for i in range(20)})
        ranking = ['r0', 'r1'] + [f'n{i}' for i in range(8)]
        self.assertAlmostEqual(recall_at_k(ranking, qrels, 10), 0.2)

    def test_capped_recall(self):
        qrels = {f'r{i:02d}': 2 for i in range(20)}
        ranking = sorted(qrels)
        self.assertEqual(recall_at_k(ranking, qrels, 10, RecallMode.STANDARD), 0.5)
        self.assertEqual(recall_at_k(ranking, qrels, 10, RecallMode.CAPPED), 1.0)

    def test_nothing_relevant(self):
        self.assertEqual(recall_at_k(['a'], {'a': 0}, 10), 0.0)


class EvaluateRunTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.run = self.dir / 'run.trec'
        self.qrels = self.dir / 'qrels.txt'
        self.run.write_text(
            'q1 Q0 d1 1 3.000000 model/pointwise-sum/nocriteria\n'
            'q1 Q0 d2 2 2.000000 model/pointwise-sum/nocriteria\n'
            'q2 Q0 d9 1 1.000000 model/pointwise-sum/nocriteria\n',
            encoding='utf-8'
        )
        self.qrels.write_text('q1 0 d1 0\nq1 0 d2 1\n', encoding='utf-8')

    def tearDown(self):
        self.tmp.cleanup()

    def test_single_query_report(self):
        report = evaluate_run(self.run, self.qrels, ks=(2,))
        self.assertAlmostEqual(report.per_query['q1']['ndcg@2'], 0.6309297535714575, places=12)
        self.assertEqual(report.per_query['q1']['recall@2'], 1.0)
        self.assertEqual(report.skipped_queries, ['q2'])
        self.assertEqual(report.metadata['run_tag'], 'model/pointwise-sum/nocriteria')
        self.assertEqual(report.metadata['queries_evaluated'], 1)
        self.assertIn('ndcg@2', report.to_text())

    def test_excel_export(self):
        report = evaluate_run(self.run, self.qrels, ks=(2, 10))
        path = report.write_excel(self.dir / 'report.xlsx')
        sheets = pd.read_excel(path, sheet_name=None)
        self.assertEqual(list(sheets), ['Summary', 'Per query', 'Metadata'])
        self.assertEqual(list(sheets['Summary']['metric']), ['ndcg@2', 'recall@2', 'ndcg@10', 'recall@10'])

    def test_invalid_k(self):
        with self.assertRaises(ValueError):
            evaluate_run(self.run, self.qrels, ks=(0,))

    def test_macro_is_the_mean(self):
        _, macro, _ = evaluate_rankings(
            {'a': ['x', 'y'], 'b': ['y', 'x']}, {'a': {'x': 1, 'y': 0}, 'b': {'x': 1, 'y': 0}}, ks=(1,)
        )
        self.assertEqual(macro['ndcg@1'], 0.5)


def stratified_group(diseases, per_level, levels=(1, 2, 3, 4, 5), score=lambda label, i: float(label)):
    grouped = {}
    for disease in diseases:
        entries = []
        for level in levels:
            for i in range(per_level):
                entries.append((f'{disease}-{level}-{i}', level, score(level, i)))
        grouped[disease] = entries
    return grouped


class DiseaseSpreadTests(SimpleTestCase):

    def test_perfect_scores_have_no_spread(self):
        grouped = stratified_group(['asthma', 'diabetes', 'gastric cancer'], 6)
        report = fairness_disease_sd(grouped, repeats=1000, seed=1)
        self.assertEqual(report.mode, FairnessMode.DISEASE_SD)
        self.assertEqual(report.mean_sd, 0.0)
        self.assertEqual(set(report.per_disease_mean.values()), {1.0})

    def test_injected_metric(self):
        grouped = stratified_group(['a', 'b'], 5)
        report = fairness_disease_sd(
            grouped, repeats=3, metric=lambda disease, sample: 1.0 if disease == 'a' else 0.5
        )
        self.assertAlmostEqual(report.mean_sd, 0.25, places=12)

    def test_seed_reproduces_the_estimate(self):
        rng = np.random.default_rng(0)
        noise = {}

        def score(label, i):
            return noise.setdefault((label, i), float(rng.normal()))

        grouped = stratified_group(['asthma', 'diabetes', 'gastric cancer', 'lung cancer'], 8, score=score)
        first = fairness_disease_sd(grouped, repeats=50, seed=9)
        second = fairness_disease_sd(grouped, repeats=50, seed=9)
        self.assertEqual(first.mean_sd, second.mean_sd)
        self.assertGreater(first.mean_sd, 0.0)

    def test_small_stratum_is_reported(self):
        grouped = stratified_group(['asthma'], 4)
        with self.assertRaises(InsufficientStratum) as ctx:
            fairness_disease_sd(grouped, repeats=1, per_label=5)
        self.assertEqual(ctx.exception.disease, 'asthma')
        self.assertEqual(ctx.exception.level, 1)

    def test_group_by_disease_keeps_one_judgment_per_doctor(self):
        queries = {
            'q1': MedicalQuery('q1', 'asthma', 'drug therapy'),
            'q2': MedicalQuery('q2', 'asthma', 'rehabilitation'),
        }
        runs = {
            'q1': [RunRow('q1', 'd1', 1, 2.0, 't'), RunRow('q1', 'd2', 2, 1.0, 't')],
            'q2': [RunRow('q2', 'd1', 1, 0.5, 't'), RunRow('q2', 'd3', 2, 0.1, 't')],
        }
        qrels = {'q1': {'d1': 4, 'd2': 1}, 'q2': {'d1': 0, 'd3': 2}}
        grouped = group_by_disease(runs, qrels, queries)
        self.assertEqual(sorted(grouped['asthma']), [('d1', 4, 2.0), ('d2', 1, 1.0), ('d3', 2, 0.1)])

    def test_score_distribution(self):
        runs = {'q1': [RunRow('q1', 'a', 1, 3.0, 't'), RunRow('q1', 'b', 2, 1.0, 't'), RunRow('q1', 'c', 3, 2.0, 't')]}
        table = score_distribution(runs, {'q1': {'a': 1, 'b': 1, 'c': 0}})
        self.assertEqual(table.loc[1, 'count'], 2)
        self.assertEqual(table.loc[1, 'mean'], 2.0)
        self.assertEqual(table.loc[1, 'std'], 1.0)


class PerturbationTests(SimpleTestCase):

    def test_oracle_is_insensitive_to_prefixes(self):
        qrels = {'q1': {'d1': 5, 'd2': 0, 'd3': 3}}
        gateway = BackendGateway(BackendConfig(kind=BackendKind.ORACLE, oracle_qrels=qrels))
        ranker = PointwiseRanker(gateway, LabelScheme.default())
        candidates = [DoctorProfile(d, title='Attending Physician') for d in ('d1', 'd2', 'd3')]

        def rank(queries):
            return {query.query_id: ranker.rank(query, candidates) for query in queries}

        report = fairness_perturbation(
            [MedicalQuery('q1', 'asthma', 'drug therapy')], ['', 'I am female.'], rank, qrels
        )
        self.assertEqual(report.variant_ndcg, {'': 1.0, 'I am female.': 1.0})
        self.assertEqual(report.deltas, [('', 'I am female.', 0.0)])

    def test_noise_deltas_are_reproducible(self):
        queries = [
            MedicalQuery('q1', 'asthma', 'drug therapy'),
            MedicalQuery('q2', 'gastric cancer', 'surgical treatment'),
            MedicalQuery('q3', 'diabetes', 'insulin therapy'),
        ]
        candidates = [DoctorProfile(f'd{i:02d}', expertise=f'General practice {i}') for i in range(15)]
        qrels = {query.query_id: {f'd{i:02d}': i % 6 for i in range(15)} for query in queries}
        variants = ['', 'I am male.', 'I am female.']

        def audit():
            gateway = BackendGateway(BackendConfig(kind=BackendKind.NOISE, seed=5))
            ranker = PointwiseRanker(gateway, LabelScheme.default())
            return fairness_perturbation(
                queries, variants, lambda rendered: {q.query_id: ranker.rank(q, candidates) for q in rendered}, qrels
            )

        first, second = audit(), audit()
        self.assertEqual(first.deltas, second.deltas)
        self.assertEqual(first.variant_ndcg, second.variant_ndcg)
        self.assertEqual(len(first.deltas), 3)
        self.assertTrue(any(delta != 0.0 for _, _, delta in first.deltas))

    def test_needs_two_variants(self):
        with self.assertRaises(ValueError):
            fairness_perturbation([], ['only'], lambda queries: {}, {})
