import tempfile
from decimal import Decimal, localcontext
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import CandidateFailed, MissingSidecar
from gateway.models import BackendConfig, BackendKind
from gateway.services import BackendGateway
from profiles.models import DoctorProfile, LabelScheme, MedicalQuery
from scoring.models import ELICITATION_PREFIX, FailurePolicy, ScoreStrategy
from scoring.prompts import assemble_ranking_prompt
from scoring.runs import (
    read_run, read_sidecar, run_tag, sidecar_path_for, sidecar_rows, write_run, write_sidecar
)
from scoring.services import PointwiseRanker, derive_score, label_probabilities, rank_pointwise


def decimal_softmax(values):
    with localcontext() as ctx:
        ctx.prec = 60
        exps = [Decimal(repr(float(v))).exp() for v in values]
        total = sum(exps)
        return [float(e / total) for e in exps]


def decimal_expectation(values, scores):
    with localcontext() as ctx:
        ctx.prec = 60
        exps = [Decimal(repr(float(v))).exp() for v in values]
        total = sum(exps)
        return float(sum(e * Decimal(s) for e, s in zip(exps, scores)) / total)


class ScoreDerivationTests(SimpleTestCase):

    def setUp(self):
        self.scheme = LabelScheme.default()
        self.rng = np.random.default_rng(20240501)

    def test_probabilities_match_high_precision_softmax(self):
        for _ in range(1000):
            values = self.rng.uniform(-10, 10, size=5)
            probs = label_probabilities(values)
            expected = decimal_softmax(values)
            for got, want in zip(probs, expected):
                self.assertAlmostEqual(got, want, delta=1e-9)
            self.assertAlmostEqual(float(np.sum(probs)), 1.0, delta=1e-9)

    def test_scores_match_high_precision_expectation(self):
        for _ in range(1000):
            values = self.rng.uniform(-10, 10, size=5)
            self.assertAlmostEqual(
                derive_score(values, self.scheme, ScoreStrategy.SUM),
                decimal_expectation(values, self.scheme.scores),
                delta=1e-9
            )
            self.assertAlmostEqual(
                derive_score(values, self.scheme, ScoreStrategy.MAX_PROB),
                decimal_softmax(values)[self.scheme.top_index],
                delta=1e-9
            )

    def test_worked_example(self):
        values = [1, 2, 3, 4, 5]
        self.assertAlmostEqual(
            derive_score(values, self.scheme, ScoreStrategy.SUM), decimal_expectation(values, range(5)), delta=1e-12
        )
        self.assertEqual(derive_score(values, self.scheme, ScoreStrategy.MAX_LOGIT), 5.0)
        self.assertAlmostEqual(
            derive_score(values, self.scheme, ScoreStrategy.MAX_PROB), decimal_softmax(values)[-1], delta=1e-12
        )

    def test_uniform_logits_give_the_label_mean(self):
        self.assertEqual(derive_score([0.0] * 5, self.scheme, ScoreStrategy.SUM), 2.0)
        self.assertEqual(derive_score([-3.5] * 5, self.scheme, ScoreStrategy.SUM), 2.0)

    def test_dominant_top_label(self):
        probs = label_probabilities([0, 0, 0, 0, 100])
        self.assertGreaterEqual(probs[-1], 1 - 1e-9)
        self.assertAlmostEqual(derive_score([0, 0, 0, 0, 100], self.scheme, ScoreStrategy.SUM), 4.0, delta=1e-9)

    def test_scores_stay_in_range(self):
        for _ in range(200):
            values = self.rng.uniform(-10, 10, size=5)
            score = derive_score(values, self.scheme, ScoreStrategy.SUM)
            self.assertTrue(0.0 <= score <= 4.0)
            self.assertTrue(0.0 <= derive_score(values, self.scheme, ScoreStrategy.MAX_PROB) <= 1.0)

    def test_raising_the_top_logit_raises_every_score(self):
        for _ in range(10000):
            values = self.rng.uniform(-10, 10, size=5)
            bumped = values.copy()
            bumped[-1] += self.rng.uniform(0.5, 3.0)
            for strategy in ScoreStrategy.values:
                self.assertGreater(
                    derive_score(bumped, self.scheme, strategy),
                    derive_score(values, self.scheme, strategy)
                )

    def test_shift_invariance(self):
        for _ in range(10000):
            values = self.rng.uniform(-10, 10, size=5)
            shift = self.rng.uniform(-20, 20)
            shifted = values + shift
            for strategy in (ScoreStrategy.SUM, ScoreStrategy.MAX_PROB):
                self.assertAlmostEqual(
                    derive_score(shifted, self.scheme, strategy),
                    derive_score(values, self.scheme, strategy),
                    delta=1e-9
                )
            self.assertEqual(derive_score(shifted, self.scheme, ScoreStrategy.MAX_LOGIT), float(values[-1] + shift))

    def test_reduced_scheme_range(self):
        scheme = LabelScheme.reduced(3)
        self.assertEqual(derive_score([0.0, 0.0, 0.0], scheme, ScoreStrategy.SUM), 1.0)


class RankingPromptTests(SimpleTestCase):

    def test_prompt_layout(self):
        query = MedicalQuery('q1', 'lung cancer', 'surgical treatment')
        prompt = assemble_ranking_prompt(query, 'Title: Chief Physician', LabelScheme.default(), doctor_id='d1')
        self.assertTrue(prompt.text.endswith(ELICITATION_PREFIX))
        self.assertFalse(prompt.text.endswith('\n'))
        self.assertIn('"Not Relevant", "Low", "Mid", "High", "Top"', prompt.text)
        self.assertIn(query.rendered_text, prompt.text)
        self.assertIsNone(prompt.criteria_id)


class PointwiseRankerTests(SimpleTestCase):

    def setUp(self):
        self.query = MedicalQuery('q1', 'lung cancer', 'surgical treatment')
        self.profiles = [DoctorProfile(f'd{i}', expertise=f'Thoracic surgery case {i}') for i in range(6)]
        qrels = {'q1': {f'd{i}': i for i in range(6)}}
        self.gateway = BackendGateway(BackendConfig(kind=BackendKind.ORACLE, oracle_qrels=qrels))

    def test_oracle_order(self):
        ranker = PointwiseRanker(self.gateway, LabelScheme.default())
        ranked = ranker.rank(self.query, self.profiles)
        self.assertEqual(ranked.doctor_ids, ('d5', 'd4', 'd3', 'd2', 'd1', 'd0'))
        self.assertEqual(self.gateway.stats()['label_logits'], 6)
        top = ranked.entries[0]
        self.assertEqual(top.predicted_label, 'Top')
        self.assertEqual(len(top.label_probs), 5)

    def test_exclude_policy_keeps_going(self):
        profiles = self.profiles + [DoctorProfile('d9')]
        ranker = PointwiseRanker(self.gateway, LabelScheme.default(), failure_policy=FailurePolicy.EXCLUDE)
        ranked = ranker.rank(self.query, profiles)
        self.assertEqual(len(ranked), 6)
        self.assertEqual([f.doctor_id for f in ranker.failures], ['d9'])

    def test_abort_policy_raises(self):
        profiles = self.profiles + [DoctorProfile('d9')]
        ranker = PointwiseRanker(self.gateway, LabelScheme.default(), failure_policy=FailurePolicy.ABORT)
        with self.assertRaises(CandidateFailed) as ctx:
            ranker.rank(self.query, profiles)
        self.assertEqual(ctx.exception.doctor_id, 'd9')

    def test_empty_candidates(self):
        ranked = PointwiseRanker(self.gateway, LabelScheme.default()).rank(self.query, [])
        self.assertEqual(len(ranked), 0)

    def test_input_order_does_not_matter(self):
        gateway = BackendGateway(BackendConfig(kind=BackendKind.NOISE, seed=4, max_in_flight=3))
        profiles = [DoctorProfile(f'd{i:02d}', expertise=f'Pulmonology clinic {i}') for i in range(12)]
        shuffled = [profiles[i] for i in np.random.default_rng(8).permutation(len(profiles))]
        results = [
            rank_pointwise(self.query, candidates, LabelScheme.default(), ScoreStrategy.SUM, gateway)
            for candidates in (profiles, list(reversed(profiles)), shuffled)
        ]
        self.assertEqual(results[0], results[1])
        self.assertEqual(results[0], results[2])
        self.assertEqual(len(results[0]), 12)


class RunFileTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        qrels = {'q1': {'d1': 5, 'd2': 2, 'd3': 0}}
        gateway = BackendGateway(BackendConfig(kind=BackendKind.ORACLE, oracle_qrels=qrels))
        profiles = [DoctorProfile(d, title='Attending Physician') for d in ('d3', 'd1', 'd2')]
        self.ranked = PointwiseRanker(gateway, LabelScheme.default()).rank(
            MedicalQuery('q1', 'asthma', 'drug therapy'), profiles
        )

    def tearDown(self):
        self.tmp.cleanup()

    def test_run_and_sidecar(self):
        path = self.dir / 'run.trec'
        tag = run_tag('oracle', 'pointwise-sum', False)
        write_run(path, [self.ranked], tag)
        rows = read_run(path)['q1']
        self.assertEqual([row.doctor_id for row in rows], ['d1', 'd2', 'd3'])
        self.assertEqual([row.rank for row in rows], [1, 2, 3])
        self.assertEqual(rows[0].tag, 'oracle/pointwise-sum/nocriteria')

        sidecar = sidecar_path_for(path)
        self.assertEqual(sidecar.name, 'run.trec.labels.jsonl')
        write_sidecar(sidecar, sidecar_rows(self.ranked, LabelScheme.default()))
        labels = read_sidecar(sidecar)
        self.assertEqual(labels[('q1', 'd1')]['predicted_label'], 'Top')
        self.assertEqual(labels[('q1', 'd3')]['predicted_label'], 'Not Relevant')

    def test_missing_sidecar(self):
        with self.assertRaises(MissingSidecar):
            read_sidecar(self.dir / 'absent.labels.jsonl')
