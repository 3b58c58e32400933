import json
import tempfile
from pathlib import Path
from unittest.mock import patch

from django.test import SimpleTestCase

from core.exceptions import ConfigError, EmptyField, TooFewPairs
from explain.models import CriteriaDocument, CriteriaMode
from explain.prompts import EXPLANATION_PREFIX
from explain.services import (
    CriteriaService, criteria_id_for, generate_rationale, shuffle_criteria_assignment
)
from explain.store import CriteriaStore
from gateway.models import BackendConfig, BackendKind, LabelLogits
from gateway.services import BackendGateway
from profiles.models import LabelScheme, MedicalQuery
from scoring.models import ELICITATION_PREFIX


def oracle_gateway(qrels=None):
    return BackendGateway(BackendConfig(kind=BackendKind.ORACLE, oracle_qrels=qrels or {}))


def make_document(disease, treatment, index=0):
    return CriteriaDocument(
        criteria_id=criteria_id_for(f'({disease}, {treatment})', 'oracle', 'v1', index),
        disease=disease,
        treatment=treatment,
        text=f'1. Experience with {disease}.',
        generator_model='oracle',
    )


class CriteriaGenerationTests(SimpleTestCase):

    def test_candidates_are_distinct_requests_with_stable_ids(self):
        gateway = oracle_gateway()
        documents = CriteriaService(gateway).generate_candidates('lung cancer', 'surgical treatment', 3)
        self.assertEqual(len(documents), 3)
        self.assertEqual(len({d.criteria_id for d in documents}), 3)
        self.assertEqual(gateway.stats()['generate_text'], 3)
        self.assertTrue(all(d.pair_key == '(lung cancer, surgical treatment)' for d in documents))
        self.assertIn('Demonstrated expertise in surgical treatment', documents[0].text)

        again = CriteriaService(oracle_gateway()).generate_candidates('lung cancer', 'surgical treatment', 3)
        self.assertEqual([d.criteria_id for d in again], [d.criteria_id for d in documents])

    def test_oneshot_records_the_exemplar(self):
        gateway = oracle_gateway()
        exemplar = CriteriaService(gateway).generate_candidates('asthma', 'drug therapy', 1)[0]
        document = CriteriaService(gateway).generate_oneshot('gastric cancer', 'chemotherapy', exemplar)
        self.assertEqual(document.exemplar_id, exemplar.criteria_id)
        self.assertEqual(document.pair_key, '(gastric cancer, chemotherapy)')
        self.assertNotEqual(document.criteria_id, exemplar.criteria_id)

    def test_text_is_cut_to_the_budget(self):
        gateway = oracle_gateway()
        document = CriteriaService(gateway, token_budget=6).generate_candidates('asthma', 'drug therapy', 1)[0]
        self.assertLessEqual(gateway.tokenizer.count(document.text), 6)

    def test_zero_candidates_rejected(self):
        with self.assertRaises(ValueError):
            CriteriaService(oracle_gateway()).generate_candidates('asthma', 'drug therapy', 0)

    def test_empty_text_rejected(self):
        with self.assertRaises(EmptyField):
            CriteriaDocument(
                criteria_id='x', disease='asthma', treatment='drug therapy', text='  ', generator_model='m'
            )


class ShuffleTests(SimpleTestCase):

    def setUp(self):
        diseases = ['asthma', 'gastric cancer', 'lung cancer', 'diabetes', 'hepatitis b']
        self.assignment = {}
        for disease in diseases:
            document = make_document(disease, 'drug therapy')
            self.assignment[document.pair_key] = document

    def test_no_pair_keeps_its_own_criteria(self):
        for seed in range(20):
            shuffled = shuffle_criteria_assignment(self.assignment, seed)
            self.assertEqual(set(shuffled), set(self.assignment))
            for pair_key, document in shuffled.items():
                self.assertNotEqual(document.pair_key, pair_key)
            self.assertEqual(
                sorted(d.criteria_id for d in shuffled.values()),
                sorted(d.criteria_id for d in self.assignment.values())
            )

    def test_same_seed_same_mapping(self):
        self.assertEqual(
            shuffle_criteria_assignment(self.assignment, 42),
            shuffle_criteria_assignment(self.assignment, 42)
        )

    def test_two_pairs_swap(self):
        keys = sorted(self.assignment)[:2]
        shuffled = shuffle_criteria_assignment({k: self.assignment[k] for k in keys}, 0)
        self.assertEqual(shuffled[keys[0]], self.assignment[keys[1]])
        self.assertEqual(shuffled[keys[1]], self.assignment[keys[0]])

    def test_single_pair_rejected(self):
        key = next(iter(self.assignment))
        with self.assertRaises(TooFewPairs):
            shuffle_criteria_assignment({key: self.assignment[key]}, 0)


class RationaleTests(SimpleTestCase):

    def setUp(self):
        self.query = MedicalQuery('q1', 'lung cancer', 'surgical treatment')
        self.scheme = LabelScheme.default()
        self.gateway = oracle_gateway({'q1': {'d1': 4}})

    def test_rationale_continues_the_predicted_label(self):
        logits = LabelLogits(self.scheme.names, (-9.0, -7.0, -3.0, -0.5, -1.0))
        with patch.object(self.gateway, 'generate_text', wraps=self.gateway.generate_text) as spy:
            rationale = generate_rationale(
                self.query, 'Title: Chief Physician', logits, self.scheme, self.gateway, doctor_id='d1'
            )
        prompt = spy.call_args.args[0]
        self.assertTrue(prompt.endswith(ELICITATION_PREFIX + 'High' + EXPLANATION_PREFIX))
        self.assertEqual(rationale.predicted_label, 'High')
        self.assertTrue(rationale.text.startswith('1.'))
        self.assertIn('assessed as High', rationale.text)
        self.assertEqual(self.gateway.stats()['label_logits'], 0)
        self.assertEqual(self.gateway.stats()['generate_text'], 1)

    def test_rationale_budget(self):
        logits = LabelLogits(self.scheme.names, (0.0, 0.0, 0.0, 0.0, 1.0))
        rationale = generate_rationale(
            self.query, 'Title: Chief Physician', logits, self.scheme, self.gateway, doctor_id='d1', token_budget=4
        )
        self.assertLessEqual(self.gateway.tokenizer.count(rationale.text), 4)


class CriteriaStoreTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.store = CriteriaStore(Path(self.tmp.name) / 'criteria')
        self.documents = [make_document('asthma', 'drug therapy', i) for i in range(3)]
        for document in self.documents:
            self.store.add(document)

    def tearDown(self):
        self.tmp.cleanup()

    def test_add_is_idempotent(self):
        self.store.add(self.documents[0])
        self.assertEqual(len(self.store.documents('(asthma, drug therapy)')), 3)
        self.assertEqual(self.store.pairs(), ['(asthma, drug therapy)'])

    def test_select_and_lookup(self):
        pair_key = '(asthma, drug therapy)'
        self.assertIsNone(self.store.selected(pair_key))
        self.store.select(pair_key, self.documents[1].criteria_id)
        self.assertEqual(self.store.selected(pair_key), self.documents[1])
        self.assertEqual(self.store.get(self.documents[2].criteria_id), self.documents[2])
        self.assertEqual(list(self.store.selected_assignment()), [pair_key])

        record = json.loads(self.store.path_for(pair_key).read_text(encoding='utf-8'))
        self.assertEqual(record['selected_id'], self.documents[1].criteria_id)

    def test_select_errors(self):
        with self.assertRaises(ConfigError) as ctx:
            self.store.select('(asthma, drug therapy)', 'crit-missing-0')
        self.assertEqual(ctx.exception.field, 'criteria_id')
        with self.assertRaises(ConfigError) as ctx:
            self.store.select('(unknown, pair)', self.documents[0].criteria_id)
        self.assertEqual(ctx.exception.field, 'pair')

    def test_assignment_manifest(self):
        other = make_document('gastric cancer', 'chemotherapy')
        self.store.add(other)
        assignment = {'(asthma, drug therapy)': other, other.pair_key: self.documents[0]}
        path = self.store.write_assignment('shuffled-seed3', assignment, CriteriaMode.SHUFFLED, seed=3)
        self.assertEqual(path.parent.name, 'assignments')

        data = json.loads(path.read_text(encoding='utf-8'))
        self.assertEqual(data['mode'], 'shuffled')
        self.assertEqual(data['seed'], 3)
        self.assertEqual(self.store.read_assignment(path), assignment)
        self.assertEqual(len(self.store.pairs()), 2)
