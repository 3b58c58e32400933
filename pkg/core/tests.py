import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from core.config import load_job_config
from core.exceptions import ConfigError
from core.models import JobRun
from core.utils import file_digest
from dataset_tools.services import generate_synthetic_fixture, write_fixture
from explain.store import CriteriaStore
from profiles.models import LabelScheme
from profiles.services import load_queries
from scoring.runs import read_run, read_sidecar, sidecar_path_for


class FixtureTestCase(TestCase):
    """A small synthetic dataset: 4 queries, 12 judged doctors each, two per label level."""

    n_queries = 4
    docs_per_query = 12

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        fixture = generate_synthetic_fixture(seed=7, n_queries=self.n_queries, docs_per_query=self.docs_per_query)
        self.paths = write_fixture(self.dir / 'data', fixture)
        self.fixture = fixture

    def tearDown(self):
        self.tmp.cleanup()

    def dataset_args(self):
        return [
            '--corpus', self.paths['corpus'],
            '--queries', self.paths['queries'],
            '--qrels', self.paths['qrels'],
        ]

    def rank(self, output_dir, *extra, backend='oracle'):
        args = ['rank', '--backend', backend, *self.dataset_args(), '--output-dir', output_dir, *extra]
        if '--cache-dir' not in extra:
            args.append('--no-cache')
        call_command(*args, verbosity=0, stdout=StringIO())
        return Path(output_dir)

    def evaluate(self, run_path, *extra):
        call_command('evaluate', '--run', run_path, '--qrels', self.paths['qrels'], *extra, stdout=StringIO())
        return json.loads(Path(f'{run_path}.eval.json').read_text(encoding='utf-8'))


class OracleAcceptanceTests(FixtureTestCase):
    n_queries = 38
    docs_per_query = 114

    def test_oracle_ranks_the_full_fixture_perfectly(self):
        out = self.rank(self.dir / 'oracle')
        run = out / 'run.trec'

        report = self.evaluate(run)
        self.assertEqual(report['metadata']['queries_evaluated'], 38)
        self.assertEqual(report['macro']['ndcg@10'], 1.0)
        self.assertAlmostEqual(report['macro']['recall@10'], 10 / 95, places=12)

        capped = self.evaluate(run, '--recall', 'capped')
        self.assertEqual(capped['macro']['recall@10'], 1.0)

        job = JobRun.objects.filter(command=JobRun.Command.RANK).latest('created_at')
        self.assertEqual(job.status, JobRun.Status.COMPLETED)
        self.assertEqual(job.provenance['gateway']['label_logits'], 38 * 114)


class RankCommandTests(FixtureTestCase):

    def test_warm_cache_reproduces_the_run_without_backend_calls(self):
        cache = str(self.dir / 'cache')
        first = self.rank(self.dir / 'first', '--cache-dir', cache, backend='noise')
        second = self.rank(self.dir / 'second', '--cache-dir', cache, backend='noise')

        self.assertEqual((first / 'run.trec').read_bytes(), (second / 'run.trec').read_bytes())
        provenance = json.loads((second / 'provenance.json').read_text(encoding='utf-8'))
        self.assertEqual(provenance['gateway']['backend_calls'], 0)
        self.assertEqual(provenance['gateway']['cache_hits'], self.n_queries * self.docs_per_query)
        self.assertEqual(provenance['run_tag'], 'noise#seed=0/pointwise-sum/nocriteria')

    def test_label_ablation(self):
        for size in (5, 4, 3, 2):
            out = self.rank(self.dir / f'labels{size}', '--labels', str(size))
            sidecar = read_sidecar(sidecar_path_for(out / 'run.trec'))
            names = list(LabelScheme.reduced(size).names)
            for row in sidecar.values():
                self.assertEqual(row['labels'], names)
                self.assertTrue(0.0 <= row['score'] <= size - 1)
            self.assertEqual(self.evaluate(out / 'run.trec')['macro']['ndcg@10'], 1.0)

    def test_comparison_strategies(self):
        for strategy in ('pairwise', 'listwise'):
            out = self.rank(self.dir / strategy, '--strategy', strategy)
            runs = read_run(out / 'run.trec')
            self.assertEqual(len(runs), self.n_queries)
            self.assertFalse(sidecar_path_for(out / 'run.trec').exists())
            self.assertEqual(self.evaluate(out / 'run.trec')['macro']['ndcg@10'], 1.0)
        tag = next(iter(read_run(self.dir / 'listwise' / 'run.trec').values()))[0].tag
        self.assertEqual(tag, 'oracle/listwise-w20s10p1/nocriteria')

    def test_matched_criteria_need_a_populated_directory(self):
        empty = self.dir / 'criteria'
        empty.mkdir()
        with self.assertRaisesMessage(CommandError, 'criteria_dir'):
            self.rank(self.dir / 'out', '--criteria-mode', 'matched', '--criteria-dir', str(empty))
        self.assertFalse((self.dir / 'out' / 'run.trec').exists())

    def test_excluded_failures_fail_the_command(self):
        data = self.dir / 'broken'
        data.mkdir()
        (data / 'corpus.jsonl').write_text(
            '{"doctor_id": "d1", "title": "Chief Physician"}\n{"doctor_id": "d2"}\n', encoding='utf-8'
        )
        (data / 'queries.jsonl').write_text(
            '{"query_id": "q1", "disease": "asthma", "treatment": "drug therapy"}\n', encoding='utf-8'
        )
        (data / 'qrels.txt').write_text('q1 0 d1 5\nq1 0 d2 0\n', encoding='utf-8')

        with self.assertRaisesMessage(CommandError, '1 candidates failed'):
            call_command(
                'rank', '--backend', 'oracle', '--corpus', data / 'corpus.jsonl', '--queries', data / 'queries.jsonl',
                '--qrels', data / 'qrels.txt', '--output-dir', data / 'out', '--no-cache',
                '--failure-policy', 'exclude', verbosity=0, stdout=StringIO(),
            )
        self.assertEqual([row.doctor_id for row in read_run(data / 'out' / 'run.trec')['q1']], ['d1'])
        self.assertEqual(JobRun.objects.latest('created_at').status, JobRun.Status.PARTIAL)


class ExplainCommandTests(FixtureTestCase):

    def test_rationales_reuse_the_sidecar_labels(self):
        ranked = self.rank(self.dir / 'ranked')
        out = self.dir / 'explained'
        call_command(
            'explain', '--backend', 'oracle', *self.dataset_args(), '--run', ranked / 'run.trec',
            '--output-dir', out, '--top-k', '3', '--no-cache', verbosity=0, stdout=StringIO(),
        )
        rows = [json.loads(line) for line in (out / 'rationales.jsonl').read_text(encoding='utf-8').splitlines()]
        self.assertEqual(len(rows), self.n_queries * 3)

        sidecar = read_sidecar(sidecar_path_for(ranked / 'run.trec'))
        for row in rows:
            expected = sidecar[(row['query_id'], row['doctor_id'])]
            self.assertEqual(row['predicted_label'], expected['predicted_label'])
            self.assertTrue(row['text'].startswith('1.'))

        provenance = json.loads((out / 'provenance.json').read_text(encoding='utf-8'))
        self.assertEqual(provenance['gateway']['label_logits'], 0)
        self.assertEqual(provenance['gateway']['generate_text'], self.n_queries * 3)

    def test_runs_without_sidecar_cannot_be_explained(self):
        ranked = self.rank(self.dir / 'pairwise', '--strategy', 'pairwise')
        with self.assertRaisesMessage(CommandError, 'sidecar'):
            call_command(
                'explain', '--backend', 'oracle', *self.dataset_args(), '--run', ranked / 'run.trec',
                '--output-dir', self.dir / 'explained', '--no-cache', verbosity=0, stdout=StringIO(),
            )
        self.assertEqual(JobRun.objects.latest('created_at').status, JobRun.Status.FAILED)


class CriteriaCommandTests(FixtureTestCase):

    def setUp(self):
        super().setUp()
        self.criteria_dir = self.dir / 'criteria'
        call_command(
            'criteria', 'generate', '--criteria-dir', self.criteria_dir, '--queries', self.paths['queries'],
            '--backend', 'oracle', '--oracle-qrels', self.paths['qrels'], '-n', '2', '--no-cache',
            stdout=StringIO(),
        )
        self.store = CriteriaStore(self.criteria_dir)

    def test_generate_and_select(self):
        pairs = self.store.pairs()
        self.assertEqual(len(pairs), self.n_queries)
        documents = self.store.documents(pairs[0])
        self.assertEqual(len(documents), 2)
        self.assertEqual(self.store.selected(pairs[0]), documents[0])

        call_command('criteria', 'select', '--criteria-dir', self.criteria_dir, '--pair', pairs[0], '--index', '1',
                     stdout=StringIO())
        self.assertEqual(self.store.selected(pairs[0]), documents[1])

    def test_matched_criteria_reach_the_prompt(self):
        out = self.rank(self.dir / 'matched', '--criteria-mode', 'matched', '--criteria-dir', str(self.criteria_dir))
        queries = load_queries(self.paths['queries'])
        selected = self.store.selected_assignment()
        for (query_id, _), row in read_sidecar(sidecar_path_for(out / 'run.trec')).items():
            self.assertEqual(row['criteria_id'], selected[queries[query_id].pair_key].criteria_id)
        tag = next(iter(read_run(out / 'run.trec').values()))[0].tag
        self.assertEqual(tag, 'oracle/pointwise-sum/criteria')

    def test_shuffled_criteria_come_from_other_pairs(self):
        stdout = StringIO()
        call_command('criteria', 'shuffle', '--criteria-dir', self.criteria_dir, '--seed', '1', stdout=stdout)
        self.assertIn('(0 fixed points)', stdout.getvalue())
        self.assertTrue(self.store.assignment_path('shuffled-seed1').exists())

        out = self.rank(self.dir / 'shuffled', '--criteria-mode', 'shuffled', '--criteria-dir', str(self.criteria_dir))
        queries = load_queries(self.paths['queries'])
        for (query_id, _), row in read_sidecar(sidecar_path_for(out / 'run.trec')).items():
            self.assertNotEqual(self.store.get(row['criteria_id']).pair_key, queries[query_id].pair_key)
        self.assertTrue(self.store.assignment_path('shuffled-seed0').exists())

    def test_criteria_with_pairwise_is_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            load_job_config(overrides={
                'strategy': 'pairwise', 'criteria_mode': 'matched', 'criteria_dir': str(self.criteria_dir),
            })
        self.assertEqual(ctx.exception.field, 'criteria_mode')


class DatasetCommandTests(FixtureTestCase):

    def test_fixture_command_is_reproducible(self):
        for name in ('a', 'b'):
            call_command('fixture', '--output-dir', self.dir / name, '--queries', '3', '--docs-per-query', '12',
                         stdout=StringIO())
        for filename in ('corpus.jsonl', 'queries.jsonl', 'qrels.txt', 'pool.jsonl'):
            self.assertEqual((self.dir / 'a' / filename).read_bytes(), (self.dir / 'b' / filename).read_bytes())

    def test_validate_clean_and_broken(self):
        stdout = StringIO()
        call_command('validate', *self.dataset_args(), '--stats', stdout=stdout)
        self.assertIn('Dataset is clean', stdout.getvalue())
        self.assertIn('"judgments": 48', stdout.getvalue())

        with open(self.paths['qrels'], 'a', encoding='utf-8') as handle:
            handle.write('q001 0 d99999 7\n')
        with self.assertRaises(CommandError) as ctx:
            call_command('validate', *self.dataset_args(), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_mine_negatives(self):
        output = self.dir / 'negatives.jsonl'
        sheet = self.dir / 'review.csv'
        call_command(
            'mine_negatives', '--queries', self.paths['queries'], '--qrels', self.paths['qrels'],
            '--pool', self.paths['pool'], '--output', output, '--review-sheet', sheet,
            '--corpus', self.paths['corpus'], stdout=StringIO(),
        )
        rows = [json.loads(line) for line in output.read_text(encoding='utf-8').splitlines()]
        # 10 positives per pair (labels 1-5, two each), 3 of them answered from other pairs
        self.assertEqual(len(rows), self.n_queries * 10)
        self.assertEqual(sum(1 for row in rows if row['source'] == 'cross_pair'), self.n_queries * 3)
        self.assertTrue(sheet.exists())

    def test_cache_command(self):
        cache = self.dir / 'cache'
        self.rank(self.dir / 'ranked', '--cache-dir', str(cache), backend='noise')
        stdout = StringIO()
        call_command('cache', 'stats', '--cache-dir', cache, stdout=stdout)
        self.assertIn(f'entries: {self.n_queries * self.docs_per_query}', stdout.getvalue())

        call_command('cache', 'clear', '--cache-dir', cache, stdout=StringIO())
        self.assertEqual(list(cache.glob('*/*.json')), [])

    def test_fairness_commands(self):
        ranked = self.rank(self.dir / 'ranked')
        output = self.dir / 'disease_sd.json'
        call_command(
            'fairness', 'disease-sd', '--run', ranked / 'run.trec', '--qrels', self.paths['qrels'],
            '--queries', self.paths['queries'], '--repeats', '5', '--per-label', '2', '--output', output,
            stdout=StringIO(),
        )
        disease_report = json.loads(output.read_text(encoding='utf-8'))
        self.assertEqual(disease_report['mean_sd'], 0.0)
        self.assertEqual(disease_report['metadata']['inputs'], {
            'run': file_digest(ranked / 'run.trec'),
            'qrels': file_digest(self.paths['qrels']),
            'queries': file_digest(self.paths['queries']),
        })

        call_command(
            'fairness', 'perturb', '--backend', 'oracle', *self.dataset_args(), '--output-dir', self.dir / 'perturb',
            '--no-cache', '--variants', 'I am male.', 'I am female.', verbosity=0, stdout=StringIO(),
        )
        report = json.loads((self.dir / 'perturb' / 'fairness_perturbation.json').read_text(encoding='utf-8'))
        self.assertEqual(report['deltas'], [{'first': 'I am male.', 'second': 'I am female.', 'delta': 0.0}])
        inputs = report['metadata']['inputs']
        self.assertEqual(inputs['corpus'], file_digest(self.paths['corpus']))
        self.assertEqual(inputs['qrels'], file_digest(self.paths['qrels']))
        self.assertEqual(inputs['queries'], file_digest(self.paths['queries']))
        self.assertEqual(len(report['metadata']['config_digest']), 64)
        self.assertEqual(report['metadata']['tokenizer'], 'reference')


class JobConfigTests(FixtureTestCase):

    def test_document_and_flag_overrides(self):
        document = self.dir / 'job.json'
        document.write_text(json.dumps({
            'backend': {'kind': 'noise', 'max_in_flight': 2},
            'window': {'window_size': 8, 'step_size': 4},
            'labels': 3,
            'corpus': str(self.paths['corpus']),
        }), encoding='utf-8')
        config = load_job_config(document, overrides={'backend_max_in_flight': 6, 'seed': None})
        self.assertEqual(config.backend.max_in_flight, 6)
        self.assertEqual(config.window_plan.describe(), 'w8s4p1')
        self.assertEqual(config.scheme, LabelScheme.reduced(3))
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.digest, load_job_config(document, overrides={'backend_max_in_flight': 6}).digest)

    def test_invalid_window(self):
        with self.assertRaises(ConfigError) as ctx:
            load_job_config(overrides={'window_size': 5, 'step_size': 10})
        self.assertEqual(ctx.exception.field, 'step_size')

    def test_missing_path(self):
        with self.assertRaises(ConfigError) as ctx:
            load_job_config(overrides={'corpus': str(self.dir / 'absent.jsonl')})
        self.assertEqual(ctx.exception.field, 'corpus')

    def test_oracle_defaults_to_the_job_qrels(self):
        config = load_job_config(overrides={'backend_kind': 'oracle', 'qrels': str(self.paths['qrels'])})
        self.assertEqual(config.backend.oracle_qrels_path, str(self.paths['qrels']))
