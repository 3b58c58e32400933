import json
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from unittest.mock import MagicMock, patch

import requests
from django.test import SimpleTestCase

from core.exceptions import (
    BackendError, BackendProtocolError, BackendTimeout, ConfigError, LabelTokenCollision
)
from gateway.backends import HttpCompletionBackend, OracleBackend
from gateway.cache import ResponseCache
from gateway.models import BackendConfig, BackendKind, LogitProvenance, RequestHints, RequestTask
from gateway.services import BackendGateway, extract_label_logits
from gateway.tokenizers import EndpointTokenizer, ReferenceTokenizer
from profiles.models import DoctorProfile, LabelScheme, MedicalQuery
from scoring.prompts import assemble_ranking_prompt
from scoring.services import PointwiseRanker


def http_response(status_code=200, payload=None):
    response = MagicMock()
    response.status_code = status_code
    response.json.return_value = payload or {}
    response.text = json.dumps(payload or {})
    return response


def logprob_payload(top):
    return {'choices': [{'text': '', 'logprobs': {'top_logprobs': [top]}}]}


class ReferenceTokenizerTests(SimpleTestCase):

    def test_tokens_concatenate_to_input(self):
        tokenizer = ReferenceTokenizer()
        text = 'Title: Chief Physician\nExpertise: thoracoscopic surgery, 20 years.'
        self.assertEqual(''.join(tokenizer.tokenize(text)), text)

    def test_first_tokens_of_default_scheme(self):
        tokenizer = ReferenceTokenizer()
        self.assertEqual(
            [tokenizer.first_token(name) for name in LabelScheme.default().names],
            ['Not', 'Low', 'Mid', 'High', 'Top']
        )

    def test_truncate_rejects_non_positive_budget(self):
        with self.assertRaises(ValueError):
            ReferenceTokenizer().truncate('abc', 0)


class ExtractLabelLogitsTests(SimpleTestCase):

    def setUp(self):
        self.scheme = LabelScheme.default()
        self.tokens = ('Not', 'Low', 'Mid', 'High', 'Top')

    def test_missing_labels_are_floored_below_the_top_k(self):
        logits = extract_label_logits({' High': -0.1, ' Top': -2.0, 'the': -3.0}, self.scheme, self.tokens)
        self.assertEqual(logits.values, (-13.0, -13.0, -13.0, -0.1, -2.0))
        self.assertEqual(logits.provenance[0], LogitProvenance.FLOORED)
        self.assertEqual(logits.provenance[3], LogitProvenance.OBSERVED)
        self.assertEqual(logits.floored_count, 3)
        self.assertEqual(logits.predicted_label, 'High')

    def test_whitespace_variants_keep_the_larger_value(self):
        logits = extract_label_logits({'Top': -1.0, ' Top': -0.5}, self.scheme, self.tokens)
        self.assertEqual(logits.values[4], -0.5)

    def test_empty_payload_is_a_protocol_error(self):
        with self.assertRaises(BackendProtocolError):
            extract_label_logits({}, self.scheme, self.tokens)


class GatewayMockBackendTests(SimpleTestCase):

    def setUp(self):
        self.scheme = LabelScheme.default()
        self.qrels = {'q1': {'d%d' % r: r for r in range(6)}}
        self.oracle = BackendGateway(BackendConfig(kind=BackendKind.ORACLE, oracle_qrels=self.qrels))

    def test_label_collision_is_detected(self):
        scheme = LabelScheme.from_names(['Low', 'High', 'Highest'])
        with self.assertRaises(LabelTokenCollision) as ctx:
            self.oracle.label_first_tokens(scheme)
        self.assertEqual(ctx.exception.labels, ('High', 'Highest'))

    def test_oracle_plants_the_judged_label(self):
        expected = {0: 'Not Relevant', 1: 'Low', 2: 'Mid', 3: 'Mid', 4: 'High', 5: 'Top'}
        for relevance, label in expected.items():
            hints = RequestHints(task=RequestTask.RANKING, query_id='q1', doctor_ids=(f'd{relevance}',))
            logits = self.oracle.fetch_label_logits(f'prompt {relevance}', self.scheme, hints)
            self.assertEqual(logits.predicted_label, label)
            self.assertEqual(logits.floored_count, 0)

    def test_oracle_needs_hints(self):
        with self.assertRaises(BackendProtocolError):
            self.oracle.fetch_label_logits('prompt', self.scheme)

    def test_oracle_pairwise_answers(self):
        hints = RequestHints(task=RequestTask.PAIRWISE, query_id='q1', doctor_ids=('d1', 'd4'))
        self.assertEqual(self.oracle.generate_text('pair', 8, hints).text, 'Passage B')
        hints = RequestHints(task=RequestTask.PAIRWISE, query_id='q1', doctor_ids=('d4', 'd1'))
        self.assertEqual(self.oracle.generate_text('pair', 8, hints).text, 'Passage A')

    def test_top_logprobs_smaller_than_scheme_is_rejected(self):
        gateway = BackendGateway(BackendConfig(kind=BackendKind.NOISE, top_logprobs=3))
        with self.assertRaises(ConfigError):
            gateway.fetch_label_logits('prompt', self.scheme)

    def test_noise_is_deterministic_per_seed(self):
        first = BackendGateway(BackendConfig(kind=BackendKind.NOISE, seed=3))
        second = BackendGateway(BackendConfig(kind=BackendKind.NOISE, seed=3))
        other = BackendGateway(BackendConfig(kind=BackendKind.NOISE, seed=4))
        a = first.fetch_label_logits('same prompt', self.scheme)
        self.assertEqual(a, second.fetch_label_logits('same prompt', self.scheme))
        self.assertNotEqual(a.values, other.fetch_label_logits('same prompt', self.scheme).values)
        self.assertTrue(all(-5.0 <= v <= 5.0 for v in a.values))

    def test_generation_respects_max_new_tokens(self):
        gateway = BackendGateway(BackendConfig(kind=BackendKind.NOISE))
        result = gateway.generate_text('write something', 5)
        self.assertLessEqual(ReferenceTokenizer().count(result.text), 5)
        self.assertEqual(result.finish_reason, 'length')

    def test_unknown_kind_is_a_config_error(self):
        with self.assertRaises(ConfigError):
            BackendConfig(kind='telepathy')

    def test_oracle_without_qrels_is_a_config_error(self):
        with self.assertRaises(ConfigError) as ctx:
            BackendConfig(kind=BackendKind.ORACLE)
        self.assertEqual(ctx.exception.field, 'backend.oracle_qrels_path')


class GatewayCacheTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.cache_dir = Path(self.tmp.name) / 'cache'
        self.scheme = LabelScheme.default()
        self.config = BackendConfig(kind=BackendKind.NOISE, seed=1)

    def tearDown(self):
        self.tmp.cleanup()

    def test_second_request_is_served_from_disk(self):
        first = BackendGateway(self.config, cache_dir=self.cache_dir)
        logits = first.fetch_label_logits('cached prompt', self.scheme)
        self.assertEqual(first.stats()['backend_calls'], 1)

        second = BackendGateway(self.config, cache_dir=self.cache_dir)
        self.assertEqual(second.fetch_label_logits('cached prompt', self.scheme), logits)
        stats = second.stats()
        self.assertEqual(stats['backend_calls'], 0)
        self.assertEqual(stats['cache_hits'], 1)
        self.assertEqual(stats['label_logits'], 0)

    def test_records_are_sharded_by_digest_prefix(self):
        gateway = BackendGateway(self.config, cache_dir=self.cache_dir)
        gateway.generate_text('hello', 4)
        records = list(self.cache_dir.glob('*/*.json'))
        self.assertEqual(len(records), 1)
        self.assertEqual(records[0].parent.name, records[0].stem[:2])

    def test_corrupt_record_is_evicted_and_reissued(self):
        gateway = BackendGateway(self.config, cache_dir=self.cache_dir)
        logits = gateway.fetch_label_logits('fragile', self.scheme)
        record = next(self.cache_dir.glob('*/*.json'))
        data = json.loads(record.read_text(encoding='utf-8'))
        data['response']['top_logprobs']['Top'] = 99.0
        record.write_text(json.dumps(data), encoding='utf-8')

        again = BackendGateway(self.config, cache_dir=self.cache_dir)
        self.assertEqual(again.fetch_label_logits('fragile', self.scheme), logits)
        stats = again.stats()
        self.assertEqual(stats['cache_corrupt'], 1)
        self.assertEqual(stats['backend_calls'], 1)

    def test_replay_serves_recorded_responses(self):
        recorder = BackendGateway(self.config, cache_dir=self.cache_dir)
        logits = recorder.fetch_label_logits('recorded', self.scheme)

        replay = BackendGateway(BackendConfig(
            kind=BackendKind.REPLAY, model_id=self.config.identity, replay_dir=str(self.cache_dir)
        ))
        self.assertEqual(replay.fetch_label_logits('recorded', self.scheme), logits)
        with self.assertRaises(BackendProtocolError):
            replay.fetch_label_logits('never recorded', self.scheme)

    def test_oracle_cache_key_includes_hints(self):
        config = BackendConfig(kind=BackendKind.ORACLE, oracle_qrels={'q1': {'d1': 5, 'd2': 0}})
        gateway = BackendGateway(config, cache_dir=self.cache_dir)
        top = gateway.fetch_label_logits('same text', self.scheme, RequestHints(query_id='q1', doctor_ids=('d1',)))
        low = gateway.fetch_label_logits('same text', self.scheme, RequestHints(query_id='q1', doctor_ids=('d2',)))
        self.assertEqual(top.predicted_label, 'Top')
        self.assertEqual(low.predicted_label, 'Not Relevant')


class GatewayConcurrencyTests(SimpleTestCase):

    def test_in_flight_bound_holds_under_more_threads(self):
        gateway = BackendGateway(BackendConfig(kind=BackendKind.NOISE, seed=2, max_in_flight=2))
        execute = gateway.backend.execute
        lock = threading.Lock()
        active = [0]
        peak = [0]

        def slow_execute(request):
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            try:
                time.sleep(0.01)
                return execute(request)
            finally:
                with lock:
                    active[0] -= 1

        gateway.backend.execute = slow_execute
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(lambda i: gateway.generate_text(f'prompt {i}', 4), range(32)))

        self.assertEqual(len(results), 32)
        self.assertLessEqual(peak[0], 2)
        self.assertLessEqual(gateway.peak_in_flight, gateway.config.max_in_flight)
        self.assertGreaterEqual(gateway.peak_in_flight, 1)
        self.assertEqual(gateway.stats()['backend_calls'], 32)

    def test_pointwise_ranking_respects_the_bound(self):
        gateway = BackendGateway(BackendConfig(kind=BackendKind.NOISE, seed=3, max_in_flight=3))
        profiles = [DoctorProfile(f'd{i}', expertise=f'Cardiology {i}') for i in range(20)]
        PointwiseRanker(gateway, LabelScheme.default()).rank(MedicalQuery('q1', 'angina', 'stenting'), profiles)
        self.assertLessEqual(gateway.stats()['peak_in_flight'], 3)
        self.assertEqual(gateway.stats()['label_logits'], 20)


@patch('gateway.transport.time.sleep')
@patch('gateway.transport.requests.post')
class HttpBackendTests(SimpleTestCase):

    def setUp(self):
        self.config = BackendConfig(
            kind=BackendKind.HTTP, model_id='test-model', endpoint_url='http://localhost:8000/v1/completions'
        )
        self.backend = HttpCompletionBackend(self.config)
        self.backend._tokenizer = ReferenceTokenizer()
        self.gateway = BackendGateway(self.config, backend=self.backend)
        self.scheme = LabelScheme.default()

    def test_logprob_request_and_parsing(self, mock_post, mock_sleep):
        mock_post.return_value = http_response(payload=logprob_payload({' Top': -0.2, ' High': -1.7}))
        logits = self.gateway.fetch_label_logits('prompt', self.scheme)
        self.assertEqual(logits.predicted_label, 'Top')
        payload = mock_post.call_args.kwargs['json']
        self.assertEqual(payload['max_tokens'], 1)
        self.assertEqual(payload['temperature'], 0)
        self.assertEqual(payload['logprobs'], 20)

    def test_retries_server_errors(self, mock_post, mock_sleep):
        mock_post.side_effect = [
            http_response(503),
            http_response(payload=logprob_payload({' Low': -0.1})),
        ]
        logits = self.gateway.fetch_label_logits('prompt', self.scheme)
        self.assertEqual(logits.predicted_label, 'Low')
        self.assertEqual(mock_post.call_count, 2)
        mock_sleep.assert_called_once_with(2)

    def test_client_errors_are_not_retried(self, mock_post, mock_sleep):
        mock_post.return_value = http_response(400, {'error': 'bad request'})
        with self.assertRaises(BackendError):
            self.gateway.fetch_label_logits('prompt', self.scheme)
        self.assertEqual(mock_post.call_count, 1)

    def test_timeouts_exhaust_the_attempts(self, mock_post, mock_sleep):
        mock_post.side_effect = requests.exceptions.Timeout()
        with self.assertRaises(BackendTimeout):
            self.gateway.generate_text('prompt', 8)
        self.assertEqual(mock_post.call_count, 3)
        self.assertEqual(mock_sleep.call_count, 2)

    def test_missing_logprobs_is_a_protocol_error(self, mock_post, mock_sleep):
        mock_post.return_value = http_response(payload={'choices': [{'text': 'Top'}]})
        with self.assertRaises(BackendProtocolError):
            self.gateway.fetch_label_logits('prompt', self.scheme)

    def test_completion_finish_reason(self, mock_post, mock_sleep):
        mock_post.return_value = http_response(payload={'choices': [{'text': ' Passage A', 'finish_reason': 'length'}]})
        result = self.gateway.generate_text('prompt', 2)
        self.assertEqual(result.text, ' Passage A')
        self.assertEqual(result.finish_reason, 'length')

    @patch.dict('os.environ', {'MEDRANK_API_KEY': 'secret'})
    def test_credential_goes_into_the_header(self, mock_post, mock_sleep):
        mock_post.return_value = http_response(payload=logprob_payload({' Mid': -0.3}))
        self.gateway.fetch_label_logits('prompt', self.scheme)
        self.assertEqual(mock_post.call_args.kwargs['headers']['Authorization'], 'Bearer secret')

    def test_malformed_url_is_not_retried(self, mock_post, mock_sleep):
        mock_post.side_effect = requests.exceptions.InvalidURL('no host')
        with self.assertRaises(BackendError) as ctx:
            self.gateway.generate_text('prompt', 8)
        self.assertIsInstance(ctx.exception.__cause__, requests.exceptions.InvalidURL)
        self.assertEqual(mock_post.call_count, 1)
        mock_sleep.assert_not_called()

    def test_dropped_streams_are_retried(self, mock_post, mock_sleep):
        mock_post.side_effect = [
            requests.exceptions.ChunkedEncodingError(),
            http_response(payload={'choices': [{'text': ' Passage B', 'finish_reason': 'stop'}]}),
        ]
        self.assertEqual(self.gateway.generate_text('prompt', 4).text, ' Passage B')
        self.assertEqual(mock_post.call_count, 2)


def routed(routes):
    """requests.post stand-in answering by URL suffix; each route maps the JSON payload to a response."""
    def post(url, **kwargs):
        for suffix, answer in routes.items():
            if url.endswith(suffix):
                return answer(kwargs['json'])
        raise AssertionError(f"unexpected URL {url}")
    return post


def absent(payload):
    return http_response(404, {'detail': 'Not Found'})


@patch('gateway.transport.time.sleep')
@patch('gateway.transport.requests.post')
class EndpointTokenizerTests(SimpleTestCase):

    url = 'http://localhost:8000/v1/completions'

    def test_missing_route_falls_back_to_character_budget(self, mock_post, mock_sleep):
        mock_post.side_effect = routed({'/tokenize': absent})
        tokenizer = EndpointTokenizer(self.url, 'test-model')
        self.assertEqual(tokenizer.count('abcdefg'), 3)
        self.assertFalse(tokenizer.available)
        self.assertEqual(tokenizer.name, 'char_budget')
        self.assertEqual(tokenizer.first_token('Not Relevant'), 'Not')
        tokenizer.count('again')
        self.assertEqual(mock_post.call_count, 1)
        mock_sleep.assert_not_called()

    def test_missing_detokenize_route_also_falls_back(self, mock_post, mock_sleep):
        mock_post.side_effect = routed({
            '/tokenize': lambda payload: http_response(payload={'tokens': [9]}),
            '/detokenize': absent,
        })
        tokenizer = EndpointTokenizer(self.url, 'test-model')
        self.assertEqual(tokenizer.first_token('High'), 'High')
        self.assertFalse(tokenizer.available)

    def test_connection_errors_are_raised_not_absorbed(self, mock_post, mock_sleep):
        mock_post.side_effect = requests.exceptions.ConnectionError()
        tokenizer = EndpointTokenizer(self.url, 'test-model')
        with self.assertRaises(BackendError):
            tokenizer.count('abcdefg')
        self.assertEqual(mock_post.call_count, 3)
        self.assertIsNone(tokenizer.available)

    def test_transient_server_error_is_retried_before_deciding(self, mock_post, mock_sleep):
        mock_post.side_effect = [
            http_response(503),
            http_response(payload={'tokens': [7]}),
            http_response(payload={'prompt': 'High'}),
            http_response(payload={'tokens': [1, 2], 'count': 2}),
        ]
        tokenizer = EndpointTokenizer(self.url, 'test-model')
        self.assertEqual(tokenizer.count('two tokens'), 2)
        self.assertTrue(tokenizer.available)
        self.assertEqual(tokenizer.name, 'endpoint')
        mock_sleep.assert_called_once_with(2)

    def test_uses_server_routes(self, mock_post, mock_sleep):
        mock_post.side_effect = routed({
            '/tokenize': lambda payload: http_response(payload={'tokens': [1, 2, 3], 'count': 3}),
            '/detokenize': lambda payload: http_response(payload={'prompt': 'High'}),
        })
        tokenizer = EndpointTokenizer(self.url, 'test-model')
        self.assertEqual(tokenizer.count('three tokens here'), 3)
        self.assertEqual(mock_post.call_count, 3)
        self.assertEqual(mock_post.call_args_list[0].args[0], 'http://localhost:8000/tokenize')
        self.assertEqual(mock_post.call_args_list[1].args[0], 'http://localhost:8000/detokenize')


@patch('gateway.transport.time.sleep')
@patch('gateway.transport.requests.post')
class HttpRecordReplayTests(SimpleTestCase):
    """An HTTP server without tokenizer routes, recorded to a cache and replayed offline."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.cache_dir = Path(self.tmp.name) / 'cache'
        self.config = BackendConfig(
            kind=BackendKind.HTTP, model_id='test-model', endpoint_url='http://localhost:8000/v1/completions'
        )
        self.scheme = LabelScheme.default()
        self.query = MedicalQuery('q1', 'lung cancer', 'surgical treatment')
        self.profiles = [
            DoctorProfile('d1', specialty='Thoracic Surgery', introduction='Performs lobectomies. ' * 1000),
            DoctorProfile('d2', specialty='Dermatology', expertise='Eczema and psoriasis.'),
        ]

    def tearDown(self):
        self.tmp.cleanup()

    def completions(self, payload):
        if 'Thoracic' in payload['prompt']:
            top = {' High': -0.1, ' Mid': -2.5, ' Top': -3.0, ' Low': -4.2, ' The': -5.0}
        else:
            top = {' Not': -0.2, ' Low': -1.9, ' Mid': -3.3, ' the': -4.0}
        return http_response(payload=logprob_payload(top))

    def routes(self):
        return routed({'/tokenize': absent, '/detokenize': absent, '/v1/completions': self.completions})

    def test_labels_match_whole_words_without_tokenize_route(self, mock_post, mock_sleep):
        mock_post.side_effect = self.routes()
        gateway = BackendGateway(self.config)
        prompt = assemble_ranking_prompt(self.query, 'Specialty: Thoracic Surgery', self.scheme).text
        logits = gateway.fetch_label_logits(prompt, self.scheme)
        self.assertEqual(gateway.label_first_tokens(self.scheme), ('Not', 'Low', 'Mid', 'High', 'Top'))
        self.assertEqual(logits.predicted_label, 'High')
        self.assertEqual(logits.floored_count, 1)
        self.assertEqual(gateway.tokenizer_name, 'char_budget')
        mock_sleep.assert_not_called()

    def test_replay_rebuilds_the_recorded_tokenizer(self, mock_post, mock_sleep):
        mock_post.side_effect = self.routes()
        recorder = BackendGateway(self.config, cache_dir=self.cache_dir)
        recorded = PointwiseRanker(recorder, self.scheme).rank(self.query, self.profiles)
        self.assertEqual(recorded.doctor_ids, ('d1', 'd2'))
        self.assertEqual(ResponseCache(self.cache_dir).recorded_tokenizer('test-model'), 'char_budget')
        prompts = [
            json.loads(path.read_text(encoding='utf-8'))['request']['prompt']
            for path in self.cache_dir.glob('*/*.json')
        ]
        self.assertTrue(all(len(prompt) < 10000 for prompt in prompts))

        mock_post.reset_mock()
        replay = BackendGateway(BackendConfig(
            kind=BackendKind.REPLAY, model_id='test-model', replay_dir=str(self.cache_dir)
        ))
        replayed = PointwiseRanker(replay, self.scheme).rank(self.query, self.profiles)
        self.assertEqual(replay.tokenizer_name, 'char_budget')
        self.assertEqual(
            [(e.doctor_id, e.score, e.predicted_label) for e in replayed.entries],
            [(e.doctor_id, e.score, e.predicted_label) for e in recorded.entries],
        )
        self.assertEqual(replay.stats()['backend_calls'], 2)
        mock_post.assert_not_called()

    def test_cache_refuses_a_second_tokenizer_for_one_model(self, mock_post, mock_sleep):
        mock_post.side_effect = self.routes()
        BackendGateway(self.config, cache_dir=self.cache_dir).fetch_label_logits('first', self.scheme)

        mixed = BackendGateway(
            BackendConfig(
                kind=BackendKind.HTTP, model_id='test-model',
                endpoint_url='http://localhost:8000/v1/completions', tokenizer='reference',
            ),
            cache_dir=self.cache_dir,
        )
        calls = mock_post.call_count
        with self.assertRaises(ConfigError) as ctx:
            mixed.fetch_label_logits('second', self.scheme)
        self.assertEqual(ctx.exception.field, 'cache_dir')
        self.assertEqual(mock_post.call_count, calls)

    def test_unknown_tokenizer_is_a_config_error(self, mock_post, mock_sleep):
        with self.assertRaises(ConfigError) as ctx:
            BackendConfig(kind=BackendKind.NOISE, tokenizer='sentencepiece')
        self.assertEqual(ctx.exception.field, 'backend.tokenizer')
        mock_post.assert_not_called()


class OraclePlantedIndexTests(SimpleTestCase):

    def test_indices_for_reduced_schemes(self):
        self.assertEqual([OracleBackend.planted_index(r, 5) for r in range(6)], [0, 1, 2, 2, 3, 4])
        self.assertEqual([OracleBackend.planted_index(r, 2) for r in range(6)], [0, 0, 0, 1, 1, 1])
