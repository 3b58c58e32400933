import math
from itertools import permutations, product

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import ConfigError, MedRankError
from comparison.models import PairPreference, WindowPlan
from comparison.services import (
    ListwiseRanker, PairwiseRanker, parse_pair_answer, parse_permutation, repair_permutation
)
from gateway.models import BackendConfig, BackendKind
from gateway.services import BackendGateway
from profiles.models import DoctorProfile, MedicalQuery

QUERY = MedicalQuery('q1', 'gastric cancer', 'chemotherapy')


def oracle_for(relevances):
    qrels = {'q1': {f'd{i:03d}': rel for i, rel in enumerate(relevances)}}
    return BackendGateway(BackendConfig(kind=BackendKind.ORACLE, oracle_qrels=qrels))


def profiles_for(relevances):
    return [DoctorProfile(f'd{i:03d}', expertise=f'Oncology practice {i}') for i in range(len(relevances))]


def expected_order(relevances):
    ids = [f'd{i:03d}' for i in range(len(relevances))]
    return tuple(sorted(ids, key=lambda d: (-relevances[int(d[1:])], d)))


class PairAnswerParsingTests(SimpleTestCase):

    def test_answers(self):
        self.assertEqual(parse_pair_answer('Passage A'), 'A')
        self.assertEqual(parse_pair_answer(' passage b is better'), 'B')
        self.assertEqual(parse_pair_answer('B'), 'B')
        self.assertIsNone(parse_pair_answer('I cannot decide'))


class PairwiseCompareTests(SimpleTestCase):

    def test_agreement_and_ties(self):
        gateway = oracle_for([3, 1, 1])
        ranker = PairwiseRanker(gateway)
        a, b, c = profiles_for([3, 1, 1])

        verdict = ranker.compare(QUERY, a, b)
        self.assertEqual(verdict.preference, PairPreference.FIRST_BETTER)
        self.assertEqual((verdict.forward, verdict.backward), ('A', 'B'))

        self.assertEqual(ranker.compare(QUERY, b, a).preference, PairPreference.SECOND_BETTER)

        tie = ranker.compare(QUERY, b, c)
        self.assertEqual(tie.preference, PairPreference.TIE)
        self.assertEqual((tie.forward, tie.backward), ('A', 'A'))
        self.assertEqual(gateway.stats()['generate_text'], 6)

    def test_swapping_arguments_inverts_the_verdict(self):
        profiles = profiles_for(range(6))
        for seed in range(4):
            ranker = PairwiseRanker(BackendGateway(BackendConfig(kind=BackendKind.NOISE, seed=seed)))
            for a, b in permutations(profiles, 2):
                forward = ranker.compare(QUERY, a, b)
                backward = ranker.compare(QUERY, b, a)
                self.assertEqual(backward, forward.inverted())
                self.assertEqual(
                    forward.preference == PairPreference.FIRST_BETTER,
                    backward.preference == PairPreference.SECOND_BETTER
                )

    def test_self_comparison_is_rejected(self):
        profile = profiles_for([1])[0]
        with self.assertRaises(MedRankError):
            PairwiseRanker(oracle_for([1])).compare(QUERY, profile, profile)


class PairwiseHeapsortTests(SimpleTestCase):

    def assert_oracle_order(self, relevances):
        ranked = PairwiseRanker(oracle_for(relevances)).rank(QUERY, profiles_for(relevances))
        self.assertEqual(ranked.doctor_ids, expected_order(relevances), msg=str(relevances))

    def test_every_small_input(self):
        for size in range(2, 9):
            for relevances in product(range(3), repeat=size):
                self.assert_oracle_order(list(relevances))

    def test_every_strict_order_of_six(self):
        for relevances in permutations(range(6)):
            self.assert_oracle_order(list(relevances))

    def test_seeded_larger_inputs(self):
        rng = np.random.default_rng(11)
        for size in (7, 8):
            for _ in range(100):
                self.assert_oracle_order([int(r) for r in rng.integers(0, 6, size=size)])

    def test_comparison_budget(self):
        size = 100
        rng = np.random.default_rng(5)
        relevances = [int(r) for r in rng.integers(0, 6, size=size)]
        gateway = oracle_for(relevances)
        ranked = PairwiseRanker(gateway).rank(QUERY, profiles_for(relevances))
        self.assertEqual(ranked.doctor_ids, expected_order(relevances))
        self.assertLessEqual(gateway.stats()['backend_calls'], 6 * size * math.log2(size))

    def test_single_candidate(self):
        ranked = PairwiseRanker(oracle_for([2])).rank(QUERY, profiles_for([2]))
        self.assertEqual(ranked.doctor_ids, ('d000',))


class ListwiseTests(SimpleTestCase):

    def test_window_plan_validation(self):
        with self.assertRaises(ConfigError) as ctx:
            WindowPlan(window_size=10, step_size=20)
        self.assertEqual(ctx.exception.field, 'step_size')
        with self.assertRaises(ConfigError):
            WindowPlan(passes=0)
        self.assertEqual(WindowPlan().describe(), 'w20s10p1')

    def test_sliding_windows_bring_the_best_to_the_top(self):
        rng = np.random.default_rng(3)
        relevances = [int(r) for r in rng.integers(0, 6, size=100)]
        gateway = oracle_for(relevances)
        ranker = ListwiseRanker(gateway, WindowPlan(20, 10, 1))
        ranked = ranker.rank(QUERY, profiles_for(relevances))

        self.assertEqual(ranker.windows, 9)
        self.assertEqual(ranker.repairs, 0)
        self.assertEqual(ranked.doctor_ids[:10], expected_order(relevances)[:10])
        self.assertEqual(sorted(ranked.doctor_ids), sorted(expected_order(relevances)))

    def test_window_larger_than_list(self):
        relevances = [0, 5, 2]
        ranker = ListwiseRanker(oracle_for(relevances), WindowPlan(20, 10, 1))
        ranked = ranker.rank(QUERY, profiles_for(relevances))
        self.assertEqual(ranker.windows, 1)
        self.assertEqual(ranked.doctor_ids, ('d001', 'd002', 'd000'))

    def test_single_candidate_still_issues_one_window(self):
        gateway = oracle_for([4])
        ranker = ListwiseRanker(gateway, WindowPlan(20, 10, 1))
        ranked = ranker.rank(QUERY, profiles_for([4]))
        self.assertEqual(ranked.doctor_ids, ('d000',))
        self.assertEqual(ranker.windows, 1)
        self.assertEqual(gateway.stats()['generate_text'], 1)

    def test_no_candidates_issue_no_window(self):
        gateway = oracle_for([])
        ranker = ListwiseRanker(gateway, WindowPlan(20, 10, 1))
        self.assertEqual(len(ranker.rank(QUERY, [])), 0)
        self.assertEqual(gateway.stats()['generate_text'], 0)

    def test_disjoint_windows_keep_items_in_place(self):
        profiles = profiles_for([0] * 45)
        ids = [profile.doctor_id for profile in profiles]
        blocks = [(35, 45), (25, 35), (15, 25), (5, 15), (0, 5)]
        for seed in range(3):
            gateway = BackendGateway(BackendConfig(kind=BackendKind.NOISE, seed=seed))
            ranker = ListwiseRanker(gateway, WindowPlan(10, 10, 1))
            ranked = ranker.rank(QUERY, profiles).doctor_ids
            self.assertEqual(ranker.windows, len(blocks))
            self.assertNotEqual(list(ranked), ids)
            for start, end in blocks:
                self.assertEqual(sorted(ranked[start:end]), ids[start:end])


class PermutationRepairTests(SimpleTestCase):

    def test_parse(self):
        self.assertEqual(parse_permutation('[2] > [1] > [3]', 3), [1, 0, 2])

    def test_repair_examples(self):
        self.assertEqual(repair_permutation([1, 1, 7, -1], 3), [1, 0, 2])
        self.assertEqual(repair_permutation([], 2), [0, 1])

    def test_repair_always_yields_a_permutation(self):
        rng = np.random.default_rng(99)
        for _ in range(1000):
            size = int(rng.integers(1, 25))
            raw = [int(x) for x in rng.integers(-3, size + 3, size=int(rng.integers(0, 2 * size + 1)))]
            repaired = repair_permutation(raw, size)
            self.assertEqual(sorted(repaired), list(range(size)))

            kept = []
            for index in raw:
                if 0 <= index < size and index not in kept:
                    kept.append(index)
            self.assertEqual(repaired[:len(kept)], kept)
