"""
أمر استخراج العينات السلبية الصعبة
Mine hard negatives for every pair from a first-stage pool.
"""
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import MedRankError
from core.models import JobRun
from core.services import tracked_job
from core.utils import file_digest
from dataset_tools.models import MiningParams, NegativeSource
from dataset_tools.services import load_pool, mine_hard_negatives, write_mined_negatives, write_review_sheet
from profiles.services import load_corpus, load_qrels, load_queries


class Command(BaseCommand):
    help = 'Mine hard negatives (1:1 with positives) from a reranker-scored pool'

    def add_arguments(self, parser):
        parser.add_argument('--queries', required=True)
        parser.add_argument('--qrels', required=True)
        parser.add_argument('--pool', required=True, help='pool JSONL with reranker scores')
        parser.add_argument('--output', required=True, help='mined negatives JSONL')
        parser.add_argument('--review-sheet', help='CSV for manual review (needs --corpus)')
        parser.add_argument('--corpus')
        parser.add_argument('--positive-min-label', type=int, default=1)
        parser.add_argument('--min-profile-tokens', type=int, default=1024)
        parser.add_argument('--top-exclude', type=float, default=0.01)
        parser.add_argument('--replacement', type=float, default=0.30)
        parser.add_argument('--cross-min-label', type=int, default=4)
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **options):
        if options['review_sheet'] and not options['corpus']:
            raise CommandError('--review-sheet needs --corpus')
        output = Path(options['output'])
        try:
            params = MiningParams(
                min_profile_tokens=options['min_profile_tokens'],
                top_exclude_fraction=options['top_exclude'],
                replacement_fraction=options['replacement'],
                cross_pair_min_label=options['cross_min_label'],
                seed=options['seed'],
            )
            with tracked_job(JobRun.Command.MINE_NEGATIVES, output_dir=output.parent) as job:
                queries = load_queries(options['queries'])
                qrels = load_qrels(options['qrels'])
                pool = load_pool(options['pool'])

                positives = {}
                for query_id, query in queries.items():
                    judged = qrels.get(query_id, {})
                    positives.setdefault(query.pair_key, []).extend(
                        (doctor_id, label) for doctor_id, label in sorted(judged.items())
                        if label >= options['positive_min_label']
                    )

                mined = {}
                for pair_key in sorted(positives):
                    mined[pair_key] = mine_hard_negatives(
                        pair_key,
                        [doctor_id for doctor_id, _ in positives[pair_key]],
                        pool.get(pair_key, []),
                        positives,
                        params,
                    )
                write_mined_negatives(output, mined, params)
                if options['review_sheet']:
                    write_review_sheet(options['review_sheet'], mined, load_corpus(options['corpus']))

                cross = sum(1 for negatives in mined.values() for n in negatives if n.source == NegativeSource.CROSS_PAIR)
                total = sum(len(negatives) for negatives in mined.values())
                job.mark_finished({
                    'params': params.to_dict(),
                    'pairs': len(mined),
                    'negatives': total,
                    'cross_pair': cross,
                    'inputs': {name: file_digest(options[name]) for name in ('queries', 'qrels', 'pool')},
                })
        except MedRankError as e:
            raise CommandError(str(e))

        self.stdout.write(self.style.SUCCESS(
            f"Mined {total} negatives ({cross} cross-pair) for {len(mined)} pairs into {output}"
        ))
