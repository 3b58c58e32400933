"""
أمر ترتيب الأطباء
Rank the judged candidates of every query and write a TREC run.
"""
from django.core.management.base import BaseCommand, CommandError

from core.config import add_job_arguments, load_job_config, overrides_from_options
from core.exceptions import MedRankError
from core.services import run_rank_job


class Command(BaseCommand):
    help = 'Rank candidate doctors for every query (pointwise, pairwise or listwise)'

    def add_arguments(self, parser):
        add_job_arguments(parser)

    def handle(self, *args, **options):
        try:
            config = load_job_config(
                options.get('config'),
                overrides_from_options(options),
                required=('corpus', 'queries', 'qrels', 'output_dir'),
            )
            self.stdout.write(self.style.NOTICE(
                f"Ranking with {config.backend.identity} ({config.strategy}, {config.scheme.size} labels)"
            ))
            outcome = run_rank_job(config, progress=options['verbosity'] >= 1)
        except MedRankError as e:
            raise CommandError(str(e))

        gateway = outcome.provenance['gateway']
        self.stdout.write(
            f"backend calls: {gateway['backend_calls']}, cache hits: {gateway['cache_hits']}, "
            f"cache misses: {gateway['cache_misses']}"
        )
        if outcome.provenance['failures']:
            raise CommandError(
                f"{len(outcome.provenance['failures'])} candidates failed and were excluded; "
                f"see {outcome.outputs['provenance']}"
            )
        self.stdout.write(self.style.SUCCESS(f"Run written to {outcome.outputs['run']}"))
