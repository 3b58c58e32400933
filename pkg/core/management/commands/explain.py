"""
أمر توليد التبريرات
Generate evaluation rationales for a ranked run from its label sidecar.
"""
from django.core.management.base import BaseCommand, CommandError

from core.config import add_job_arguments, load_job_config, overrides_from_options
from core.exceptions import MedRankError
from core.services import run_explain_job


class Command(BaseCommand):
    help = 'Generate rationales for the predicted labels of a pointwise run'

    def add_arguments(self, parser):
        add_job_arguments(parser)
        parser.add_argument('--run', required=True, help='TREC run written by the rank command')
        parser.add_argument('--top-k', type=int, help='explain only the top k doctors of each query')

    def handle(self, *args, **options):
        try:
            config = load_job_config(
                options.get('config'),
                overrides_from_options(options),
                required=('corpus', 'queries', 'run', 'output_dir'),
            )
            outcome = run_explain_job(config, progress=options['verbosity'] >= 1)
        except MedRankError as e:
            raise CommandError(str(e))

        self.stdout.write(self.style.SUCCESS(
            f"{outcome.provenance['rationales']} rationales written to {outcome.outputs['rationales']}"
        ))
