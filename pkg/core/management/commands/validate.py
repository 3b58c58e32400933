"""
أمر فحص البيانات
Check corpus, queries and qrels for consistency.
"""
import json

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import MedRankError
from core.models import JobRun
from core.services import tracked_job
from dataset_tools.services import dataset_statistics, validate_dataset
from profiles.services import load_corpus, load_qrels, load_queries


class Command(BaseCommand):
    help = 'Validate a dataset; exit status 0 clean, 1 warnings, 2 errors'

    def add_arguments(self, parser):
        parser.add_argument('--corpus', required=True)
        parser.add_argument('--queries', required=True)
        parser.add_argument('--qrels', required=True)
        parser.add_argument('--stats', action='store_true', help='print dataset statistics when the data is clean')

    def handle(self, *args, **options):
        try:
            with tracked_job(JobRun.Command.VALIDATE) as job:
                report = validate_dataset(options['corpus'], options['queries'], options['qrels'])
                job.mark_finished(
                    {'status': report.status, 'findings': [str(f) for f in report.findings]},
                    warnings_count=len(report.warnings),
                    errors_count=len(report.errors),
                )
        except MedRankError as e:
            raise CommandError(str(e), returncode=2)

        for finding in report.findings:
            style = self.style.ERROR if finding in report.errors else self.style.WARNING
            self.stdout.write(style(str(finding)))

        if report.exit_code:
            raise CommandError(
                f"{len(report.errors)} errors, {len(report.warnings)} warnings", returncode=report.exit_code
            )

        if options['stats']:
            statistics = dataset_statistics(
                load_corpus(options['corpus']), load_queries(options['queries']), load_qrels(options['qrels'])
            )
            statistics.pop('label_histogram_per_query')
            self.stdout.write(json.dumps(statistics, indent=2))
        self.stdout.write(self.style.SUCCESS('Dataset is clean'))
