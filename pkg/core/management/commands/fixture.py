"""
أمر توليد بيانات اصطناعية
Write a deterministic synthetic corpus, queries, qrels and pool.
"""
from django.core.management.base import BaseCommand, CommandError

from core.models import JobRun
from core.services import tracked_job
from core.utils import file_digest
from dataset_tools.services import generate_synthetic_fixture, write_fixture


class Command(BaseCommand):
    help = 'Generate a synthetic doctor-ranking dataset'

    def add_arguments(self, parser):
        parser.add_argument('--output-dir', required=True)
        parser.add_argument('--seed', type=int, default=7)
        parser.add_argument('--queries', type=int, default=38)
        parser.add_argument('--docs-per-query', type=int, default=114)
        parser.add_argument('--levels', type=int, nargs='+', default=[0, 1, 2, 3, 4, 5])

    def handle(self, *args, **options):
        try:
            with tracked_job(JobRun.Command.FIXTURE, output_dir=options['output_dir']) as job:
                fixture = generate_synthetic_fixture(
                    options['seed'], options['queries'], options['docs_per_query'], options['levels']
                )
                paths = write_fixture(options['output_dir'], fixture)
                digests = {name: file_digest(path) for name, path in paths.items()}
                job.mark_finished({'seed': options['seed'], 'files': {k: str(p) for k, p in paths.items()}, 'digests': digests})
        except ValueError as e:
            raise CommandError(str(e))

        for name, path in paths.items():
            self.stdout.write(f"{name}: {path} sha256={digests[name]}")
        self.stdout.write(self.style.SUCCESS(
            f"{len(fixture.queries)} queries, {len(fixture.corpus)} doctors, {len(fixture.qrels)} judgments"
        ))
