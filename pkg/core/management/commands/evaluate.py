"""
أمر تقييم ملف التشغيل
Evaluate a TREC run against graded judgments.
"""
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import MedRankError
from core.models import JobRun
from core.services import tracked_job
from evaluation.models import GainMode, RecallMode
from evaluation.services import evaluate_run, score_distribution
from profiles.services import load_qrels
from scoring.runs import read_run


class Command(BaseCommand):
    help = 'Compute NDCG@k and Recall@k of a run'

    def add_arguments(self, parser):
        parser.add_argument('--run', required=True)
        parser.add_argument('--qrels', required=True)
        parser.add_argument('--k', type=int, nargs='+', default=[10])
        parser.add_argument('--gain', choices=GainMode.values, default=GainMode.EXPONENTIAL.value)
        parser.add_argument('--recall', choices=RecallMode.values, default=RecallMode.STANDARD.value)
        parser.add_argument('--output', help='JSON report path (default: <run>.eval.json)')
        parser.add_argument('--excel', help='also write the report as an Excel workbook')
        parser.add_argument('--by-label', action='store_true', help='print score statistics per true label')

    def handle(self, *args, **options):
        output = Path(options['output'] or f"{options['run']}.eval.json")
        try:
            with tracked_job(JobRun.Command.EVALUATE, output_dir=output.parent) as job:
                report = evaluate_run(options['run'], options['qrels'], options['k'], options['gain'], options['recall'])
                report.write_json(output)
                if options['excel']:
                    report.write_excel(options['excel'])
                job.mark_finished(report.metadata, warnings_count=len(report.skipped_queries))
        except MedRankError as e:
            raise CommandError(str(e))

        self.stdout.write(report.to_text())
        if options['by_label']:
            distribution = score_distribution(read_run(options['run']), load_qrels(options['qrels']))
            self.stdout.write(distribution.to_string(float_format=lambda v: f"{v:.4f}"))
        self.stdout.write(self.style.SUCCESS(f"Report written to {output}"))
