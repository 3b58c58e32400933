"""
أمر تحليل العدالة
Disease-level NDCG spread and sensitive-prefix perturbation.
"""
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from core.config import add_job_arguments, load_job_config, overrides_from_options
from core.exceptions import MedRankError
from core.models import JobRun
from core.services import build_context, build_gateway, input_digests, select_queries, tracked_job
from core.utils import file_digest
from evaluation.models import GainMode
from evaluation.services import fairness_disease_sd, fairness_perturbation, group_by_disease
from profiles.services import load_qrels, load_queries
from scoring.runs import read_run


class Command(BaseCommand):
    help = 'Fairness analyses: disease-sd | perturb'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)

        disease = subparsers.add_parser('disease-sd', help='spread of NDCG@10 across diseases')
        disease.add_argument('--run', required=True)
        disease.add_argument('--qrels', required=True)
        disease.add_argument('--queries', required=True)
        disease.add_argument('--repeats', type=int, default=1000)
        disease.add_argument('--per-label', type=int, default=5)
        disease.add_argument('--levels', type=int, nargs='+', default=[1, 2, 3, 4, 5])
        disease.add_argument('--seed', type=int, default=0)
        disease.add_argument('--gain', choices=GainMode.values, default=GainMode.EXPONENTIAL.value)
        disease.add_argument('--output', help='JSON report path')

        perturb = subparsers.add_parser('perturb', help='re-rank with sensitive query prefixes')
        add_job_arguments(perturb)
        perturb.add_argument('--variants', nargs='+', required=True, help='prefixes, e.g. "I am male." "I am female."')
        perturb.add_argument('--output', help='JSON report path (default: <output-dir>/fairness_perturbation.json)')

    def handle(self, *args, **options):
        try:
            if options['action'] == 'disease-sd':
                report, output = self.handle_disease_sd(options)
            else:
                report, output = self.handle_perturb(options)
        except MedRankError as e:
            raise CommandError(str(e))
        self.stdout.write(report.to_text())
        if output:
            self.stdout.write(self.style.SUCCESS(f"Report written to {output}"))

    def handle_disease_sd(self, options):
        output = Path(options['output']) if options['output'] else None
        with tracked_job(JobRun.Command.FAIRNESS, output_dir=output.parent if output else '') as job:
            grouped = group_by_disease(
                read_run(options['run']), load_qrels(options['qrels']), load_queries(options['queries'])
            )
            report = fairness_disease_sd(
                grouped,
                repeats=options['repeats'],
                per_label=options['per_label'],
                label_levels=tuple(options['levels']),
                seed=options['seed'],
                gain_mode=options['gain'],
            )
            report.metadata['inputs'] = {
                name: file_digest(options[name]) for name in ('run', 'qrels', 'queries')
            }
            if output:
                report.write_json(output)
            job.mark_finished(report.to_dict())
        return report, output

    def handle_perturb(self, options):
        config = load_job_config(
            options.get('config'),
            overrides_from_options(options),
            required=('corpus', 'queries', 'qrels', 'output_dir'),
        )
        output = Path(options['output'] or Path(config.output_dir) / 'fairness_perturbation.json')
        gateway = build_gateway(config)
        with tracked_job(JobRun.Command.FAIRNESS, config.digest, gateway.identity, config.output_dir) as job:
            context = build_context(config, gateway)
            queries = select_queries(config, load_queries(config.queries_path))
            report = fairness_perturbation(queries, options['variants'], context.as_ranker(), context.qrels)
            report.metadata['gateway'] = gateway.stats()
            report.metadata['inputs'] = input_digests(config)
            report.metadata['config_digest'] = config.digest
            report.metadata['tokenizer'] = gateway.tokenizer_name
            report.write_json(output)
            job.mark_finished(report.to_dict(), warnings_count=len(context.warnings))
        return report, output
