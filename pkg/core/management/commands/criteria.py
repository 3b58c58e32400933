"""
أمر إدارة معايير الترتيب
Generate, propagate, select and shuffle ranking criteria documents.
"""
from django.core.management.base import BaseCommand, CommandError

from core.config import add_backend_arguments, load_job_config, overrides_from_options
from core.exceptions import MedRankError
from core.models import JobRun
from core.services import build_gateway, tracked_job
from explain.models import CriteriaMode
from explain.services import CriteriaService, shuffle_criteria_assignment
from explain.store import CriteriaStore
from profiles.models import make_pair_key
from profiles.services import load_queries


class Command(BaseCommand):
    help = 'Manage ranking criteria: generate | oneshot | select | shuffle'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)

        generate = subparsers.add_parser('generate', help='generate candidate criteria per pair')
        add_backend_arguments(generate)
        self._add_pair_arguments(generate)
        generate.add_argument('-n', '--candidates', type=int, default=3, help='documents per pair (default: 3)')
        generate.add_argument('--interactive', action='store_true', help='choose the selected document by hand')
        generate.add_argument('--criteria-budget', type=int)

        oneshot = subparsers.add_parser('oneshot', help='propagate a selected exemplar to pairs without criteria')
        add_backend_arguments(oneshot)
        self._add_pair_arguments(oneshot)
        oneshot.add_argument('--exemplar', help='criteria_id of the exemplar (default: first selected document)')
        oneshot.add_argument('--criteria-budget', type=int)

        select = subparsers.add_parser('select', help='record the chosen document of a pair')
        select.add_argument('--criteria-dir', required=True)
        select.add_argument('--pair', required=True, help='pair key, e.g. "(lung cancer, surgical treatment)"')
        group = select.add_mutually_exclusive_group(required=True)
        group.add_argument('--criteria-id')
        group.add_argument('--index', type=int)

        shuffle = subparsers.add_parser('shuffle', help='write a cross-pair assignment manifest')
        shuffle.add_argument('--criteria-dir', required=True)
        shuffle.add_argument('--seed', type=int, default=0)
        shuffle.add_argument('--name', help='manifest name (default: shuffled-seed<seed>)')

    @staticmethod
    def _add_pair_arguments(parser):
        parser.add_argument('--criteria-dir', required=True)
        parser.add_argument('--queries', help='queries JSONL; every distinct pair is processed')
        parser.add_argument('--disease')
        parser.add_argument('--treatment')

    def handle(self, *args, **options):
        try:
            getattr(self, f"handle_{options['action']}")(options)
        except MedRankError as e:
            raise CommandError(str(e))

    # ------------------------------------------------------------------

    def _pairs(self, options):
        if options.get('disease') and options.get('treatment'):
            return [(options['disease'], options['treatment'])]
        if not options.get('queries'):
            raise CommandError('Pass --queries or both --disease and --treatment')
        pairs = {query.pair_key: (query.disease, query.treatment) for query in load_queries(options['queries']).values()}
        return [pairs[key] for key in sorted(pairs)]

    def _service(self, options):
        config = load_job_config(options.get('config'), overrides_from_options(options), required=('criteria_dir',))
        return config, CriteriaService(build_gateway(config), token_budget=config.criteria_budget)

    def _choose(self, pair_key, documents, interactive):
        if not interactive:
            return documents[0]
        self.stdout.write(self.style.NOTICE(f"\n{pair_key}"))
        for index, document in enumerate(documents):
            self.stdout.write(f"--- [{index}] {document.criteria_id}\n{document.text}\n")
        while True:
            answer = input(f"Select a document for {pair_key} [0-{len(documents) - 1}]: ").strip()
            if answer.isdigit() and int(answer) < len(documents):
                return documents[int(answer)]
            self.stdout.write(self.style.ERROR('Invalid choice'))

    def handle_generate(self, options):
        config, service = self._service(options)
        store = CriteriaStore(options['criteria_dir'])
        pairs = self._pairs(options)
        with tracked_job(JobRun.Command.CRITERIA, config.digest, service.gateway.identity, store.directory) as job:
            written = 0
            for disease, treatment in pairs:
                documents = service.generate_candidates(disease, treatment, options['candidates'])
                for document in documents:
                    store.add(document)
                written += len(documents)
                chosen = self._choose(make_pair_key(disease, treatment), documents, options['interactive'])
                store.select(chosen.pair_key, chosen.criteria_id)
            job.mark_finished({'action': 'generate', 'pairs': len(pairs), 'documents': written, 'gateway': service.gateway.stats()})
        self.stdout.write(self.style.SUCCESS(f"Wrote {written} criteria documents for {len(pairs)} pairs"))

    def handle_oneshot(self, options):
        config, service = self._service(options)
        store = CriteriaStore(options['criteria_dir'])
        if options.get('exemplar'):
            exemplar = store.get(options['exemplar'])
        else:
            selected = store.selected_assignment()
            if not selected:
                raise CommandError('No selected criteria to use as exemplar; run "criteria generate" first')
            exemplar = selected[sorted(selected)[0]]

        with tracked_job(JobRun.Command.CRITERIA, config.digest, service.gateway.identity, store.directory) as job:
            written = 0
            for disease, treatment in self._pairs(options):
                pair_key = make_pair_key(disease, treatment)
                if store.selected(pair_key) is not None:
                    continue
                document = store.add(service.generate_oneshot(disease, treatment, exemplar))
                store.select(pair_key, document.criteria_id)
                written += 1
            job.mark_finished({'action': 'oneshot', 'exemplar_id': exemplar.criteria_id, 'documents': written})
        self.stdout.write(self.style.SUCCESS(f"Propagated exemplar {exemplar.criteria_id} to {written} pairs"))

    def handle_select(self, options):
        store = CriteriaStore(options['criteria_dir'])
        criteria_id = options.get('criteria_id')
        if criteria_id is None:
            documents = store.documents(options['pair'])
            if not 0 <= options['index'] < len(documents):
                raise CommandError(f"{options['pair']} has {len(documents)} documents")
            criteria_id = documents[options['index']].criteria_id
        document = store.select(options['pair'], criteria_id)
        self.stdout.write(self.style.SUCCESS(f"Selected {document.criteria_id} for {document.pair_key}"))

    def handle_shuffle(self, options):
        store = CriteriaStore(options['criteria_dir'])
        seed = options['seed']
        selected = store.selected_assignment()
        shuffled = shuffle_criteria_assignment(selected, seed)
        fixed_points = sum(1 for key in shuffled if shuffled[key].pair_key == key)
        path = store.write_assignment(options.get('name') or f"shuffled-seed{seed}", shuffled, CriteriaMode.SHUFFLED, seed=seed)
        self.stdout.write(self.style.SUCCESS(
            f"Shuffled criteria of {len(shuffled)} pairs into {path} ({fixed_points} fixed points)"
        ))
