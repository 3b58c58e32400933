"""
خدمات تنفيذ المهام
Job orchestration behind the management commands: ranking runs, rationale
passes and the JobRun bookkeeping shared by every command.
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

from tqdm import tqdm

from comparison.services import ListwiseRanker, PairwiseRanker
from core.config import JobConfig
from core.exceptions import ConfigError, MedRankError
from core.models import JobRun, RankingStrategy
from core.utils import atomic_write_json, atomic_write_jsonl, file_digest
from explain.models import CriteriaDocument, CriteriaMode
from explain.services import generate_rationale, shuffle_criteria_assignment
from explain.store import CriteriaStore
from gateway.models import LabelLogits
from gateway.services import BackendGateway
from profiles.models import DoctorProfile, LabelScheme, MedicalQuery, RankedList
from profiles.services import load_corpus, load_qrels, load_queries, serialize_profile
from scoring.runs import read_run, read_sidecar, run_tag, sidecar_path_for, sidecar_rows, write_run, write_sidecar
from scoring.services import PointwiseRanker

logger = logging.getLogger(__name__)

RUN_FILE = 'run.trec'
RATIONALES_FILE = 'rationales.jsonl'
PROVENANCE_FILE = 'provenance.json'


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


@contextmanager
def tracked_job(command: str, config_digest: str = '', backend_identity: str = '', output_dir=''):
    """
    تتبع المهمة في قاعدة البيانات

    Yields the JobRun row; a MedRankError marks it failed and propagates.
    """
    job = JobRun.objects.create(
        command=command,
        config_digest=config_digest,
        backend_identity=backend_identity,
        output_dir=str(output_dir or ''),
    )
    job.mark_running()
    try:
        yield job
    except MedRankError as e:
        logger.error(f"Job {command} #{job.pk} failed: {e}")
        job.mark_failed(str(e))
        raise
    except Exception as e:
        logger.exception(f"Unexpected failure in job {command} #{job.pk}")
        job.mark_failed(f"{type(e).__name__}: {e}")
        raise


def write_provenance(job: JobRun, output_dir, provenance: dict, warnings_count: int = 0, errors_count: int = 0) -> Path:
    provenance = dict(provenance, job_id=job.pk, completed_at=_now())
    path = atomic_write_json(Path(output_dir) / PROVENANCE_FILE, provenance)
    job.mark_finished(provenance, warnings_count=warnings_count, errors_count=errors_count)
    return path


def build_gateway(config: JobConfig) -> BackendGateway:
    return BackendGateway(config.backend, cache_dir=config.cache_dir)


def input_digests(config: JobConfig) -> Dict[str, str]:
    paths = {
        'corpus': config.corpus_path,
        'queries': config.queries_path,
        'qrels': config.qrels_path,
        'run': config.run_path,
    }
    return {name: file_digest(path) for name, path in paths.items() if path}


# ---------------------------------------------------------------------------
# Criteria assignment
# ---------------------------------------------------------------------------

def resolve_criteria(config: JobConfig) -> Dict[str, CriteriaDocument]:
    """pair_key -> criteria document for the job's criteria mode."""
    if config.criteria_mode == CriteriaMode.NONE:
        return {}
    store = CriteriaStore(config.criteria_dir)
    if config.assignment_path:
        return store.read_assignment(config.assignment_path)
    selected = store.selected_assignment()
    if config.criteria_mode == CriteriaMode.MATCHED:
        return selected
    shuffled = shuffle_criteria_assignment(selected, config.seed)
    store.write_assignment(f"shuffled-seed{config.seed}", shuffled, CriteriaMode.SHUFFLED, seed=config.seed)
    return shuffled


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

@dataclass
class RankingContext:
    config: JobConfig
    gateway: BackendGateway
    corpus: Mapping[str, DoctorProfile]
    qrels: Mapping[str, Mapping[str, int]]
    criteria: Mapping[str, CriteriaDocument] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)

    def candidates(self, query: MedicalQuery) -> List[DoctorProfile]:
        """The judged doctors of the query, by doctor_id."""
        profiles = []
        for doctor_id in sorted(self.qrels.get(query.query_id, {})):
            if doctor_id not in self.corpus:
                self.warnings.append(f"{query.query_id}: judged doctor {doctor_id} missing from corpus")
                logger.warning(self.warnings[-1])
                continue
            profiles.append(self.corpus[doctor_id])
        return profiles

    def criteria_for(self, query: MedicalQuery) -> Optional[CriteriaDocument]:
        if self.config.criteria_mode == CriteriaMode.NONE:
            return None
        if query.pair_key not in self.criteria:
            raise ConfigError('criteria_dir', f"no criteria assigned to {query.pair_key}")
        return self.criteria[query.pair_key]

    def rank_query(self, query: MedicalQuery) -> RankedList:
        config = self.config
        candidates = self.candidates(query)
        if config.strategy == RankingStrategy.PAIRWISE:
            ranker = PairwiseRanker(self.gateway, config.field_order, config.profile_budget)
            return ranker.rank(query, candidates)
        if config.strategy == RankingStrategy.LISTWISE:
            ranker = ListwiseRanker(self.gateway, config.window_plan, config.field_order, config.profile_budget)
            return ranker.rank(query, candidates)

        ranker = PointwiseRanker(
            self.gateway, config.scheme, config.score_strategy,
            config.field_order, config.profile_budget, config.failure_policy,
        )
        ranked = ranker.rank(query, candidates, self.criteria_for(query))
        self.failures.extend(str(failure) for failure in ranker.failures)
        return ranked

    def rank_queries(self, queries: Sequence[MedicalQuery], progress: bool = False) -> Dict[str, RankedList]:
        ranked = {}
        for query in tqdm(queries, desc='Ranking', unit='query', disable=not progress):
            ranked[query.query_id] = self.rank_query(query)
        return ranked

    def as_ranker(self) -> Callable[[List[MedicalQuery]], Dict[str, RankedList]]:
        return lambda queries: self.rank_queries(queries)


def select_queries(config: JobConfig, queries: Mapping[str, MedicalQuery]) -> List[MedicalQuery]:
    ids = config.query_ids or tuple(sorted(queries))
    missing = [query_id for query_id in ids if query_id not in queries]
    if missing:
        raise ConfigError('query_ids', f"unknown queries {missing}")
    return [queries[query_id] for query_id in ids]


def build_context(config: JobConfig, gateway: Optional[BackendGateway] = None) -> RankingContext:
    return RankingContext(
        config=config,
        gateway=gateway or build_gateway(config),
        corpus=load_corpus(config.corpus_path),
        qrels=load_qrels(config.qrels_path),
        criteria=resolve_criteria(config),
    )


def strategy_tag(config: JobConfig) -> str:
    if config.strategy == RankingStrategy.POINTWISE:
        return f"pointwise-{config.score_strategy}"
    return f"{config.strategy}-{config.window_plan.describe()}" if config.strategy == RankingStrategy.LISTWISE else str(config.strategy)


@dataclass
class JobOutcome:
    job: JobRun
    outputs: Dict[str, Path]
    provenance: dict


def run_rank_job(config: JobConfig, progress: bool = False, gateway: Optional[BackendGateway] = None) -> JobOutcome:
    """
    تشغيل مهمة الترتيب

    Writes the TREC run, the label sidecar (pointwise only) and
    provenance.json into the output directory.
    """
    output_dir = Path(config.output_dir)
    gateway = gateway or build_gateway(config)
    with tracked_job(JobRun.Command.RANK, config.digest, gateway.identity, output_dir) as job:
        started_at = _now()
        context = build_context(config, gateway)
        queries = select_queries(config, load_queries(config.queries_path))
        ranked = context.rank_queries(queries, progress=progress)

        tag = run_tag(context.gateway.identity, strategy_tag(config), config.with_criteria)
        outputs = {'run': write_run(output_dir / RUN_FILE, ranked.values(), tag)}
        if config.strategy == RankingStrategy.POINTWISE:
            rows = []
            for query in queries:
                criteria = context.criteria_for(query)
                rows.extend(sidecar_rows(ranked[query.query_id], config.scheme, criteria.criteria_id if criteria else None))
            outputs['sidecar'] = write_sidecar(sidecar_path_for(outputs['run']), rows)

        provenance = {
            'command': JobRun.Command.RANK.value,
            'config': config.to_dict(),
            'config_digest': config.digest,
            'backend_identity': context.gateway.identity,
            'tokenizer': context.gateway.tokenizer_name,
            'run_tag': tag,
            'criteria_mode': str(config.criteria_mode),
            'criteria_ids': {pair: document.criteria_id for pair, document in sorted(context.criteria.items())},
            'gateway': context.gateway.stats(),
            'inputs': input_digests(config),
            'outputs': {name: str(path) for name, path in outputs.items()},
            'warnings': context.warnings,
            'failures': context.failures,
            'started_at': started_at,
        }
        outputs['provenance'] = write_provenance(
            job, output_dir, provenance, len(context.warnings), len(context.failures)
        )
    logger.info(f"Ranked {len(queries)} queries into {outputs['run']} ({context.gateway.stats()})")
    return JobOutcome(job, outputs, provenance)


# ---------------------------------------------------------------------------
# Rationales
# ---------------------------------------------------------------------------

def _sidecar_logits(row: dict) -> LabelLogits:
    return LabelLogits(tuple(row['labels']), tuple(row['logits']), tuple(row.get('provenance') or ()))


def run_explain_job(config: JobConfig, progress: bool = False, gateway: Optional[BackendGateway] = None) -> JobOutcome:
    """
    توليد التبريرات لملف تشغيل

    Labels come from the sidecar written at ranking time; the pass issues
    text-generation requests only.
    """
    output_dir = Path(config.output_dir)
    gateway = gateway or build_gateway(config)
    with tracked_job(JobRun.Command.EXPLAIN, config.digest, gateway.identity, output_dir) as job:
        started_at = _now()
        runs = read_run(config.run_path)
        sidecar = read_sidecar(sidecar_path_for(config.run_path))
        corpus = load_corpus(config.corpus_path)
        queries = load_queries(config.queries_path)
        store = CriteriaStore(config.criteria_dir) if config.criteria_dir else None

        targets = []
        for query_id in sorted(runs):
            rows = runs[query_id][:config.top_k] if config.top_k else runs[query_id]
            targets.extend((query_id, row.doctor_id) for row in rows)

        rationales = []
        for query_id, doctor_id in tqdm(targets, desc='Explaining', unit='doctor', disable=not progress):
            row = sidecar.get((query_id, doctor_id))
            if row is None:
                raise ConfigError('run', f"{query_id}/{doctor_id} has no sidecar entry")
            scheme = LabelScheme.from_names(row['labels']) if tuple(row['labels']) != config.scheme.names else config.scheme
            criteria = None
            if row.get('criteria_id'):
                if store is None:
                    raise ConfigError('criteria_dir', f"run used criteria {row['criteria_id']}; pass the criteria directory")
                criteria = store.get(row['criteria_id'])
            if doctor_id not in corpus or query_id not in queries:
                raise ConfigError('run', f"{query_id}/{doctor_id} is not in the corpus or query set")
            profile_text = serialize_profile(
                corpus[doctor_id], config.field_order, config.profile_budget, gateway.tokenizer
            )
            rationale = generate_rationale(
                queries[query_id], profile_text, _sidecar_logits(row), scheme, gateway,
                criteria=criteria, doctor_id=doctor_id, token_budget=config.rationale_budget,
            )
            rationales.append(rationale.to_dict())

        outputs = {'rationales': atomic_write_jsonl(output_dir / RATIONALES_FILE, rationales)}
        provenance = {
            'command': JobRun.Command.EXPLAIN.value,
            'config': config.to_dict(),
            'config_digest': config.digest,
            'backend_identity': gateway.identity,
            'tokenizer': gateway.tokenizer_name,
            'top_k': config.top_k,
            'rationales': len(rationales),
            'gateway': gateway.stats(),
            'inputs': input_digests(config),
            'outputs': {name: str(path) for name, path in outputs.items()},
            'started_at': started_at,
        }
        outputs['provenance'] = write_provenance(job, output_dir, provenance)
    logger.info(f"Wrote {len(rationales)} rationales to {outputs['rationales']}")
    return JobOutcome(job, outputs, provenance)
