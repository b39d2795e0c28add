"""
Asynchronous proof jobs on a bounded worker pool.
"""
import enum
import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Optional

from saltext.csmt.utils import core
from saltext.csmt.utils import phr as phr_mod
from saltext.csmt.utils import stats
from saltext.csmt.utils.exceptions import ConfigError
from saltext.csmt.utils.exceptions import CsmtError
from saltext.csmt.utils.exceptions import NotFoundError

log = logging.getLogger(__name__)

KEEP_FINISHED = 1000


class JobKind(str, enum.Enum):
    LTR = "LTR"
    MRP = "MRP"
    BUILD = "BUILD"
    PIPELINE_KS = "PIPELINE_KS"
    PIPELINE_LRT = "PIPELINE_LRT"
    PIPELINE_ACC = "PIPELINE_ACC"
    AUDIT = "AUDIT"


class JobStatus(str, enum.Enum):
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


PIPELINE_KINDS = {
    "ks": JobKind.PIPELINE_KS,
    "lrt": JobKind.PIPELINE_LRT,
    "acc": JobKind.PIPELINE_ACC,
}


@dataclass
class ProofJob:
    job_id: str
    kind: JobKind
    payload: dict
    status: JobStatus = JobStatus.QUEUED
    result: Optional[Any] = None
    error: Optional[str] = None
    error_type: Optional[str] = None
    created_at: float = field(default_factory=time.time)
    updated_at: Optional[float] = None

    def to_dict(self):
        return {
            "job_id": self.job_id,
            "kind": self.kind.value,
            "status": self.status.value,
            "error": self.error,
            "error_type": self.error_type,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }


def _require(payload, *names):
    missing = [name for name in names if name not in payload]
    if missing:
        raise ConfigError(f"Job payload lacks {', '.join(missing)}")


def _register_records(deployment, payload):
    if "records" in payload:
        deployment.register_records([(user, values) for user, values in payload["records"]])


def run_ltr(deployment, payload):
    if "user_id" in payload:
        _require(payload, "study_id")
        record = deployment.root_record(payload["study_id"], payload.get("tree_id"))
        body = record["body"]
        h_raw = deployment.phr.entry(payload["user_id"]).h_raw
        h_tau = core.Digest.from_hex(deployment.cro.delivery(body["tree_id"], payload["user_id"]))
        transform_id = body["transform_id"]
    else:
        _require(payload, "h_raw", "h_tau", "transform_id")
        h_raw = core.Digest.from_hex(payload["h_raw"])
        h_tau = core.Digest.from_hex(payload["h_tau"])
        transform_id = payload["transform_id"]
    h_leaf, index, artifact = deployment.cro.cro_ltr_prove(h_raw, h_tau, transform_id)
    return {"h_leaf": h_leaf.hex(), "index": index, "artifact": artifact.to_dict()}


def run_mrp(deployment, payload):
    _require(payload, "h_leaf", "index", "nonce")
    root = core.Digest.from_hex(payload["root"]) if payload.get("root") else None
    h_root, hops, path = deployment.cro.cro_mrp_prove(
        core.Digest.from_hex(payload["h_leaf"]), int(payload["index"]), bytes.fromhex(payload["nonce"]), root
    )
    return {"root": h_root.hex(), "hops": [hop.to_dict() for hop in hops], "path": list(path)}


def run_build(deployment, payload):
    _require(payload, "study_id", "transform")
    _register_records(deployment, payload)
    result = deployment.build_study(
        payload["study_id"],
        payload["transform"],
        payload.get("included"),
        payload.get("all_users"),
        payload.get("aggregator_id", "sum"),
        payload.get("tree_id"),
    )
    return {"tree_id": result.tree_id, "root": result.h_root.hex(), "record": result.record}


def run_ks(deployment, payload):
    _require(payload, "study_id")
    _register_records(deployment, payload)
    if "hd_seed" in payload:
        cohort_a, cohort_b = deployment.register_hd_cohorts(int(payload["hd_seed"]))
    else:
        _require(payload, "cohort_a", "cohort_b")
        cohort_a, cohort_b = payload["cohort_a"], payload["cohort_b"]
    bins = payload.get("bins") or stats.DEFAULT_KS_BINS
    result = deployment.ks(payload["study_id"], cohort_a, cohort_b, bins, payload.get("scale"))
    return result.to_dict()


def _cohort(deployment, payload):
    if "logistic_seed" in payload:
        records = phr_mod.generate_logistic_cohort(
            int(payload["logistic_seed"]),
            int(payload.get("size", 200)),
            int(payload.get("features", 4)),
            prefix=payload["study_id"],
        )
        deployment.register_records(records)
        return [user for user, _ in records]
    _require(payload, "cohort")
    return payload["cohort"]


def run_lrt(deployment, payload):
    _require(payload, "study_id", "beta_full", "beta_reduced")
    _register_records(deployment, payload)
    result = deployment.lrt(
        payload["study_id"],
        _cohort(deployment, payload),
        payload["beta_full"],
        payload["beta_reduced"],
        payload.get("scale"),
        payload.get("select_full"),
        payload.get("select_reduced"),
    )
    return result.to_dict()


def run_acc(deployment, payload):
    _require(payload, "study_id", "beta")
    _register_records(deployment, payload)
    result = deployment.acc(
        payload["study_id"],
        _cohort(deployment, payload),
        payload["beta"],
        payload.get("scale"),
        payload.get("select"),
    )
    return result.to_dict()


def run_audit(deployment, payload):
    _require(payload, "study_id")
    bundle = deployment.assemble_audit_bundle(payload["study_id"], payload.get("tree_id"))
    from saltext.csmt.utils.verifier import verify_data_exclusivity  # pylint: disable=import-outside-toplevel

    return {"audit": verify_data_exclusivity(bundle).to_dict(), "bundle": bundle.to_dict()}


RUNNERS = {
    JobKind.LTR: run_ltr,
    JobKind.MRP: run_mrp,
    JobKind.BUILD: run_build,
    JobKind.PIPELINE_KS: run_ks,
    JobKind.PIPELINE_LRT: run_lrt,
    JobKind.PIPELINE_ACC: run_acc,
    JobKind.AUDIT: run_audit,
}


class JobQueue:
    """
    deployment
        :class:`~saltext.csmt.utils.deployment.Deployment` the jobs run against.

    workers
        Size of the worker pool.

    pipeline
        Restrict pipeline jobs to one of ``ks``, ``lrt``, ``acc``; ``None`` accepts all.

    keep_finished
        Finished jobs kept for status queries; the oldest are dropped beyond this.
    """

    def __init__(self, deployment, workers=4, pipeline=None, keep_finished=KEEP_FINISHED):
        self.deployment = deployment
        self.keep_finished = keep_finished
        self.allowed = set(JobKind)
        if pipeline is not None:
            self.allowed = {JobKind.LTR, JobKind.MRP, JobKind.BUILD, JobKind.AUDIT, PIPELINE_KINDS[pipeline]}
        self._jobs = {}
        self._events = {}
        self._lock = threading.Lock()
        self._executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="csmt-job")

    def submit(self, kind, payload):
        try:
            kind = JobKind(kind)
        except ValueError:
            raise ConfigError(f"Unknown job kind '{kind}'") from None
        if kind not in self.allowed:
            raise ConfigError(f"This service does not run {kind.value} jobs")
        if not isinstance(payload, dict):
            raise ConfigError("Job payloads are JSON objects")
        job = ProofJob(uuid.uuid4().hex, kind, payload)
        with self._lock:
            self._jobs[job.job_id] = job
            self._events[job.job_id] = threading.Event()
        self._executor.submit(self._run, job.job_id)
        log.debug(f"Queued {kind.value} job {job.job_id}")
        return job.job_id

    def _update(self, job_id, status, result=None, error=None, error_type=None):
        with self._lock:
            job = self._jobs[job_id]
            job.status = status
            job.result = result
            job.error = error
            job.error_type = error_type
            job.updated_at = time.time()

    def _run(self, job_id):
        with self._lock:
            job = self._jobs[job_id]
        self._update(job_id, JobStatus.RUNNING)
        try:
            result = RUNNERS[job.kind](self.deployment, job.payload)
        except (CsmtError, ConfigError, KeyError, TypeError, ValueError) as exc:
            log.error(f"Job {job_id} ({job.kind.value}) failed: {exc}")
            self._update(job_id, JobStatus.FAILED, error=str(exc), error_type=type(exc).__name__)
        except Exception as exc:  # pylint: disable=broad-except
            log.exception(f"Job {job_id} ({job.kind.value}) crashed")
            self._update(job_id, JobStatus.FAILED, error=str(exc) or repr(exc), error_type=type(exc).__name__)
        else:
            self._update(job_id, JobStatus.DONE, result=result)
        finally:
            self._events[job_id].set()
            self._evict()

    def _evict(self):
        with self._lock:
            finished = [
                job for job in self._jobs.values() if job.status in (JobStatus.DONE, JobStatus.FAILED)
            ]
            finished.sort(key=lambda job: job.updated_at)
            for job in finished[: max(0, len(finished) - self.keep_finished)]:
                del self._jobs[job.job_id]
                del self._events[job.job_id]
                log.debug(f"Dropped finished job {job.job_id}")

    def job(self, job_id) -> ProofJob:
        with self._lock:
            try:
                return self._jobs[job_id]
            except KeyError:
                raise NotFoundError(f"Unknown job {job_id}") from None

    def status(self, job_id):
        job = self.job(job_id)
        with self._lock:
            return job.to_dict()

    def wait(self, job_id, timeout=None):
        self.job(job_id)
        with self._lock:
            event = self._events.get(job_id)
        if event is not None:
            event.wait(timeout)
        return self.status(job_id)

    def result(self, job_id):
        """
        Result of a finished job; ``None`` while it is still queued or running.
        """
        job = self.job(job_id)
        with self._lock:
            return job.result if job.status is JobStatus.DONE else None

    def shutdown(self, wait=True):
        self._executor.shutdown(wait=wait)
