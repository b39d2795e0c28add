"""
One CRO deployment: PHR database, prover, bulletin and public artifacts wired from
:class:`~saltext.csmt.utils.config.Settings`.
"""
import io
import logging
import os
import threading
import zipfile

import salt.utils.atomicfile
import salt.utils.files
import salt.utils.json

from . import core
from . import stats
from . import verifier
from .bulletin import Bulletin
from .config import Settings
from .exceptions import ConfigError
from .exceptions import DuplicateError
from .exceptions import NotFoundError
from .phr import PhrDatabase
from .phr import generate_hd_cohorts
from .proofsys import BACKEND_NAME
from .proofsys import TranscriptBackend
from .prover import NONCE_LENGTH
from .prover import CohortSpec
from .prover import Cro
from .store import SealedStore
from .store import WitnessStore
from .transforms import TransformRegistry
from .transforms import spec_from_config

log = logging.getLogger(__name__)

ARCHIVE_DATE = (1980, 1, 1, 0, 0, 0)


class LocalEndpoints:
    """
    :class:`~saltext.csmt.utils.verifier.Endpoints` served in process by a deployment
    """

    def __init__(self, deployment):
        self.deployment = deployment

    def root_record(self, study_id, tree_id=None):
        return self.deployment.root_record(study_id, tree_id)

    def phr_entry(self, user_id):
        return self.deployment.phr.entry(user_id).to_dict()

    def delivery(self, study_id, tree_id, user_id):
        return self.deployment.cro.delivery(tree_id, user_id)

    def ltr_prove(self, h_raw, h_tau, transform_id):
        return self.deployment.cro.cro_ltr_prove(h_raw, h_tau, transform_id)

    def mrp_prove(self, h_leaf, index, nonce, h_root):
        return self.deployment.cro.cro_mrp_prove(h_leaf, index, nonce, h_root)

    def statistic_record(self, study_id, kind=None):
        return self.deployment.statistic_record(study_id, kind)


class Deployment:
    """
    settings
        Resolved :class:`Settings`. Without ``state_dir`` everything lives in memory.
    """

    def __init__(self, settings: Settings = None):
        self.settings = settings = settings or Settings()
        seed = settings.seed_bytes
        if settings.state_dir:
            if not seed:
                raise ConfigError("A persisted deployment needs CSMT_BACKEND_SEED")
            os.makedirs(settings.public_dir, exist_ok=True)
            private = SealedStore(os.path.join(settings.state_dir, "phr.sealed"), settings.witness_key)
            witnesses = SealedStore(os.path.join(settings.state_dir, "witnesses.sealed"), settings.witness_key)
            bulletin_path = os.path.join(settings.public_dir, "bulletin.jsonl")
        else:
            if not seed:
                log.warning("No backend seed configured; keys and bulletin signatures are ephemeral")
                seed = core.new_salt(32)
            private = witnesses = None
            bulletin_path = None
        self._lock = threading.Lock()
        self._artifacts = {}
        self.phr = PhrDatabase(private, settings.salt_length)
        witness_store = witnesses or SealedStore()
        self.registry = TransformRegistry(witness_store)
        self.backend = TranscriptBackend(self.registry, seed)
        self.bulletin = Bulletin(seed, bulletin_path)
        self.cro = Cro(
            self.registry,
            self.backend,
            WitnessStore(witness_store),
            self.bulletin,
            settings.tree_height,
            settings.security_bits,
            settings.salt_length,
        )
        self.endpoints = LocalEndpoints(self)

    def register_records(self, records):
        """
        Register ``(user_id, values)`` records, skipping users already present.
        """
        entries = []
        for user_id, values in records:
            try:
                entries.append(self.phr.register(user_id, values))
            except DuplicateError:
                log.debug(f"User {user_id} already registered")
        if entries:
            self.bulletin.publish("phr", "phr", {"phr_root": self.phr.root.hex(), "users": len(self.phr.users())})
        return entries

    def register_hd_cohorts(self, seed):
        healthy, hd = generate_hd_cohorts(seed)
        self.register_records(healthy + hd)
        return [user for user, _ in healthy], [user for user, _ in hd]

    def build_study(self, study_id, transform, included=None, all_users=None, aggregator_id="sum", tree_id=None):
        """
        Register ``transform`` (an id or a declarative entry) and build its tree.

        ``all_users`` defaults to every PHR user, ``included`` to ``all_users``.
        """
        if isinstance(transform, dict):
            transform = self.registry.register_transform(spec_from_config(transform, self.settings.scale)).id
        all_users = list(all_users or self.phr.users())
        cohort = CohortSpec.of(all_users, included)
        tree_id = tree_id or f"{study_id}/{transform}"
        return stats.build_tree(self.cro, self.phr, study_id, cohort, transform, tree_id)

    def root_record(self, study_id, tree_id=None):
        records = [
            record
            for record in self.bulletin.records(study_id, "root")
            if tree_id is None or record["body"]["tree_id"] == tree_id
        ]
        if not records:
            raise NotFoundError(f"Study {study_id} has no published tree {tree_id or ''}".rstrip())
        return records[-1]

    def prove_user(self, study_id, user_id, tree_id=None, nonce=None):
        """
        Proof bundle for one user, the file ``verify include|exclude`` checks offline.
        """
        record = self.root_record(study_id, tree_id)
        body = record["body"]
        entry = self.phr.entry(user_id)
        h_tau = core.Digest.from_hex(self.cro.delivery(body["tree_id"], user_id))
        nonce = bytes(nonce) if nonce is not None else core.new_salt(NONCE_LENGTH)
        proof_set = self.cro.prove_record(
            entry.h_raw, h_tau, body["transform_id"], nonce, core.Digest.from_hex(body["root"])
        )
        return {
            "version": verifier.PROOF_BUNDLE_VERSION,
            "study_id": study_id,
            "tree_id": body["tree_id"],
            "user_id": user_id,
            "h_raw": entry.h_raw.hex(),
            "h_tau": h_tau.hex(),
            "nonce": nonce.hex(),
            "proof_set": proof_set.to_dict(),
            "root_record": record,
        }

    def verify_user(self, study_id, user_id, tree_id=None, nonce=None):
        return verifier.cosmetic_verifier(user_id, self.endpoints, study_id, tree_id, nonce)

    def assemble_audit_bundle(self, study_id, tree_id=None):
        """
        Exclusivity audit input for a published tree: the included PHR tuples with their
        audit paths, the claimed leaves and one proof set per claimed leaf.
        """
        record = self.root_record(study_id, tree_id)
        body = record["body"]
        handle = self.cro.tree(body["tree_id"])
        included, proof_sets, claimed = [], {}, []
        for index, user_id in sorted(handle.owners.items()):
            entry = self.phr.entry(user_id)
            h_tau = core.Digest.from_hex(self.cro.delivery(body["tree_id"], user_id))
            included.append((entry.h_raw, h_tau, self.phr.prove_membership(entry.h_raw, h_tau)))
            proof_set = self.cro.prove_record(
                entry.h_raw, h_tau, body["transform_id"], core.new_salt(NONCE_LENGTH), handle.root.digest
            )
            proof_sets[user_id] = verifier.AuditEntry(entry.h_raw, h_tau, proof_set)
            claimed.append(handle.occupied[index].digest)
        return verifier.AuditBundle(tuple(included), self.phr.root, tuple(claimed), proof_sets, record)

    def audit(self, study_id, tree_id=None):
        return verifier.verify_data_exclusivity(self.assemble_audit_bundle(study_id, tree_id))

    def statistic_record(self, study_id, kind=None):
        records = [
            record
            for record in self.bulletin.records(study_id, "statistic")
            if kind is None or record["body"]["kind"] == kind
        ]
        if not records:
            raise NotFoundError(f"Study {study_id} has no published statistic")
        return records[-1]

    def published_roots(self, result):
        return [
            core.Digest.from_hex(self.root_record(result.study_id, tree_id)["body"]["root"])
            for tree_id in result.tree_ids
        ]

    def stat_verify(self, result, sample_user, nonce=None):
        vk_post = stats.published_vk_post(self.statistic_record(result.study_id, result.kind))
        return stats.stat_verify(result, self.published_roots(result), vk_post, self.endpoints, sample_user, nonce)

    def ks(self, study_id, cohort_a, cohort_b, bins=stats.DEFAULT_KS_BINS, scale=None):
        return stats.ks_two_sample(
            self.cro, self.phr, study_id, cohort_a, cohort_b, bins, scale or self.settings.scale
        )

    def lrt(self, study_id, cohort, beta_full, beta_reduced, scale=None, select_full=None, select_reduced=None):
        return stats.lrt(
            self.cro,
            self.phr,
            study_id,
            cohort,
            beta_full,
            beta_reduced,
            scale or self.settings.scale,
            select_full,
            select_reduced,
        )

    def acc(self, study_id, cohort, beta, scale=None, select=None):
        return stats.accuracy(self.cro, self.phr, study_id, cohort, beta, scale or self.settings.scale, select)

    def _artifact_files(self, study_id):
        roots = self.bulletin.records(study_id, "root")
        if not roots:
            raise NotFoundError(f"Study {study_id} is not published")
        files = {
            "bulletin_public_key.txt": self.bulletin.public_key + "\n",
            "settings.json": {
                "backend": BACKEND_NAME,
                "scale": self.settings.scale,
                "tree_height": self.settings.tree_height,
                "salt_length": self.settings.salt_length,
                "security_bits": self.settings.security_bits,
                "hash": core.HASH_NAME,
            },
        }
        for record in roots + self.bulletin.records(study_id, "statistic"):
            files[f"records/{record['seq']:06d}-{record['kind']}.json"] = record
            body = record["body"]
            if record["kind"] == "root":
                label = body["tree_id"].replace("/", "_")
                files[f"vk/{label}-ltr.json"] = body["vk_ltr"]
                files[f"vk/{label}-mrp.json"] = body["vk_mrp"]
            elif body.get("vk_post"):
                files[f"vk/{body['kind']}-post.json"] = body["vk_post"]
                files[f"proofs/{body['kind']}-post.json"] = body["post_proof"]
        return files

    def download_artifacts(self, study_id):
        """
        Zip of the study's verification keys, settings, bulletin records and proofs.

        Written once; later downloads return the same bytes.
        """
        with self._lock:
            if study_id in self._artifacts:
                return self._artifacts[study_id]
            path = None
            if self.settings.public_dir:
                path = os.path.join(self.settings.public_dir, "artifacts", f"{study_id}.zip")
                if os.path.exists(path):
                    with salt.utils.files.fopen(path, "rb") as fil:
                        self._artifacts[study_id] = fil.read()
                    return self._artifacts[study_id]
            buffer = io.BytesIO()
            with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED) as archive:
                for name, content in sorted(self._artifact_files(study_id).items()):
                    if not isinstance(content, str):
                        content = salt.utils.json.dumps(content, sort_keys=True, indent=2) + "\n"
                    info = zipfile.ZipInfo(name, date_time=ARCHIVE_DATE)
                    info.compress_type = zipfile.ZIP_DEFLATED
                    archive.writestr(info, content)
            data = buffer.getvalue()
            if path:
                os.makedirs(os.path.dirname(path), exist_ok=True)
                with salt.utils.atomicfile.atomic_open(path, "wb") as fil:
                    fil.write(data)
            self._artifacts[study_id] = data
            log.debug(f"Assembled artifact bundle for {study_id}: {len(data)} bytes")
            return data


def read_artifacts(data):
    """
    Unpack a downloaded artifact zip into ``{name: parsed content}``.
    """
    files = {}
    with zipfile.ZipFile(io.BytesIO(data)) as archive:
        for name in archive.namelist():
            text = archive.read(name).decode()
            files[name] = salt.utils.json.loads(text) if name.endswith(".json") else text.strip()
    return files
