"""
Public verification: LTR and MRP hop checks, inclusion/exclusion verification, the
end-to-end verifier and the data-exclusivity audit.

Nothing here raises for a failed check; outcomes carry a flag, a reason and the stage that
failed.
"""
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Dict
from typing import Optional
from typing import Protocol
from typing import Tuple

from . import core
from . import phr
from .bulletin import verify_record
from .exceptions import IncompleteBundleError
from .proofsys import FIELD_MISMATCH
from .proofsys import ProofArtifact
from .proofsys import VerificationKey
from .proofsys import VerificationOutcome
from .proofsys import verify
from .prover import NONCE_LENGTH
from .prover import CsmtProofSet
from .transforms import AggregatorSpec
from .transforms import TransformSpec
from .transforms import default_element
from .tree import default_chain

log = logging.getLogger(__name__)

INCLUDED = "included"
EXCLUDED = "excluded"
FAILED = "failed"

PATH_MISMATCH = "path-mismatch"
ROOT_MISMATCH = "root-mismatch"
LEAF_MISMATCH = "leaf-mismatch"
BAD_SIGNATURE = "bad-signature"
SPURIOUS_LEAF = "spurious leaf existence detected"

PROOF_BUNDLE_VERSION = 1


def ltr_verify(vk: VerificationKey, artifact: ProofArtifact, h_raw, h_tau, h_leaf) -> VerificationOutcome:
    """
    Backend verification plus the three field checks against the caller's digests.
    """
    outcome = verify(vk, artifact)
    if not outcome:
        return VerificationOutcome(False, outcome.reason, "ltr", outcome.detail)
    for name, expected in (("Input1", h_raw), ("Input2", h_tau), ("Output", h_leaf)):
        if artifact[name] != bytes(expected):
            return VerificationOutcome(False, FIELD_MISMATCH, "ltr", f"{name} differs")
    return VerificationOutcome(True, stage="ltr")


def mrp_hop_verify(vk: VerificationKey, hop: ProofArtifact, h_left, h_right, h_bit, h_nonce) -> VerificationOutcome:
    outcome = verify(vk, hop)
    if not outcome:
        return VerificationOutcome(False, outcome.reason, "mrp", outcome.detail)
    for name, expected in (
        ("LeftInput", h_left),
        ("RightInput", h_right),
        ("Bit", h_bit),
        ("Nonce", h_nonce),
    ):
        if hop[name] != bytes(expected):
            return VerificationOutcome(False, FIELD_MISMATCH, "mrp", f"{name} differs")
    return VerificationOutcome(True, stage="mrp")


@dataclass(frozen=True)
class InclusionOutcome:
    """
    Result of :func:`ver_inc`. ``status`` is ``included``, ``excluded`` (a verified
    exclusion) or ``failed``.
    """

    status: str
    reason: Optional[str] = None
    stage: Optional[str] = None
    hop: Optional[int] = None
    detail: Optional[str] = None
    bundle: Optional[dict] = field(default=None, compare=False)

    @property
    def flag(self):
        return self.status != FAILED

    def __bool__(self):
        return self.flag

    def to_dict(self):
        return {
            "status": self.status,
            "flag": self.flag,
            "reason": self.reason,
            "stage": self.stage,
            "hop": self.hop,
            "detail": self.detail,
        }


def _failed(reason, stage, hop=None, detail=None):
    return InclusionOutcome(FAILED, reason, stage, hop, detail)


def ver_inc(
    h_raw,
    h_tau,
    h_leaf,
    proof_set: CsmtProofSet,
    h_root,
    h_nonce,
    vk_ltr: VerificationKey,
    vk_mrp: VerificationKey,
    default_leaf=None,
) -> InclusionOutcome:
    """
    Verify an LTR + MRP proof set.

    h_raw / h_tau / h_leaf
        Record digest, transform salt digest and leaf digest the user expects.

    h_root
        Published root digest.

    h_nonce
        Digest of the nonce the verifier drew for this session.

    default_leaf
        Digest of the default leaf. When the first hop starts from it instead of
        ``h_leaf`` the set is a verified exclusion.
    """
    if proof_set.ltr is None:
        return _failed(FIELD_MISMATCH, "ltr", detail="no LTR artifact")
    outcome = ltr_verify(vk_ltr, proof_set.ltr, h_raw, h_tau, h_leaf)
    if not outcome:
        return _failed(outcome.reason, "ltr", detail=outcome.detail)

    height = len(proof_set.path)
    if height < 1 or len(proof_set.mrp_hops) != height:
        return _failed(PATH_MISMATCH, "path", detail=f"{len(proof_set.mrp_hops)} hops for a path of {height}")
    if core.derive_leaf_index(h_leaf, height) != core.path_to_index(proof_set.path):
        return _failed(PATH_MISMATCH, "path", detail="path does not spell the index of the leaf")

    first = proof_set.mrp_hops[0]
    side = "RightInput" if proof_set.path[-1] else "LeftInput"
    if first[side] == bytes(h_leaf):
        status, current = INCLUDED, bytes(h_leaf)
    elif default_leaf is not None and first[side] == bytes(default_leaf):
        status, current = EXCLUDED, bytes(default_leaf)
    else:
        return _failed(LEAF_MISMATCH, "mrp", 0, "first hop starts from neither the leaf nor the default leaf")

    for hop_no, hop in enumerate(proof_set.mrp_hops):
        bit = proof_set.path[height - 1 - hop_no]
        if bit:
            left, right = hop["LeftInput"], current
        else:
            left, right = current, hop["RightInput"]
        outcome = mrp_hop_verify(vk_mrp, hop, left, right, core.bit_digest(bit), h_nonce)
        if not outcome:
            return _failed(outcome.reason, "mrp", hop_no, outcome.detail)
        current = hop["Parent"]

    if current != bytes(h_root):
        return _failed(ROOT_MISMATCH, "root", detail="walk does not end at the published root")
    return InclusionOutcome(status, stage="done")


def root_record_keys(record):
    body = record["body"]
    return (
        core.Digest.from_hex(body["root"]),
        VerificationKey.from_dict(body["vk_ltr"]),
        VerificationKey.from_dict(body["vk_mrp"]),
        default_element(TransformSpec.from_dict(body["transform"]), body["salt_length"]).digest,
    )


def verify_proof_bundle(bundle, public_key=None) -> InclusionOutcome:
    """
    Offline check of a proof bundle file against the bulletin record it embeds.
    """
    record = bundle["root_record"]
    if public_key is not None and not verify_record(record, public_key):
        return _failed(BAD_SIGNATURE, "bulletin", detail="root record signature does not verify")
    h_root, vk_ltr, vk_mrp, default_leaf = root_record_keys(record)
    proof_set = CsmtProofSet.from_dict(bundle["proof_set"])
    nonce = bytes.fromhex(bundle["nonce"])
    if proof_set.nonce != nonce:
        return _failed(FIELD_MISMATCH, "mrp", detail="proof set answers another nonce")
    return ver_inc(
        core.Digest.from_hex(bundle["h_raw"]),
        core.Digest.from_hex(bundle["h_tau"]),
        proof_set.h_leaf,
        proof_set,
        h_root,
        core.nonce_digest(nonce),
        vk_ltr,
        vk_mrp,
        default_leaf,
    )


class Endpoints(Protocol):
    """
    What the end-to-end verifier needs from the PHR database, the bulletin and the CRO.
    """

    def root_record(self, study_id, tree_id=None) -> dict:
        ...

    def phr_entry(self, user_id) -> dict:
        ...

    def delivery(self, study_id, tree_id, user_id) -> str:
        ...

    def ltr_prove(self, h_raw, h_tau, transform_id) -> Tuple[core.Digest, int, ProofArtifact]:
        ...

    def mrp_prove(self, h_leaf, index, nonce, h_root) -> Tuple[core.Digest, Tuple[ProofArtifact, ...], Tuple[int, ...]]:
        ...

    def statistic_record(self, study_id, kind=None) -> dict:
        ...


def cosmetic_verifier(user_id, endpoints: Endpoints, study_id, tree_id=None, nonce=None) -> InclusionOutcome:
    """
    End-to-end verification of one user against a published study tree.

    Draws a fresh nonce unless one is given, asks the CRO for the LTR and MRP proofs and
    checks them with :func:`ver_inc`. The returned outcome carries the proof bundle that
    :func:`verify_proof_bundle` re-checks offline.
    """
    record = endpoints.root_record(study_id, tree_id)
    body = record["body"]
    entry = endpoints.phr_entry(user_id)
    h_raw = core.Digest.from_hex(entry["h_raw"])
    h_tau = core.Digest.from_hex(endpoints.delivery(study_id, body["tree_id"], user_id))
    nonce = bytes(nonce) if nonce is not None else core.new_salt(NONCE_LENGTH)
    h_leaf, index, ltr = endpoints.ltr_prove(h_raw, h_tau, body["transform_id"])
    h_root, hops, path = endpoints.mrp_prove(h_leaf, index, nonce, core.Digest.from_hex(body["root"]))
    if tuple(path) != core.index_to_path(index, body["height"]):
        log.error(f"CRO answered {user_id} with a path for another leaf")
        return _failed(PATH_MISMATCH, "path", detail="MRP path differs from the LTR leaf index")
    proof_set = CsmtProofSet(ltr, tuple(hops), tuple(path), h_root, h_leaf, index, nonce)
    bundle = {
        "version": PROOF_BUNDLE_VERSION,
        "study_id": study_id,
        "tree_id": body["tree_id"],
        "user_id": user_id,
        "h_raw": h_raw.hex(),
        "h_tau": h_tau.hex(),
        "nonce": nonce.hex(),
        "proof_set": proof_set.to_dict(),
        "root_record": record,
    }
    outcome = verify_proof_bundle(bundle)
    log.debug(f"Verified {user_id} against {body['tree_id']}: {outcome.status}")
    return InclusionOutcome(outcome.status, outcome.reason, outcome.stage, outcome.hop, outcome.detail, bundle)


@dataclass(frozen=True)
class AuditEntry:
    h_raw: core.Digest
    h_tau: core.Digest
    proof_set: CsmtProofSet

    def to_dict(self):
        return {"h_raw": self.h_raw.hex(), "h_tau": self.h_tau.hex(), "proof_set": self.proof_set.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(
            core.Digest.from_hex(data["h_raw"]),
            core.Digest.from_hex(data["h_tau"]),
            CsmtProofSet.from_dict(data["proof_set"]),
        )


@dataclass(frozen=True)
class AuditBundle:
    """
    Everything the exclusivity audit of one tree needs.

    ``included_hashes`` pairs every included ``(H_raw, H_tau)`` with its PHR audit path;
    ``claimed_leaves`` are the non-default leaf digests the CRO claims; ``proof_sets``
    maps a label to the proof set of each claimed leaf.
    """

    included_hashes: Tuple[Tuple[core.Digest, core.Digest, phr.MerkleAuditPath], ...]
    phr_root: core.Digest
    claimed_leaves: Tuple[core.Digest, ...]
    proof_sets: Dict[str, AuditEntry]
    root_record: dict

    def to_dict(self):
        return {
            "included_hashes": [
                {"h_raw": h_raw.hex(), "h_tau": h_tau.hex(), "path": path.to_dict()}
                for h_raw, h_tau, path in self.included_hashes
            ],
            "phr_root": self.phr_root.hex(),
            "claimed_leaves": [leaf.hex() for leaf in self.claimed_leaves],
            "proof_sets": {label: entry.to_dict() for label, entry in self.proof_sets.items()},
            "root_record": self.root_record,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            tuple(
                (
                    core.Digest.from_hex(item["h_raw"]),
                    core.Digest.from_hex(item["h_tau"]),
                    phr.MerkleAuditPath.from_dict(item["path"]),
                )
                for item in data["included_hashes"]
            ),
            core.Digest.from_hex(data["phr_root"]),
            tuple(core.Digest.from_hex(leaf) for leaf in data["claimed_leaves"]),
            {label: AuditEntry.from_dict(entry) for label, entry in data["proof_sets"].items()},
            data["root_record"],
        )


@dataclass(frozen=True)
class AuditResult:
    passed: bool
    message: str
    detail: Optional[str] = None

    def __bool__(self):
        return self.passed

    def to_dict(self):
        return {"passed": self.passed, "message": self.message, "detail": self.detail}


def _spurious(detail):
    log.error(f"Exclusivity audit failed: {detail}")
    return AuditResult(False, SPURIOUS_LEAF, detail)


def verify_data_exclusivity(bundle: AuditBundle) -> AuditResult:
    """
    Check that exactly the included PHR records contribute to the published root.

    Every claimed leaf must come with an LTR proof over a tuple registered in the PHR
    tree, every walk must verify and end at the root, and every non-default node met on
    any walk must have at least one claimed leaf below it.
    """
    body = bundle.root_record["body"]
    h_root, vk_ltr, vk_mrp, default_leaf = root_record_keys(bundle.root_record)
    transform = TransformSpec.from_dict(body["transform"])
    height = body["height"]
    aggregator = AggregatorSpec(body["aggregator_id"])
    chain = [node.digest for node in default_chain(transform, aggregator, height, body["salt_length"])]

    included = {(bytes(h_raw), bytes(h_tau)): path for h_raw, h_tau, path in bundle.included_hashes}
    for (h_raw, h_tau), path in included.items():
        if path.leaf_digest != core.hash_fields([h_raw, h_tau]) or not phr.phr_verify_membership(bundle.phr_root, path):
            return _spurious(f"record {h_raw.hex()[:16]} is not in the PHR tree")

    by_leaf = {bytes(entry.proof_set.h_leaf): entry for entry in bundle.proof_sets.values()}
    covered = {(bytes(entry.h_raw), bytes(entry.h_tau)) for entry in bundle.proof_sets.values()}
    missing_leaves = [leaf for leaf in bundle.claimed_leaves if bytes(leaf) not in by_leaf]
    if missing_leaves:
        raise IncompleteBundleError(f"No proof set for claimed leaf {missing_leaves[0].hex()[:16]}")
    missing_users = set(included) - covered
    if missing_users:
        raise IncompleteBundleError(f"{len(missing_users)} included records have no proof set")

    if not bundle.claimed_leaves:
        if h_root != chain[height]:
            return _spurious("no leaves are claimed but the root is not the all-default root")
        return AuditResult(True, "data exclusivity verified")

    nodes_ltr = set()
    claimed_indices = set()
    seen: Dict[Tuple[int, int], bytes] = {}
    for label, entry in bundle.proof_sets.items():
        if (bytes(entry.h_raw), bytes(entry.h_tau)) not in included:
            return _spurious(f"proof set {label} proves a record absent from the included PHR set")
        proof_set = entry.proof_set
        outcome = ver_inc(
            entry.h_raw,
            entry.h_tau,
            proof_set.h_leaf,
            proof_set,
            h_root,
            core.nonce_digest(proof_set.nonce),
            vk_ltr,
            vk_mrp,
            default_leaf,
        )
        if outcome.status != INCLUDED:
            return _spurious(f"proof set {label} does not verify as an inclusion ({outcome.reason})")
        nodes_ltr.add(bytes(proof_set.h_leaf))
        claimed_indices.add(proof_set.index)
        for level, hop in enumerate(proof_set.mrp_hops):
            position = proof_set.index >> level
            bit = position & 1
            sibling = hop["LeftInput"] if bit else hop["RightInput"]
            current = hop["RightInput"] if bit else hop["LeftInput"]
            for coordinate, digest in (
                ((level, position), current),
                ((level, position ^ 1), sibling),
                ((level + 1, position >> 1), hop["Parent"]),
            ):
                if seen.setdefault(coordinate, bytes(digest)) != bytes(digest):
                    return _spurious(f"walks disagree on node {coordinate}")

    if nodes_ltr != {bytes(leaf) for leaf in bundle.claimed_leaves}:
        return _spurious("claimed leaves differ from the leaves proven by LTR")

    for (level, position), digest in seen.items():
        if digest == chain[level]:
            continue
        if not any(index >> level == position for index in claimed_indices):
            return _spurious(f"non-default node at level {level} has no claimed leaf below it")
    return AuditResult(True, "data exclusivity verified")
