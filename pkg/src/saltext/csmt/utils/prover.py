"""
CRO side of the protocol: salted leaf transformation, tree building and proof generation.
"""
import logging
import threading
from dataclasses import dataclass
from dataclasses import replace
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

from . import core
from . import tree as csmt
from .exceptions import AcquisitionError
from .exceptions import DuplicateError
from .exceptions import IndexMismatchError
from .exceptions import LeafCollisionError
from .exceptions import NotBuiltError
from .exceptions import NotFoundError
from .exceptions import ShapeError
from .proofsys import CircuitKind
from .proofsys import KeyPair
from .proofsys import ProofArtifact
from .proofsys import TranscriptBackend
from .proofsys import ltr_circuit
from .proofsys import mrp_circuit
from .store import WitnessStore
from .transforms import LeafValue
from .transforms import TransformRegistry
from .transforms import apply_salted_transform

log = logging.getLogger(__name__)

NONCE_LENGTH = 16


@dataclass(frozen=True)
class CohortSpec:
    all_users: Tuple[str, ...]
    included: Tuple[str, ...]

    def __post_init__(self):
        if len(set(self.all_users)) != len(self.all_users):
            raise DuplicateError("User ids in a cohort must be unique")
        missing = set(self.included) - set(self.all_users)
        if missing:
            raise ShapeError(f"Included users {sorted(missing)} are not part of the cohort")

    @classmethod
    def of(cls, all_users, included=None):
        all_users = tuple(all_users)
        return cls(all_users, all_users if included is None else tuple(included))


@dataclass(frozen=True)
class LeafTransformResult:
    leaf: LeafValue
    h_leaf: core.Digest
    h_tau: core.Digest
    index: int


@dataclass(frozen=True)
class BuildResult:
    tree_id: str
    root: object
    h_root: core.Digest
    deliveries: Dict[str, str]
    record: dict


@dataclass(frozen=True)
class CsmtProofSet:
    """
    LTR artifact plus the ``K`` MRP hop artifacts of one leaf
    """

    ltr: Optional[ProofArtifact]
    mrp_hops: Tuple[ProofArtifact, ...]
    path: core.BinaryPath
    root_digest: core.Digest
    h_leaf: core.Digest
    index: int
    nonce: bytes

    def to_dict(self):
        return {
            "ltr": self.ltr.to_dict() if self.ltr else None,
            "mrp_hops": [hop.to_dict() for hop in self.mrp_hops],
            "path": list(self.path),
            "root_digest": self.root_digest.hex(),
            "h_leaf": self.h_leaf.hex(),
            "index": self.index,
            "nonce": self.nonce.hex(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            ProofArtifact.from_dict(data["ltr"]) if data.get("ltr") else None,
            tuple(ProofArtifact.from_dict(hop) for hop in data["mrp_hops"]),
            tuple(int(bit) for bit in data["path"]),
            core.Digest.from_hex(data["root_digest"]),
            core.Digest.from_hex(data["h_leaf"]),
            int(data["index"]),
            bytes.fromhex(data["nonce"]),
        )


class Cro:
    """
    Clinical research organisation acting as prover.

    registry / backend
        Transform registry and proof backend shared with the verifiers.

    witnesses
        Private :class:`WitnessStore`.

    bulletin
        Public :class:`~saltext.csmt.utils.bulletin.Bulletin` receiving the roots and keys.
    """

    def __init__(
        self,
        registry: TransformRegistry,
        backend: TranscriptBackend,
        witnesses: WitnessStore,
        bulletin=None,
        height=16,
        security_bits=128,
        salt_length=core.SALT_LENGTH,
    ):
        self.registry = registry
        self.backend = backend
        self.witnesses = witnesses
        self.bulletin = bulletin
        self.height = height
        self.security_bits = security_bits
        self.salt_length = salt_length
        self._lock = threading.RLock()
        self._keys = {}
        self._trees: Dict[str, csmt.TreeHandle] = {}
        self._roots: Dict[bytes, str] = {}
        for tree_id in witnesses.tree_ids():
            self._roots[core.Digest.from_hex(witnesses.get_tree(tree_id)["root"])] = tree_id

    def keys(self, circuit) -> KeyPair:
        with self._lock:
            if circuit not in self._keys:
                self._keys[circuit] = self.backend.setup(circuit, self.security_bits)
            return self._keys[circuit]

    def ltr_keys(self, transform_id):
        return self.keys(ltr_circuit(self.registry.transform(transform_id)))

    def mrp_keys(self, aggregator_id, scale):
        return self.keys(mrp_circuit(self.registry.aggregator(aggregator_id), scale))

    def leaf_transform(self, delta, mu, tau, transform_id) -> LeafTransformResult:
        """
        Transform one record, derive its leaf index and store the witness.
        """
        spec = self.registry.transform(transform_id)
        leaf = apply_salted_transform(spec, delta, mu, tau, self.salt_length)
        h_raw = core.record_digest(delta, mu)
        h_tau = core.salt_digest(tau)
        self.witnesses.put_ltr(h_raw, h_tau, ltr_circuit(spec), delta, mu, tau, leaf)
        return LeafTransformResult(leaf, leaf.digest, h_tau, core.derive_leaf_index(leaf.digest, self.height))

    def cro_build(self, study_id, cohort: CohortSpec, phr, transform_id, aggregator_id="sum", tree_id=None, publish=True):
        """
        Transform every cohort user, build the tree over the included ones and publish
        its root with both verification keys.

        Returns a :class:`BuildResult` whose ``deliveries`` map every user to the hex
        digest of their transform salt.
        """
        spec = self.registry.transform(transform_id)
        aggregator = self.registry.aggregator(aggregator_id)
        tree_id = tree_id or f"{study_id}/{transform_id}"
        results = {}
        for user_id in cohort.all_users:
            try:
                record = phr.fetch(user_id)
            except NotFoundError as exc:
                raise AcquisitionError(f"Cannot fetch {user_id} from the PHR database: {exc}") from None
            results[user_id] = self.leaf_transform(record.delta, record.mu, record.tau, transform_id)

        claimed = {}
        for user_id in sorted(results):
            index = results[user_id].index
            if index in claimed:
                raise LeafCollisionError(index, claimed[index], user_id)
            claimed[index] = user_id

        included = {results[user_id].index: results[user_id].leaf for user_id in cohort.included}
        owners = {results[user_id].index: user_id for user_id in cohort.included}
        config = csmt.TreeConfig(self.height, transform_id, aggregator_id, spec.scale, self.salt_length)
        handle = csmt.build_smt(included, config, spec, aggregator, owners)
        with self._lock:
            if tree_id in self._trees:
                self._roots.pop(self._trees[tree_id].root.digest, None)
            self._trees[tree_id] = handle
            self._roots[handle.root.digest] = tree_id
            self.witnesses.put_tree(tree_id, csmt.dump_tree(handle))

        vk_ltr = self.ltr_keys(transform_id).vk
        vk_mrp = self.mrp_keys(aggregator_id, spec.scale).vk
        body = {
            "tree_id": tree_id,
            "transform_id": transform_id,
            "aggregator_id": aggregator_id,
            "height": self.height,
            "scale": spec.scale,
            "salt_length": self.salt_length,
            "transform": spec.to_dict(),
            "root": handle.root.digest.hex(),
            "vk_ltr": vk_ltr.to_dict(),
            "vk_mrp": vk_mrp.to_dict(),
            "phr_root": phr.root.hex(),
            "users": len(cohort.all_users),
            "included": len(cohort.included),
            "cohort": core.cohort_digest(cohort.included).hex(),
        }
        deliveries = {user_id: result.h_tau.hex() for user_id, result in results.items()}
        self.witnesses.put_deliveries(tree_id, deliveries)
        log.debug(f"Built {tree_id} over {len(included)} of {len(results)} users: {body['root'][:16]}")
        build = BuildResult(tree_id, handle.root, handle.root.digest, deliveries, body)
        return self.publish_build(study_id, build) if publish else build

    def publish_build(self, study_id, build: BuildResult) -> BuildResult:
        """
        Publish the root record of an unpublished build.
        """
        if self.bulletin is None:
            return build
        return replace(build, record=self.bulletin.publish("root", study_id, build.record))

    def delivery(self, tree_id, user_id):
        return self.witnesses.get_delivery(tree_id, user_id)

    def tree(self, tree_id) -> csmt.TreeHandle:
        with self._lock:
            if tree_id not in self._trees:
                try:
                    self._trees[tree_id] = csmt.load_tree(self.witnesses.get_tree(tree_id))
                except NotFoundError:
                    raise NotBuiltError(f"No tree '{tree_id}' has been built") from None
            return self._trees[tree_id]

    def tree_for_root(self, h_root) -> csmt.TreeHandle:
        with self._lock:
            if h_root is None:
                if len(self._roots) != 1:
                    raise NotBuiltError("Name the root of the tree to prove against")
                return self.tree(next(iter(self._roots.values())))
            try:
                return self.tree(self._roots[bytes(h_root)])
            except KeyError:
                raise NotBuiltError(f"No tree with root {bytes(h_root).hex()[:16]}") from None

    def cro_ltr_prove(self, h_raw, h_tau, transform_id):
        """
        LTR proof for a processed record.

        Returns ``(h_leaf, index, artifact)``.
        """
        keys = self.ltr_keys(transform_id)
        witness = self.witnesses.get_ltr(h_raw, h_tau, keys.pk.circuit)
        leaf = LeafValue.deserialize(witness["leaf"])
        publics = {"Input1": h_raw, "Input2": h_tau, "Output": leaf.digest}
        artifact = self.backend.prove(keys.pk, witness, publics, CircuitKind.LTR)
        index = core.derive_leaf_index(leaf.digest, self.height)
        log.debug(f"LTR proof for {bytes(h_raw).hex()[:16]}: leaf index {index}")
        return leaf.digest, index, artifact

    def cro_mrp_prove(self, h_leaf, index, nonce, h_root=None):
        """
        The ``K`` hop proofs from the slot at ``index`` to the root, leaf side first.

        Returns ``(h_root, hops, path)``. An unoccupied slot yields an exclusion proof whose
        first hop starts from the default leaf.
        """
        handle = self.tree_for_root(h_root)
        if core.derive_leaf_index(h_leaf, handle.height) != index:
            raise IndexMismatchError(f"Leaf index {index} is not derived from the given leaf digest")
        path = core.index_to_path(index, handle.height)
        keys = self.mrp_keys(handle.config.aggregator_id, handle.config.scale)
        hops: List[ProofArtifact] = []
        for level in range(handle.height):
            position = index >> level
            bit = position & 1
            current = csmt.node_at(handle, level, position)
            sibling = csmt.node_at(handle, level, position ^ 1)
            left, right = (sibling, current) if bit else (current, sibling)
            parent = csmt.node_at(handle, level + 1, position >> 1)
            witness = {"left": left, "right": right, "bit": bit, "nonce": nonce}
            publics = {
                "LeftInput": left.digest,
                "RightInput": right.digest,
                "Parent": parent.digest,
                "Bit": core.bit_digest(bit),
                "Nonce": core.nonce_digest(nonce),
            }
            hops.append(self.backend.prove(keys.pk, witness, publics, CircuitKind.MRP))
        log.debug(f"MRP proof for index {index}: {len(hops)} hops")
        return handle.root.digest, tuple(hops), path

    def prove_record(self, h_raw, h_tau, transform_id, nonce, h_root=None) -> CsmtProofSet:
        h_leaf, index, ltr = self.cro_ltr_prove(h_raw, h_tau, transform_id)
        h_root, hops, path = self.cro_mrp_prove(h_leaf, index, nonce, h_root)
        return CsmtProofSet(ltr, hops, path, h_root, h_leaf, index, bytes(nonce))
