"""
Setup / Prove / Verify contract and the reference transcript backend.

The transcript backend re-executes a circuit on the witness, refuses to issue a proof when
the result disagrees with the claimed public fields, and emits a binding tag
``H(vk bytes || canonical publics)``. An artifact therefore depends on the verification key
and the public digests only; no witness byte ever reaches it.
"""
import enum
import logging
from dataclasses import dataclass
from typing import Dict
from typing import Mapping
from typing import Optional
from typing import Tuple

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import core
from .exceptions import KeyKindError
from .exceptions import ShapeError
from .exceptions import UnknownCircuitError
from .exceptions import WitnessMismatchError
from .transforms import NodeValue
from .transforms import TransformRegistry
from .transforms import aggregate_pair
from .transforms import apply_salted_transform

log = logging.getLogger(__name__)

BACKEND_NAME = "transcript"
ARTIFACT_VERSION = 1
DEFAULT_SECURITY_BITS = 128

BAD_BINDING = "bad-binding"
FIELD_MISMATCH = "field-mismatch"
UNKNOWN_CIRCUIT = "unknown-circuit"


class CircuitKind(str, enum.Enum):
    LTR = "LTR"
    MRP = "MRP"
    POST = "POST"


PUBLIC_FIELDS = {
    CircuitKind.LTR: ("Input1", "Input2", "Output"),
    CircuitKind.MRP: ("LeftInput", "RightInput", "Parent", "Bit", "Nonce"),
    CircuitKind.POST: ("Input1", "Input2", "Output"),
}


@dataclass(frozen=True)
class CircuitId:
    kind: CircuitKind
    target_id: str
    params_digest: core.Digest
    scale: int

    def to_bytes(self):
        return core.canonical_serialize(
            [
                self.kind.value.encode(),
                self.target_id.encode(),
                self.params_digest,
                bytes([self.scale]),
            ]
        )

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "target_id": self.target_id,
            "params_digest": self.params_digest.hex(),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            CircuitKind(data["kind"]),
            data["target_id"],
            core.Digest.from_hex(data["params_digest"]),
            int(data["scale"]),
        )


def statistic_params_digest(name):
    return core.hash_fields([b"statistic", name.encode()])


def ltr_circuit(transform):
    return CircuitId(CircuitKind.LTR, transform.id, transform.params_digest, transform.scale)


def mrp_circuit(aggregator, scale):
    return CircuitId(CircuitKind.MRP, aggregator.id, aggregator.params_digest, scale)


def post_circuit(statistic, scale):
    return CircuitId(CircuitKind.POST, statistic, statistic_params_digest(statistic), scale)


@dataclass(frozen=True)
class VerificationKey:
    circuit: CircuitId
    binding: core.Digest
    security_bits: int = DEFAULT_SECURITY_BITS

    def to_bytes(self):
        return core.canonical_serialize(
            [b"vk", self.circuit.to_bytes(), self.binding, self.security_bits.to_bytes(2, "little")]
        )

    @property
    def key_id(self):
        return core.hash_node(self.to_bytes()).hex()

    def to_dict(self):
        return {
            "circuit": self.circuit.to_dict(),
            "binding": self.binding.hex(),
            "security_bits": self.security_bits,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            CircuitId.from_dict(data["circuit"]),
            core.Digest.from_hex(data["binding"]),
            int(data.get("security_bits", DEFAULT_SECURITY_BITS)),
        )


@dataclass(frozen=True)
class ProvingKey:
    circuit: CircuitId
    seed: bytes
    security_bits: int = DEFAULT_SECURITY_BITS

    def verification_key(self):
        binding = core.hash_fields([b"vk", self.circuit.to_bytes(), self.seed])
        return VerificationKey(self.circuit, binding, self.security_bits)


@dataclass(frozen=True)
class KeyPair:
    pk: ProvingKey
    vk: VerificationKey


@dataclass(frozen=True)
class ProofArtifact:
    """
    Issued proof: circuit id, ordered named public digests and the binding tag
    """

    circuit: CircuitId
    publics: Tuple[Tuple[str, core.Digest], ...]
    binding: core.Digest
    backend: str = BACKEND_NAME
    version: int = ARTIFACT_VERSION

    def __getitem__(self, name):
        for field_name, value in self.publics:
            if field_name == name:
                return value
        raise KeyError(name)

    def public_dict(self):
        return dict(self.publics)

    def replace_public(self, name, value):
        """
        Copy of the artifact with one public field swapped (binding untouched)
        """
        publics = tuple((key, core.Digest(value) if key == name else old) for key, old in self.publics)
        return ProofArtifact(self.circuit, publics, self.binding, self.backend, self.version)

    def to_dict(self):
        return {
            "version": self.version,
            "backend": self.backend,
            "circuit": self.circuit.to_dict(),
            "publics": [[name, value.hex()] for name, value in self.publics],
            "binding": self.binding.hex(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            CircuitId.from_dict(data["circuit"]),
            tuple((name, core.Digest.from_hex(value)) for name, value in data["publics"]),
            core.Digest.from_hex(data["binding"]),
            data.get("backend", BACKEND_NAME),
            int(data.get("version", ARTIFACT_VERSION)),
        )


@dataclass(frozen=True)
class VerificationOutcome:
    flag: bool
    reason: Optional[str] = None
    stage: Optional[str] = None
    detail: Optional[str] = None

    def __bool__(self):
        return self.flag

    def to_dict(self):
        return {"flag": self.flag, "reason": self.reason, "stage": self.stage, "detail": self.detail}


PASSED = VerificationOutcome(True)


def canonical_publics(publics):
    fields = []
    for name, value in publics:
        fields.extend([name.encode(), value])
    return core.canonical_serialize(fields)


def binding_tag(vk: VerificationKey, publics):
    return core.hash_node(vk.to_bytes() + canonical_publics(publics))


class TranscriptBackend:
    """
    Re-execution-checked reference backend.

    registry
        :class:`TransformRegistry` resolving the circuit targets.

    seed
        Backend secret; proving keys are derived from it with HKDF-SHA256.
    """

    name = BACKEND_NAME

    def __init__(self, registry: TransformRegistry, seed: bytes):
        self.registry = registry
        self.seed = bytes(seed)

    def _check_registered(self, circuit: CircuitId):
        if circuit.kind is CircuitKind.LTR:
            spec = self.registry.transform(circuit.target_id)
            if spec.params_digest != circuit.params_digest or spec.scale != circuit.scale:
                raise UnknownCircuitError(f"Circuit parameters differ from transform '{spec.id}'")
            return spec
        if circuit.kind is CircuitKind.MRP:
            spec = self.registry.aggregator(circuit.target_id)
            if spec.params_digest != circuit.params_digest:
                raise UnknownCircuitError(f"Circuit parameters differ from aggregator '{spec.id}'")
            return spec
        if circuit.target_id not in self.registry.statistics:
            raise UnknownCircuitError(f"Statistic '{circuit.target_id}' is not registered")
        if statistic_params_digest(circuit.target_id) != circuit.params_digest:
            raise UnknownCircuitError(f"Circuit parameters differ from statistic '{circuit.target_id}'")
        return circuit.target_id

    def setup(self, circuit: CircuitId, security_bits=DEFAULT_SECURITY_BITS) -> KeyPair:
        """
        Deterministic key generation for a registered circuit.
        """
        self._check_registered(circuit)
        if security_bits < 8 or security_bits % 8:
            raise ShapeError(f"Security parameter {security_bits} is not a positive multiple of 8")
        seed = HKDF(
            algorithm=hashes.SHA256(),
            length=security_bits // 8,
            salt=None,
            info=b"csmt-proving-key" + circuit.to_bytes(),
        ).derive(self.seed)
        pk = ProvingKey(circuit, seed, security_bits)
        pair = KeyPair(pk, pk.verification_key())
        log.debug(f"Setup {circuit.kind.value} circuit {circuit.target_id}: vk {pair.vk.key_id[:16]}")
        return pair

    def execute(self, circuit: CircuitId, witness: Mapping):
        """
        Run the circuit on the witness and return its ordered public fields.
        """
        spec = self._check_registered(circuit)
        try:
            if circuit.kind is CircuitKind.LTR:
                leaf = apply_salted_transform(spec, witness["delta"], witness["mu"], witness["tau"])
                return (
                    ("Input1", core.record_digest(witness["delta"], witness["mu"])),
                    ("Input2", core.salt_digest(witness["tau"])),
                    ("Output", leaf.digest),
                )
            if circuit.kind is CircuitKind.MRP:
                left: NodeValue = witness["left"]
                right: NodeValue = witness["right"]
                parent = aggregate_pair(spec, left, right)
                return (
                    ("LeftInput", left.recompute()),
                    ("RightInput", right.recompute()),
                    ("Parent", parent.digest),
                    ("Bit", core.bit_digest(witness["bit"])),
                    ("Nonce", core.nonce_digest(witness["nonce"])),
                )
            from . import stats  # pylint: disable=import-outside-toplevel

            first, second = witness["inputs"]
            zeta = stats.STATISTIC_KERNELS[spec](first.payload, second.payload, circuit.scale)
            return (
                ("Input1", first.recompute()),
                ("Input2", second.recompute()),
                ("Output", core.hash_fields([zeta])),
            )
        except KeyError as exc:
            raise KeyKindError(f"Witness for a {circuit.kind.value} circuit lacks {exc}") from None

    def prove(self, pk: ProvingKey, witness: Mapping, publics, kind: CircuitKind = None) -> ProofArtifact:
        """
        Issue an artifact for ``publics`` after checking the witness reproduces them.

        publics
            Mapping or ordered pairs of public field name to digest.

        kind
            Circuit kind the caller expects ``pk`` to be for.
        """
        if kind is not None and pk.circuit.kind is not kind:
            raise KeyKindError(f"Expected a {kind.value} proving key, got {pk.circuit.kind.value}")
        claimed: Dict[str, bytes] = dict(publics.items() if isinstance(publics, Mapping) else publics)
        computed = self.execute(pk.circuit, witness)
        if set(claimed) != {name for name, _ in computed}:
            raise KeyKindError(
                f"Public fields {sorted(claimed)} do not match a {pk.circuit.kind.value} circuit"
            )
        for name, value in computed:
            if bytes(claimed[name]) != value:
                raise WitnessMismatchError(f"Witness does not reproduce public field {name}")
        vk = pk.verification_key()
        return ProofArtifact(pk.circuit, computed, binding_tag(vk, computed))

    def verify(self, vk: VerificationKey, artifact: ProofArtifact) -> VerificationOutcome:
        return verify(vk, artifact)


def verify(vk: VerificationKey, artifact: ProofArtifact) -> VerificationOutcome:
    """
    Pure artifact check; needs only the verification key.
    """
    if artifact.circuit != vk.circuit:
        return VerificationOutcome(False, UNKNOWN_CIRCUIT, detail="circuit id differs from the key")
    if artifact.backend != BACKEND_NAME or artifact.version != ARTIFACT_VERSION:
        return VerificationOutcome(False, UNKNOWN_CIRCUIT, detail=f"unsupported backend {artifact.backend}")
    names = tuple(name for name, _ in artifact.publics)
    if names != PUBLIC_FIELDS[artifact.circuit.kind]:
        return VerificationOutcome(False, FIELD_MISMATCH, detail=f"unexpected public fields {names}")
    if binding_tag(vk, artifact.publics) != artifact.binding:
        return VerificationOutcome(False, BAD_BINDING)
    return PASSED
