import pytest
from saltext.csmt.utils import core
from saltext.csmt.utils import proofsys
from saltext.csmt.utils import transforms
from saltext.csmt.utils.exceptions import KeyKindError
from saltext.csmt.utils.exceptions import ShapeError
from saltext.csmt.utils.exceptions import UnknownCircuitError
from saltext.csmt.utils.exceptions import WitnessMismatchError

SEED = b"\x5e" * 32
MU = b"\x01" * 16
TAU = b"\x02" * 16


@pytest.fixture
def registry():
    registry = transforms.TransformRegistry()
    registry.register_transform(transforms.bincount_spec("bins", [0, 10, 20, 30], 12))
    return registry


@pytest.fixture
def backend(registry):
    return proofsys.TranscriptBackend(registry, SEED)


@pytest.fixture
def ltr_keys(backend, registry):
    return backend.setup(proofsys.ltr_circuit(registry.transform("bins")))


def _ltr_witness(delta=(15.0,)):
    return {"delta": list(delta), "mu": MU, "tau": TAU}


def _ltr_publics(registry, delta=(15.0,)):
    leaf = transforms.apply_salted_transform(registry.transform("bins"), list(delta), MU, TAU)
    return {
        "Input1": core.record_digest(list(delta), MU),
        "Input2": core.salt_digest(TAU),
        "Output": leaf.digest,
    }


def test_setup_is_deterministic(backend, registry):
    circuit = proofsys.ltr_circuit(registry.transform("bins"))
    assert backend.setup(circuit) == backend.setup(circuit)
    other = proofsys.TranscriptBackend(registry, b"\x00" * 32).setup(circuit)
    assert other.vk != backend.setup(circuit).vk


def test_security_bits(backend, registry):
    circuit = proofsys.ltr_circuit(registry.transform("bins"))
    keys = backend.setup(circuit, security_bits=256)
    assert len(keys.pk.seed) == 32
    assert keys.vk.security_bits == 256
    with pytest.raises(ShapeError):
        backend.setup(circuit, security_bits=100)


def test_unknown_circuits(backend, registry):
    with pytest.raises(UnknownCircuitError):
        backend.setup(proofsys.ltr_circuit(transforms.count_spec("count", 12)))
    with pytest.raises(UnknownCircuitError):
        backend.setup(proofsys.ltr_circuit(transforms.bincount_spec("bins", [0, 10, 20, 40], 12)))
    with pytest.raises(UnknownCircuitError):
        backend.setup(proofsys.ltr_circuit(transforms.bincount_spec("bins", [0, 10, 20, 30], 8)))
    with pytest.raises(UnknownCircuitError):
        backend.setup(proofsys.post_circuit("median", 12))


def test_ltr_prove_and_verify(backend, registry, ltr_keys):
    artifact = backend.prove(ltr_keys.pk, _ltr_witness(), _ltr_publics(registry), proofsys.CircuitKind.LTR)
    assert artifact["Output"] == _ltr_publics(registry)["Output"]
    assert proofsys.verify(ltr_keys.vk, artifact)
    assert backend.verify(ltr_keys.vk, artifact).flag is True
    assert proofsys.ProofArtifact.from_dict(artifact.to_dict()) == artifact


def test_artifact_holds_no_witness_bytes(backend, registry, ltr_keys):
    artifact = backend.prove(ltr_keys.pk, _ltr_witness(), _ltr_publics(registry))
    blob = repr(artifact.to_dict()).encode()
    assert MU.hex().encode() not in blob
    assert TAU.hex().encode() not in blob


def test_tampered_public_breaks_the_binding(backend, registry, ltr_keys):
    artifact = backend.prove(ltr_keys.pk, _ltr_witness(), _ltr_publics(registry))
    for name in ("Input1", "Input2", "Output"):
        forged = artifact.replace_public(name, b"\xaa" * 32)
        outcome = proofsys.verify(ltr_keys.vk, forged)
        assert not outcome
        assert outcome.reason == proofsys.BAD_BINDING


def test_wrong_key_or_layout(backend, registry, ltr_keys):
    artifact = backend.prove(ltr_keys.pk, _ltr_witness(), _ltr_publics(registry))
    mrp_keys = backend.setup(proofsys.mrp_circuit(registry.aggregator("sum"), 12))
    assert proofsys.verify(mrp_keys.vk, artifact).reason == proofsys.UNKNOWN_CIRCUIT
    reordered = proofsys.ProofArtifact(artifact.circuit, artifact.publics[::-1], artifact.binding)
    assert proofsys.verify(ltr_keys.vk, reordered).reason == proofsys.FIELD_MISMATCH
    foreign = proofsys.ProofArtifact(artifact.circuit, artifact.publics, artifact.binding, backend="groth16")
    assert proofsys.verify(ltr_keys.vk, foreign).reason == proofsys.UNKNOWN_CIRCUIT


def test_prove_refuses_a_mismatching_witness(backend, registry, ltr_keys):
    with pytest.raises(WitnessMismatchError):
        backend.prove(ltr_keys.pk, _ltr_witness((25.0,)), _ltr_publics(registry))


def test_prove_checks_key_kind_and_fields(backend, registry, ltr_keys):
    with pytest.raises(KeyKindError):
        backend.prove(ltr_keys.pk, _ltr_witness(), _ltr_publics(registry), proofsys.CircuitKind.MRP)
    publics = dict(_ltr_publics(registry))
    publics.pop("Output")
    with pytest.raises(KeyKindError):
        backend.prove(ltr_keys.pk, _ltr_witness(), publics)
    with pytest.raises(KeyKindError):
        backend.prove(ltr_keys.pk, {"delta": [15.0]}, _ltr_publics(registry))


def test_mrp_prove(backend, registry):
    keys = backend.setup(proofsys.mrp_circuit(registry.aggregator("sum"), 0))
    left = transforms.NodeValue.of([core.FixedPoint(2, 0)])
    right = transforms.NodeValue.of([core.FixedPoint(3, 0)])
    parent = transforms.aggregate_pair(registry.aggregator("sum"), left, right)
    nonce = b"\x09" * 16
    publics = [
        ("LeftInput", left.digest),
        ("RightInput", right.digest),
        ("Parent", parent.digest),
        ("Bit", core.bit_digest(1)),
        ("Nonce", core.nonce_digest(nonce)),
    ]
    witness = {"left": left, "right": right, "bit": 1, "nonce": nonce}
    artifact = backend.prove(keys.pk, witness, publics, proofsys.CircuitKind.MRP)
    assert proofsys.verify(keys.vk, artifact)
    with pytest.raises(WitnessMismatchError):
        backend.prove(keys.pk, dict(witness, bit=0), publics)


def test_verification_key_dict(ltr_keys):
    vk = proofsys.VerificationKey.from_dict(ltr_keys.vk.to_dict())
    assert vk == ltr_keys.vk
    assert vk.key_id == ltr_keys.vk.key_id
