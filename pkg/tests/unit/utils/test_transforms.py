import math
import random

import pytest
from saltext.csmt.utils import core
from saltext.csmt.utils import transforms
from saltext.csmt.utils.exceptions import AggregationOverflowError
from saltext.csmt.utils.exceptions import ConfigError
from saltext.csmt.utils.exceptions import DuplicateError
from saltext.csmt.utils.exceptions import OutOfRangeError
from saltext.csmt.utils.exceptions import ShapeError
from saltext.csmt.utils.exceptions import UnknownCircuitError

CAG_BINS = [0, 11, 22, 33, 44, 55, 66, 77, 88, 99, 110, 121, 132]
MU = b"\x01" * 16
TAU = b"\x02" * 16


def _node(*raws, scale=0):
    return transforms.NodeValue.of([core.FixedPoint(raw, scale) for raw in raws])


def test_bincount_picks_the_half_open_bin():
    onehot = transforms.bincount_transform(44, CAG_BINS)
    assert len(onehot) == 12
    assert onehot[4] == 1
    assert sum(onehot) == 1
    assert transforms.bincount_transform(43.9, CAG_BINS)[3] == 1
    assert transforms.bincount_transform(0, CAG_BINS)[0] == 1


@pytest.mark.parametrize("value", [-1, 132, 500])
def test_bincount_outside_the_edges(value):
    with pytest.raises(OutOfRangeError):
        transforms.bincount_transform(value, CAG_BINS)


def test_bincount_needs_ascending_edges():
    with pytest.raises(ShapeError):
        transforms.bincount_transform(1, [0, 5, 5, 10])
    with pytest.raises(ShapeError):
        transforms.bincount_transform(1, [0])


def test_loglik_with_zero_coefficients():
    assert transforms.loglik_transform([3.0], 1, [0.0, 0.0]) == pytest.approx(math.log(0.5))
    assert transforms.loglik_transform([3.0], 0, [0.0, 0.0]) == pytest.approx(math.log(0.5))


def test_loglik_is_clipped_away_from_zero():
    value = transforms.loglik_transform([1000.0], 0, [0.0, 1.0])
    assert math.isfinite(value)
    assert value == pytest.approx(math.log(transforms.SIGMOID_EPSILON))


def test_classassess_predicts_one_at_the_boundary():
    assert transforms.classassess_transform([2.0], 1, [0.0, 0.0]) == 1
    assert transforms.classassess_transform([2.0], 0, [0.0, 0.0]) == 0
    assert transforms.classassess_transform([2.0], 0, [0.0, -1.0]) == 1


def test_logistic_coefficient_count():
    with pytest.raises(ShapeError):
        transforms.loglik_transform([1.0, 2.0], 1, [0.0, 1.0])
    with pytest.raises(ShapeError):
        transforms.loglik_spec("ll", [0.0, 1.0], 12, select=(0, 1))
    with pytest.raises(ShapeError):
        transforms.classassess_spec("ca", [0.0, 1.0], 12, input_dim=2, select=(1,))


def test_apply_salted_transform():
    spec = transforms.loglik_spec("ll", [0.0, 0.0], 12)
    assert spec.input_dim == 2
    assert spec.select == (0,)
    leaf = transforms.apply_salted_transform(spec, [3.0, 1.0], MU, TAU)
    assert leaf.payload == (core.encode_fixed(math.log(0.5), 12),)
    assert leaf.tau_tag == TAU


def test_salt_tag_enters_the_digest_only():
    spec = transforms.count_spec("count", 12)
    first = transforms.apply_salted_transform(spec, [7.0], MU, TAU)
    second = transforms.apply_salted_transform(spec, [7.0], MU, b"\x03" * 16)
    assert first.payload == second.payload
    assert first.digest != second.digest
    assert first.as_node().digest == first.digest


def test_apply_salted_transform_checks_shapes():
    spec = transforms.bincount_spec("bins", CAG_BINS, 12)
    with pytest.raises(ShapeError):
        transforms.apply_salted_transform(spec, [1.0, 2.0], MU, TAU)
    with pytest.raises(ShapeError):
        transforms.apply_salted_transform(spec, [1.0], MU, b"\x02" * 15)
    with pytest.raises(ShapeError):
        transforms.apply_salted_transform(spec, [1.0], b"\x01", TAU)


def test_leaf_serialization():
    spec = transforms.bincount_spec("bins", CAG_BINS, 12)
    leaf = transforms.apply_salted_transform(spec, [44], MU, TAU)
    assert transforms.LeafValue.deserialize(leaf.serialize()) == leaf
    with pytest.raises(ShapeError):
        transforms.LeafValue.deserialize(core.canonical_serialize([]))


def test_default_element():
    spec = transforms.bincount_spec("bins", CAG_BINS, 10)
    default = transforms.default_element(spec)
    assert default.payload == tuple(core.FixedPoint(0, 10) for _ in range(12))
    assert default.tau_tag == bytes(16)


def test_default_node_is_an_identity():
    aggregator = transforms.AggregatorSpec("sum")
    node = _node(3, -4)
    summed = transforms.aggregate_pair(aggregator, node, _node(0, 0))
    assert summed.payload == node.payload


def test_aggregate_overflow():
    aggregator = transforms.AggregatorSpec("sum")
    with pytest.raises(AggregationOverflowError):
        transforms.aggregate_pair(aggregator, _node(1 << 62), _node(1 << 62))


def test_aggregate_mismatches():
    aggregator = transforms.AggregatorSpec("sum")
    with pytest.raises(ShapeError):
        transforms.aggregate_pair(aggregator, _node(1), _node(1, 2))
    with pytest.raises(ShapeError):
        transforms.aggregate_pair(aggregator, _node(1, scale=8), _node(1, scale=12))


def test_aggregator_spec_only_allows_sum():
    with pytest.raises(ConfigError):
        transforms.AggregatorSpec("max", kind="max")
    with pytest.raises(ConfigError):
        transforms.AggregatorSpec("sum3", arity=3)


def test_params_do_not_depend_on_the_working_scale():
    coarse = transforms.bincount_spec("bins", CAG_BINS, 8)
    fine = transforms.bincount_spec("bins", CAG_BINS, 14)
    assert coarse.params == fine.params
    assert coarse.params_digest == fine.params_digest
    assert all(value.scale == core.PARAM_SCALE for value in coarse.params)


def test_transform_spec_dict_round_trip():
    spec = transforms.classassess_spec("ca", [0.5, -1.25, 2.0], 12, input_dim=4, select=(0, 2))
    assert transforms.TransformSpec.from_dict(spec.to_dict()) == spec


def test_registry():
    registry = transforms.TransformRegistry()
    spec = transforms.count_spec("count", 12)
    registry.register_transform(spec)
    registry.register_transform(spec)
    assert registry.transform("count") is spec
    assert registry.aggregator("sum").kind == "sum"
    with pytest.raises(DuplicateError):
        registry.register_transform(transforms.count_spec("count", 8))
    with pytest.raises(UnknownCircuitError):
        registry.transform("nope")
    with pytest.raises(UnknownCircuitError):
        registry.aggregator("nope")


def test_spec_from_config():
    spec = transforms.spec_from_config({"id": "ll", "kind": "loglik", "coefficients": [0, 1, 2]}, 10)
    assert spec.scale == 10
    assert spec.select == (0, 1)
    with pytest.raises(ConfigError):
        transforms.spec_from_config({"id": "x"}, 12)
    with pytest.raises(ConfigError):
        transforms.spec_from_config({"id": "x", "kind": "median"}, 12)


def test_load_registry_config(tmp_path):
    config = tmp_path / "transforms.yaml"
    config.write_text(
        "transforms:\n"
        "  - id: cag-bins\n"
        "    kind: bincount\n"
        "    bins: [0, 11, 22, 33]\n"
        "  - id: ll\n"
        "    kind: loglik\n"
        "    coefficients: [0.1, 0.2]\n"
        "    scale: 14\n"
        "aggregators:\n"
        "  - id: total\n"
    )
    registry = transforms.load_registry_config(str(config))
    assert registry.transform("cag-bins").output_dim == 3
    assert registry.transform("cag-bins").scale == 12
    assert registry.transform("ll").scale == 14
    assert registry.aggregator("total").kind == "sum"


def _tau(rng):
    return rng.getrandbits(128).to_bytes(16, "little")


def test_transform_salts_separate_identical_records():
    rng = random.Random(3)
    spec = transforms.bincount_spec("bins", CAG_BINS, 12)
    pairs = [(_tau(rng), _tau(rng)) for _ in range(10_000)]
    taus = {tau for pair in pairs for tau in pair}
    digests = {tau: transforms.apply_salted_transform(spec, [44.0], MU, tau).digest for tau in taus}
    assert len(set(digests.values())) == len(taus)
    assert all(digests[first] != digests[second] for first, second in pairs if first != second)


def test_sum_is_a_commutative_monoid():
    rng = random.Random(4)
    aggregator = transforms.AggregatorSpec("sum")
    spec = transforms.identity_spec("identity", 12, dim=3)
    identity = transforms.default_element(spec).as_node()
    bound = 1 << 60
    for _ in range(10_000):
        x = _node(*(rng.randint(-bound, bound) for _ in range(3)), scale=12)
        y = _node(*(rng.randint(-bound, bound) for _ in range(3)), scale=12)
        assert transforms.aggregate_pair(aggregator, x, identity).payload == x.payload
        assert transforms.aggregate_pair(aggregator, identity, x).payload == x.payload
        assert transforms.aggregate_pair(aggregator, x, y) == transforms.aggregate_pair(aggregator, y, x)
