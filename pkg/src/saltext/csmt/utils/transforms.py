"""
Salted leaf transforms, level aggregators and their registry.

A leaf transform maps a raw datum ``δ`` (plus the user salt ``μ``) to a fixed-point payload;
the transform salt ``τ`` rides along as a tag that enters the leaf digest but never the
aggregation arithmetic. The only aggregator family is element-wise sum, whose identity is
the all-zero default leaf.
"""
import functools
import logging
import struct
import threading
from dataclasses import dataclass
from dataclasses import field
from typing import Callable
from typing import Dict
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
import salt.utils.files
import salt.utils.yaml
from scipy.special import expit

from . import core
from .exceptions import AggregationOverflowError
from .exceptions import ConfigError
from .exceptions import DuplicateError
from .exceptions import OutOfRangeError
from .exceptions import ShapeError
from .exceptions import UnknownCircuitError

log = logging.getLogger(__name__)

SIGMOID_EPSILON = 2.0**-30
STATISTICS = ("ks_max_gap", "lrt_statistic", "accuracy")


@dataclass(frozen=True)
class TransformSpec:
    """
    A registered leaf transform.

    ``params`` are quantized at :data:`core.PARAM_SCALE`; ``scale`` is the working scale
    of the produced payload. ``select`` lists the datum columns a logistic transform
    reads as features (the label is always the last column).
    """

    id: str
    kind: str
    params: Tuple[core.FixedPoint, ...]
    input_dim: int
    output_dim: int
    scale: int
    select: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ConfigError(f"Unknown transform kind '{self.kind}'")
        if not 0 <= self.scale <= core.MAX_SCALE:
            raise ConfigError(f"Scale {self.scale} outside [0, {core.MAX_SCALE}]")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("Transforms need positive input and output dimensions")
        arity = TRANSFORM_KINDS[self.kind].arity(self)
        if arity is not None and len(self.params) != arity:
            raise ShapeError(f"Transform '{self.id}' expects {arity} parameters")

    @property
    def values(self):
        return core.decode_vector(self.params)

    @functools.cached_property
    def params_digest(self):
        select = struct.pack(f"<{len(self.select)}I", *self.select)
        dims = struct.pack("<II", self.input_dim, self.output_dim)
        return core.hash_fields([self.kind.encode(), dims, select, *self.params])

    def to_dict(self):
        return {
            "id": self.id,
            "kind": self.kind,
            "params": [value.raw for value in self.params],
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "scale": self.scale,
            "select": list(self.select),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            id=data["id"],
            kind=data["kind"],
            params=tuple(core.FixedPoint(raw, core.PARAM_SCALE) for raw in data["params"]),
            input_dim=data["input_dim"],
            output_dim=data["output_dim"],
            scale=data["scale"],
            select=tuple(data.get("select", ())),
        )


@dataclass(frozen=True)
class AggregatorSpec:
    id: str
    kind: str = "sum"
    params: Tuple[core.FixedPoint, ...] = ()
    arity: int = 2
    default_absorbing: bool = True

    def __post_init__(self):
        if self.kind != "sum":
            raise ConfigError(f"Unsupported aggregator kind '{self.kind}'")
        if self.arity != 2:
            raise ConfigError("Aggregators are binary")
        if not self.default_absorbing:
            raise ConfigError("Aggregators must treat the default element as identity")

    @functools.cached_property
    def params_digest(self):
        return core.hash_fields([self.kind.encode(), bytes([self.arity]), *self.params])

    def to_dict(self):
        return {"id": self.id, "kind": self.kind, "params": [value.raw for value in self.params]}


@dataclass(frozen=True)
class LeafValue:
    """
    Salted transform output: the payload plus the transform salt tag
    """

    payload: Tuple[core.FixedPoint, ...]
    tau_tag: bytes

    def fields(self):
        return list(self.payload) + [self.tau_tag]

    @functools.cached_property
    def digest(self):
        return core.hash_fields(self.fields())

    def serialize(self):
        return core.canonical_serialize(self.fields())

    @classmethod
    def deserialize(cls, data):
        raw_fields = core.split_fields(data)
        if not raw_fields:
            raise ShapeError("A serialized leaf holds at least its salt tag")
        payload = tuple(core.FixedPoint.from_bytes(item) for item in raw_fields[:-1])
        return cls(payload, bytes(raw_fields[-1]))

    def as_node(self):
        return NodeValue(self.payload, self.digest, self.tau_tag)


@dataclass(frozen=True)
class NodeValue:
    """
    Tree node: an aggregated payload and its digest.

    Leaves keep their salt tag, so a level 0 node digest equals the leaf digest.
    """

    payload: Tuple[core.FixedPoint, ...]
    digest: core.Digest
    tau_tag: Optional[bytes] = field(default=None)

    @classmethod
    def of(cls, payload, tau_tag=None):
        payload = tuple(payload)
        fields = list(payload) if tau_tag is None else list(payload) + [tau_tag]
        return cls(payload, core.hash_fields(fields), tau_tag)

    def recompute(self):
        return NodeValue.of(self.payload, self.tau_tag).digest

    @property
    def scale(self):
        return self.payload[0].scale if self.payload else 0

    @property
    def raws(self):
        return [value.raw for value in self.payload]

    def decoded(self):
        return core.decode_vector(self.payload)


def bincount_transform(value, bins: Sequence[float]):
    """
    One-hot vector of ``len(bins) - 1`` slots for the half-open bin holding ``value``.
    """
    edges = np.asarray(bins, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ShapeError("Bin edges must be strictly ascending with at least two entries")
    if not edges[0] <= value < edges[-1]:
        raise OutOfRangeError(f"{value} outside [{edges[0]}, {edges[-1]})")
    slot = int(np.searchsorted(edges, value, side="right")) - 1
    onehot = [0] * (edges.size - 1)
    onehot[slot] = 1
    return onehot


def _logit(x, beta):
    x = np.asarray(x, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if x.size + 1 != beta.size:
        raise ShapeError(f"{x.size} features need {x.size + 1} coefficients, got {beta.size}")
    return float(beta[0] + np.dot(beta[1:], x))


def loglik_transform(x, y, beta):
    """
    Bernoulli log-likelihood of label ``y`` under the logistic model ``beta``
    (intercept first).
    """
    sigma = float(np.clip(expit(_logit(x, beta)), SIGMOID_EPSILON, 1.0 - SIGMOID_EPSILON))
    if int(y) == 1:
        return float(np.log(sigma))
    return float(np.log1p(-sigma))


def classassess_transform(x, y, beta):
    """
    1 if the logistic prediction matches ``y``; ``σ = 0.5`` predicts class 1
    """
    predicted = 1 if expit(_logit(x, beta)) >= 0.5 else 0
    return int(predicted == int(y))


def _features(spec, delta):
    return [delta[column] for column in spec.select], delta[-1]


@dataclass(frozen=True)
class _Kind:
    evaluate: Callable
    arity: Callable


TRANSFORM_KINDS: Dict[str, _Kind] = {
    "identity": _Kind(lambda spec, delta: list(delta), lambda spec: 0),
    "count": _Kind(lambda spec, delta: [1], lambda spec: 0),
    "bincount": _Kind(
        lambda spec, delta: bincount_transform(delta[0], spec.values),
        lambda spec: spec.output_dim + 1,
    ),
    "loglik": _Kind(
        lambda spec, delta: [loglik_transform(*_features(spec, delta), spec.values)],
        lambda spec: len(spec.select) + 1,
    ),
    "classassess": _Kind(
        lambda spec, delta: [classassess_transform(*_features(spec, delta), spec.values)],
        lambda spec: len(spec.select) + 1,
    ),
}


def identity_spec(transform_id, scale, dim=1):
    return TransformSpec(transform_id, "identity", (), dim, dim, scale)


def count_spec(transform_id, scale, input_dim=1):
    return TransformSpec(transform_id, "count", (), input_dim, 1, scale)


def bincount_spec(transform_id, bins, scale):
    params = core.encode_vector(bins, core.PARAM_SCALE)
    return TransformSpec(transform_id, "bincount", params, 1, len(bins) - 1, scale)


def _logistic_spec(kind, transform_id, coefficients, scale, input_dim=None, select=None):
    if select is None:
        select = range(len(coefficients) - 1)
    select = tuple(int(column) for column in select)
    if input_dim is None:
        input_dim = len(select) + 1
    if any(not 0 <= column < input_dim - 1 for column in select):
        raise ShapeError(f"Feature columns {select} outside a datum of {input_dim - 1} features")
    if len(coefficients) != len(select) + 1:
        raise ShapeError(f"{len(select)} features need {len(select) + 1} coefficients")
    params = core.encode_vector(coefficients, core.PARAM_SCALE)
    return TransformSpec(transform_id, kind, params, input_dim, 1, scale, select)


def loglik_spec(transform_id, coefficients, scale, input_dim=None, select=None):
    return _logistic_spec("loglik", transform_id, coefficients, scale, input_dim, select)


def classassess_spec(transform_id, coefficients, scale, input_dim=None, select=None):
    return _logistic_spec("classassess", transform_id, coefficients, scale, input_dim, select)


def apply_salted_transform(spec: TransformSpec, delta, mu, tau, salt_length=core.SALT_LENGTH):
    """
    Evaluate ``spec`` on the datum and attach the transform salt.

    spec
        Registered :class:`TransformSpec`.

    delta
        Raw datum, ``spec.input_dim`` numbers.

    mu / tau
        User salt and transform salt.
    """
    delta = [float(value) for value in delta]
    if len(delta) != spec.input_dim:
        raise ShapeError(f"Transform '{spec.id}' reads {spec.input_dim} values, got {len(delta)}")
    core.check_salt(mu, salt_length)
    tau = core.check_salt(tau, salt_length)
    output = TRANSFORM_KINDS[spec.kind].evaluate(spec, delta)
    return LeafValue(core.encode_vector(output, spec.scale), tau)


def default_element(spec: TransformSpec, salt_length=core.SALT_LENGTH):
    """
    The value of every unoccupied leaf: zero payload, all-zero salt tag
    """
    return LeafValue(tuple(core.FixedPoint(0, spec.scale) for _ in range(spec.output_dim)), bytes(salt_length))


def aggregate_pair(spec: AggregatorSpec, left: NodeValue, right: NodeValue) -> NodeValue:
    """
    Element-wise sum of two node payloads; the salt tag never enters the arithmetic.
    """
    if len(left.payload) != len(right.payload):
        raise ShapeError(f"Cannot aggregate {len(left.payload)} and {len(right.payload)} slots")
    summed = []
    for lhs, rhs in zip(left.payload, right.payload):
        if lhs.scale != rhs.scale:
            raise ShapeError(f"Cannot aggregate scales {lhs.scale} and {rhs.scale}")
        raw = lhs.raw + rhs.raw
        if abs(raw) >= core.RAW_LIMIT:
            raise AggregationOverflowError(f"Aggregator '{spec.id}' overflowed 64 bits")
        summed.append(core.FixedPoint(raw, lhs.scale))
    return NodeValue.of(summed)


class TransformRegistry:
    """
    Append-only registry of transforms, aggregators and post-aggregation statistics.

    store
        Optional sealed store the transforms are persisted in and restored from.
    """

    def __init__(self, store=None):
        self._lock = threading.Lock()
        self.store = store
        self.transforms: Dict[str, TransformSpec] = {}
        self.aggregators: Dict[str, AggregatorSpec] = {"sum": AggregatorSpec("sum")}
        self.statistics = set(STATISTICS)
        if store is not None:
            for transform_id in store.keys("transforms"):
                self.transforms[transform_id] = TransformSpec.from_dict(store.get("transforms", transform_id))

    def register_transform(self, spec: TransformSpec):
        with self._lock:
            current = self.transforms.get(spec.id)
            if current is not None and current != spec:
                raise DuplicateError(f"Transform '{spec.id}' is already registered differently")
            if current is None and self.store is not None:
                self.store.put("transforms", spec.id, spec.to_dict())
            self.transforms[spec.id] = spec
        log.debug(f"Registered transform {spec.id} ({spec.kind}, scale {spec.scale})")
        return spec

    def register_aggregator(self, spec: AggregatorSpec):
        with self._lock:
            current = self.aggregators.get(spec.id)
            if current is not None and current != spec:
                raise DuplicateError(f"Aggregator '{spec.id}' is already registered differently")
            self.aggregators[spec.id] = spec
        return spec

    def transform(self, transform_id) -> TransformSpec:
        try:
            return self.transforms[transform_id]
        except KeyError:
            raise UnknownCircuitError(f"Transform '{transform_id}' is not registered") from None

    def aggregator(self, aggregator_id) -> AggregatorSpec:
        try:
            return self.aggregators[aggregator_id]
        except KeyError:
            raise UnknownCircuitError(f"Aggregator '{aggregator_id}' is not registered") from None


def spec_from_config(entry, default_scale):
    """
    Build a :class:`TransformSpec` from one declarative config entry.
    """
    try:
        kind = entry["kind"]
        transform_id = entry["id"]
    except KeyError as exc:
        raise ConfigError(f"Transform entry without {exc}") from None
    scale = int(entry.get("scale", default_scale))
    if kind == "bincount":
        return bincount_spec(transform_id, entry["bins"], scale)
    if kind in ("loglik", "classassess"):
        return _logistic_spec(
            kind,
            transform_id,
            entry["coefficients"],
            scale,
            entry.get("input_dim"),
            entry.get("select"),
        )
    if kind == "identity":
        return identity_spec(transform_id, scale, int(entry.get("dim", 1)))
    if kind == "count":
        return count_spec(transform_id, scale, int(entry.get("input_dim", 1)))
    raise ConfigError(f"Unknown transform kind '{kind}'")


def load_registry_config(filename, registry=None, default_scale=12):
    """
    Register the transforms and aggregators declared in a YAML file.

    .. code-block:: yaml

        transforms:
          - id: cag-bins
            kind: bincount
            bins: [0, 11, 22, 33]
            scale: 12
        aggregators:
          - id: sum
            kind: sum
    """
    registry = registry or TransformRegistry()
    with salt.utils.files.fopen(filename, "r") as fil:
        data = salt.utils.yaml.safe_load(fil) or {}
    for entry in data.get("transforms", []):
        registry.register_transform(spec_from_config(entry, default_scale))
    for entry in data.get("aggregators", []):
        registry.register_aggregator(AggregatorSpec(entry["id"], entry.get("kind", "sum")))
    log.debug(f"Loaded {len(data.get('transforms', []))} transforms from {filename}")
    return registry
