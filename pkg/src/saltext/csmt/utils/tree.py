"""
Computational sparse Merkle tree engine.

Only nodes above occupied leaves are materialized; every other node at level ``k`` is the
``k``-th entry of the default chain, the digest of a subtree that holds nothing but default
leaves. Level 0 holds the leaves, level ``K`` the root.
"""
import logging
from dataclasses import dataclass
from typing import Dict
from typing import List
from typing import Mapping

import salt.utils.atomicfile
import salt.utils.files
import salt.utils.json

from . import core
from .exceptions import LeafCollisionError
from .exceptions import OutOfRangeError
from .exceptions import ShapeError
from .exceptions import TreeIntegrityError
from .transforms import AggregatorSpec
from .transforms import LeafValue
from .transforms import NodeValue
from .transforms import TransformSpec
from .transforms import aggregate_pair
from .transforms import default_element

log = logging.getLogger(__name__)

TREE_FORMAT_VERSION = 1
MAX_TREE_HEIGHT = 32


@dataclass(frozen=True)
class TreeConfig:
    height: int
    transform_id: str
    aggregator_id: str
    scale: int
    salt_length: int = core.SALT_LENGTH

    def __post_init__(self):
        if not 1 <= self.height <= MAX_TREE_HEIGHT:
            raise OutOfRangeError(f"Tree height {self.height} outside [1, {MAX_TREE_HEIGHT}]")

    def to_dict(self):
        return {
            "height": self.height,
            "transform_id": self.transform_id,
            "aggregator_id": self.aggregator_id,
            "scale": self.scale,
            "salt_length": self.salt_length,
        }


def default_chain(transform: TransformSpec, aggregator: AggregatorSpec, height, salt_length=core.SALT_LENGTH):
    """
    ``height + 1`` node values; entry ``k`` is the root of an all-default subtree of height ``k``.
    """
    chain = [default_element(transform, salt_length).as_node()]
    for _ in range(height):
        chain.append(aggregate_pair(aggregator, chain[-1], chain[-1]))
    return chain


class TreeHandle:
    """
    A built tree. Immutable once :func:`build_smt` returns it.
    """

    def __init__(self, config, transform, aggregator, occupied, levels, chain, owners=None):
        self.config: TreeConfig = config
        self.transform: TransformSpec = transform
        self.aggregator: AggregatorSpec = aggregator
        self.occupied: Dict[int, LeafValue] = occupied
        self.owners: Dict[int, str] = owners or {}
        self.default_chain: List[NodeValue] = chain
        self._levels: List[Dict[int, NodeValue]] = levels

    @property
    def height(self):
        return self.config.height

    @property
    def root(self) -> NodeValue:
        return self._levels[self.height].get(0, self.default_chain[self.height])

    @property
    def default_leaf_digest(self):
        return self.default_chain[0].digest

    def materialized(self, level):
        return dict(self._levels[level])

    def __repr__(self):
        return (
            f"TreeHandle(height={self.height}, leaves={len(self.occupied)}, "
            f"root={self.root.digest.hex()[:16]})"
        )


def build_smt(leaves, config: TreeConfig, transform: TransformSpec, aggregator: AggregatorSpec, owners=None):
    """
    Build a tree over ``leaves``.

    leaves
        Mapping of leaf index to :class:`LeafValue`, or an iterable of ``(index, leaf)``
        pairs. A repeated index with an identical leaf is accepted once; a repeated
        index with a different leaf raises :class:`LeafCollisionError`.

    owners
        Optional mapping of leaf index to user id, used to name the colliding users.
    """
    if transform.scale != config.scale:
        raise ShapeError(f"Tree scale {config.scale} differs from transform scale {transform.scale}")
    pairs = leaves.items() if isinstance(leaves, Mapping) else leaves
    limit = 1 << config.height
    occupied: Dict[int, LeafValue] = {}
    for index, leaf in pairs:
        if not 0 <= index < limit:
            raise OutOfRangeError(f"Leaf index {index} outside [0, 2^{config.height})")
        if len(leaf.payload) != transform.output_dim:
            raise ShapeError(f"Leaf at {index} has {len(leaf.payload)} slots, expected {transform.output_dim}")
        current = occupied.get(index)
        if current is not None and current != leaf:
            names = owners or {}
            raise LeafCollisionError(index, names.get(index, "<unknown>"), "<another user>")
        occupied[index] = leaf

    chain = default_chain(transform, aggregator, config.height, config.salt_length)
    levels: List[Dict[int, NodeValue]] = [{index: leaf.as_node() for index, leaf in occupied.items()}]
    for level in range(config.height):
        below = levels[level]
        above: Dict[int, NodeValue] = {}
        for parent in sorted({position >> 1 for position in below}):
            left = below.get(2 * parent, chain[level])
            right = below.get(2 * parent + 1, chain[level])
            above[parent] = aggregate_pair(aggregator, left, right)
        levels.append(above)
    tree = TreeHandle(config, transform, aggregator, occupied, levels, chain, owners)
    log.debug(f"Built {tree!r}")
    return tree


def root(tree: TreeHandle) -> NodeValue:
    return tree.root


def node_at(tree: TreeHandle, level, position) -> NodeValue:
    """
    Materialized node at ``(level, position)``, or the default chain entry for the level.
    """
    if not 0 <= level <= tree.height:
        raise OutOfRangeError(f"Level {level} outside [0, {tree.height}]")
    if not 0 <= position < (1 << (tree.height - level)):
        raise OutOfRangeError(f"Position {position} outside level {level}")
    return tree._levels[level].get(position, tree.default_chain[level])  # pylint: disable=protected-access


def siblings_along_path(tree: TreeHandle, index) -> List[NodeValue]:
    """
    The ``K`` siblings met walking from leaf ``index`` to the root, leaf side first.
    """
    core.index_to_path(index, tree.height)
    return [node_at(tree, level, (index >> level) ^ 1) for level in range(tree.height)]


def fold_path(aggregator: AggregatorSpec, leaf: NodeValue, index, siblings) -> NodeValue:
    """
    Recompute the root from a leaf and its siblings; the path bit at hop ``k`` is
    ``(index >> k) & 1``, 1 meaning the path node is the right child.
    """
    node = leaf
    for level, sibling in enumerate(siblings):
        if (index >> level) & 1:
            node = aggregate_pair(aggregator, sibling, node)
        else:
            node = aggregate_pair(aggregator, node, sibling)
    return node


def dump_tree(tree: TreeHandle):
    """
    Versioned, JSON serializable record of a tree: config, occupied leaves, root digest.
    """
    return {
        "version": TREE_FORMAT_VERSION,
        "config": tree.config.to_dict(),
        "transform": tree.transform.to_dict(),
        "aggregator": tree.aggregator.to_dict(),
        "leaves": [[index, leaf.serialize().hex()] for index, leaf in sorted(tree.occupied.items())],
        "owners": {str(index): owner for index, owner in tree.owners.items()},
        "root": tree.root.digest.hex(),
    }


def load_tree(data) -> TreeHandle:
    """
    Rebuild a tree from :func:`dump_tree` output and check it reproduces its root.
    """
    if data.get("version") != TREE_FORMAT_VERSION:
        raise TreeIntegrityError(f"Unsupported tree format version {data.get('version')}")
    config = TreeConfig(**data["config"])
    transform = TransformSpec.from_dict(data["transform"])
    aggregator = AggregatorSpec(data["aggregator"]["id"], data["aggregator"]["kind"])
    leaves = [(int(index), LeafValue.deserialize(bytes.fromhex(blob))) for index, blob in data["leaves"]]
    owners = {int(index): owner for index, owner in data.get("owners", {}).items()}
    tree = build_smt(leaves, config, transform, aggregator, owners)
    if tree.root.digest.hex() != data["root"]:
        raise TreeIntegrityError(f"Tree root {tree.root.digest.hex()} does not match {data['root']}")
    return tree


def save_tree_file(tree: TreeHandle, path):
    with salt.utils.atomicfile.atomic_open(str(path), "w") as fil:
        fil.write(salt.utils.json.dumps(dump_tree(tree), indent=2))


def load_tree_file(path) -> TreeHandle:
    with salt.utils.files.fopen(str(path), "r") as fil:
        return load_tree(salt.utils.json.load(fil))
