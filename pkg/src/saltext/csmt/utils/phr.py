"""
Personal health record database.

Holds every participant's raw record with its user salt and transform salt, and commits
to the ``(H(δ, μ), H(τ))`` tuples with a plain Merkle tree:

* leaves are ``H(H_raw, H_tau)`` sorted ascending, so the root does not depend on the
  registration order
* the sorted leaves are padded to the next power of two by repeating the last leaf
* a single leaf is its own root; the empty database has root ``H("")``

Also generates the synthetic cohorts used by the studies.
"""
import csv
import logging
import threading
from dataclasses import dataclass
from typing import List
from typing import Tuple

import numpy as np
import salt.utils.files
from scipy.special import expit

from . import core
from .exceptions import DuplicateError
from .exceptions import NotFoundError
from .exceptions import ShapeError

log = logging.getLogger(__name__)

HEALTHY_CAG = (17.0, 3.0, 6, 35)
HD_CAG = (43.0, 4.0, 36, 120)
HD_COHORT_SIZE = 50
DEFAULT_LOGISTIC_COEFFICIENTS = (-0.5, 1.2, -0.8, 0.6, 0.3, -0.4, 0.9, 0.2, -0.7)


@dataclass(frozen=True)
class PhrEntry:
    h_raw: core.Digest
    h_tau: core.Digest
    user_id: str

    @property
    def leaf_digest(self):
        return core.hash_fields([self.h_raw, self.h_tau])

    def to_dict(self):
        return {"user_id": self.user_id, "h_raw": self.h_raw.hex(), "h_tau": self.h_tau.hex()}


@dataclass(frozen=True)
class PhrRecord:
    """
    A participant's private record
    """

    user_id: str
    delta: Tuple[float, ...]
    mu: bytes
    tau: bytes

    @property
    def entry(self):
        return PhrEntry(core.record_digest(self.delta, self.mu), core.salt_digest(self.tau), self.user_id)


@dataclass(frozen=True)
class MerkleAuditPath:
    leaf_digest: core.Digest
    siblings: Tuple[core.Digest, ...]
    # 1 where the sibling sits on the left
    directions: Tuple[int, ...]
    root: core.Digest

    def to_dict(self):
        return {
            "leaf_digest": self.leaf_digest.hex(),
            "siblings": [sibling.hex() for sibling in self.siblings],
            "directions": list(self.directions),
            "root": self.root.hex(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            core.Digest.from_hex(data["leaf_digest"]),
            tuple(core.Digest.from_hex(sibling) for sibling in data["siblings"]),
            tuple(int(bit) for bit in data["directions"]),
            core.Digest.from_hex(data["root"]),
        )


def empty_root():
    return core.hash_node(b"")


def merkle_levels(leaves: List[core.Digest]):
    """
    All levels of the padded tree over ``leaves`` (already sorted), leaves first.
    """
    if not leaves:
        return [[empty_root()]]
    width = 1 << (len(leaves) - 1).bit_length()
    levels = [list(leaves) + [leaves[-1]] * (width - len(leaves))]
    while len(levels[-1]) > 1:
        level = levels[-1]
        levels.append([core.hash_fields([level[pos], level[pos + 1]]) for pos in range(0, len(level), 2)])
    return levels


def fold_audit_path(path: MerkleAuditPath):
    node = path.leaf_digest
    for sibling, direction in zip(path.siblings, path.directions):
        node = core.hash_fields([sibling, node] if direction else [node, sibling])
    return node


def phr_verify_membership(root, path: MerkleAuditPath):
    """
    True when ``path`` folds to ``root`` and was issued against it
    """
    if len(path.siblings) != len(path.directions):
        return False
    return bytes(root) == bytes(path.root) and fold_audit_path(path) == bytes(root)


class PhrDatabase:
    """
    store
        Optional :class:`~saltext.csmt.utils.store.SealedStore` keeping the records across
        restarts.
    """

    def __init__(self, store=None, salt_length=core.SALT_LENGTH):
        self.store = store
        self.salt_length = salt_length
        self._lock = threading.RLock()
        self._records = {}
        self._by_tuple = {}
        self._levels = merkle_levels([])
        if store is not None:
            for user_id in store.keys("phr"):
                data = store.get("phr", user_id)
                self._add(PhrRecord(user_id, tuple(data["delta"]), data["mu"], data["tau"]))
            self._rebuild()

    def _add(self, record):
        entry = record.entry
        key = (entry.h_raw, entry.h_tau)
        if record.user_id in self._records:
            raise DuplicateError(f"User {record.user_id} is already registered")
        if key in self._by_tuple:
            raise DuplicateError(f"Record tuple of {record.user_id} is already registered")
        self._records[record.user_id] = record
        self._by_tuple[key] = record.user_id
        return entry

    def _rebuild(self):
        leaves = sorted(record.entry.leaf_digest for record in self._records.values())
        self._levels = merkle_levels(leaves)

    def register(self, user_id, delta, mu=None, tau=None) -> PhrEntry:
        """
        Register a participant; fresh salts are drawn when none are given.
        """
        mu = core.check_salt(mu, self.salt_length) if mu is not None else core.new_salt(self.salt_length)
        tau = core.check_salt(tau, self.salt_length) if tau is not None else core.new_salt(self.salt_length)
        delta = tuple(float(value) for value in delta)
        if not delta:
            raise ShapeError("A record holds at least one value")
        record = PhrRecord(str(user_id), delta, mu, tau)
        with self._lock:
            entry = self._add(record)
            if self.store is not None:
                self.store.put("phr", record.user_id, {"delta": list(delta), "mu": mu, "tau": tau})
            self._rebuild()
        log.debug(f"Registered PHR user {user_id}; root {self.root.hex()[:16]}")
        return entry

    def redraw_transform_salt(self, user_id) -> PhrEntry:
        """
        Replace a user's transform salt, moving their leaf to a fresh index.
        """
        with self._lock:
            old = self.fetch(user_id)
            del self._by_tuple[(old.entry.h_raw, old.entry.h_tau)]
            del self._records[user_id]
            record = PhrRecord(user_id, old.delta, old.mu, core.new_salt(self.salt_length))
            entry = self._add(record)
            if self.store is not None:
                self.store.put("phr", user_id, {"delta": list(record.delta), "mu": record.mu, "tau": record.tau})
            self._rebuild()
        log.warning(f"Re-drew the transform salt of {user_id}")
        return entry

    def fetch(self, user_id) -> PhrRecord:
        with self._lock:
            try:
                return self._records[user_id]
            except KeyError:
                raise NotFoundError(f"User {user_id} is not registered") from None

    def entry(self, user_id) -> PhrEntry:
        return self.fetch(user_id).entry

    def users(self):
        with self._lock:
            return sorted(self._records)

    def user_for(self, h_raw, h_tau):
        with self._lock:
            try:
                return self._by_tuple[(bytes(h_raw), bytes(h_tau))]
            except KeyError:
                raise NotFoundError("Record tuple is not registered") from None

    @property
    def root(self) -> core.Digest:
        with self._lock:
            return self._levels[-1][0]

    def prove_membership(self, h_raw, h_tau) -> MerkleAuditPath:
        with self._lock:
            leaf = core.hash_fields([bytes(h_raw), bytes(h_tau)])
            self.user_for(h_raw, h_tau)
            position = self._levels[0].index(leaf)
            siblings, directions = [], []
            for level in self._levels[:-1]:
                partner = position ^ 1
                siblings.append(level[partner] if partner < len(level) else level[position])
                directions.append(position & 1)
                position >>= 1
            return MerkleAuditPath(leaf, tuple(siblings), tuple(directions), self._levels[-1][0])


def phr_register(database: PhrDatabase, user_id, delta, mu=None, tau=None):
    return database.register(user_id, delta, mu, tau)


def phr_prove_membership(database: PhrDatabase, h_raw, h_tau):
    return database.prove_membership(h_raw, h_tau)


def _clamped_normal(rng, params, size):
    mean, std, low, high = params
    return np.clip(np.rint(rng.normal(mean, std, size)), low, high)


def generate_hd_cohorts(seed, size=HD_COHORT_SIZE):
    """
    Healthy and Huntington's disease CAG repeat cohorts, deterministic per seed.

    Returns two lists of ``(user_id, [cag])``.
    """
    rng = np.random.default_rng(seed)
    healthy = _clamped_normal(rng, HEALTHY_CAG, size)
    hd = _clamped_normal(rng, HD_CAG, size)
    return (
        [(f"healthy-{pos:03d}", [float(value)]) for pos, value in enumerate(healthy)],
        [(f"hd-{pos:03d}", [float(value)]) for pos, value in enumerate(hd)],
    )


def generate_logistic_cohort(seed, size=200, features=4, coefficients=None, prefix="subject"):
    """
    Records ``[x_1 .. x_d, y]`` with labels drawn from a logistic model.

    The first half of the features are Bernoulli(0.5) indicators, the rest standard normal.
    """
    if coefficients is None:
        if features + 1 > len(DEFAULT_LOGISTIC_COEFFICIENTS):
            raise ShapeError(f"No default coefficients for {features} features")
        coefficients = DEFAULT_LOGISTIC_COEFFICIENTS[: features + 1]
    beta = np.asarray(coefficients, dtype=np.float64)
    if beta.size != features + 1:
        raise ShapeError(f"{features} features need {features + 1} coefficients")
    rng = np.random.default_rng(seed)
    binary = features // 2
    x = np.empty((size, features))
    x[:, :binary] = rng.integers(0, 2, size=(size, binary))
    x[:, binary:] = rng.standard_normal((size, features - binary))
    y = rng.random(size) < expit(beta[0] + x @ beta[1:])
    return [(f"{prefix}-{pos:03d}", [*map(float, x[pos]), float(y[pos])]) for pos in range(size)]


def export_cohort_csv(path, records, columns=None):
    """
    Write ``(user_id, values)`` records as CSV with a header row.
    """
    width = len(records[0][1]) if records else 0
    columns = list(columns or [f"v{pos}" for pos in range(width)])
    with salt.utils.files.fopen(path, "w", newline="") as fil:
        writer = csv.writer(fil)
        writer.writerow(["user_id", *columns])
        for user_id, values in records:
            writer.writerow([user_id, *(repr(float(value)) for value in values)])


def import_cohort_csv(path):
    with salt.utils.files.fopen(path, "r", newline="") as fil:
        reader = csv.reader(fil)
        header = next(reader, None)
        if not header or header[0] != "user_id":
            raise ShapeError(f"{path} is not a cohort file")
        return [(row[0], [float(value) for value in row[1:]]) for row in reader if row]
