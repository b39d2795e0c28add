"""
Sealed key-value stores for private state.

A store is a two level mapping ``namespace -> key -> value`` held in memory. When it has a
file, every write seals the whole mapping with msgpack + Fernet and replaces the file
atomically.
"""
import logging
import os
import threading

import salt.utils.atomicfile
import salt.utils.files
import salt.utils.msgpack
from cryptography.fernet import Fernet
from cryptography.fernet import InvalidToken

from . import core
from .exceptions import ConfigError
from .exceptions import NotFoundError
from .exceptions import StoreError

log = logging.getLogger(__name__)


def load_fernet(key):
    try:
        return Fernet(key)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Malformed store key: {exc}") from None


class SealedStore:
    """
    path
        File holding the sealed mapping, or ``None`` for a purely in-memory store.

    key
        Fernet key; required when ``path`` is set.
    """

    def __init__(self, path=None, key=None):
        self.path = path
        self._lock = threading.RLock()
        self._fernet = None
        self._data = {}
        if path is None:
            return
        if not key:
            raise ConfigError(f"A sealing key is required to persist {path}")
        self._fernet = load_fernet(key)
        if os.path.exists(path):
            self._data = self._read()

    def _read(self):
        try:
            with salt.utils.files.fopen(self.path, "rb") as fil:
                token = fil.read()
            data = salt.utils.msgpack.unpackb(self._fernet.decrypt(token), raw=False)
        except InvalidToken:
            raise StoreError(f"Cannot unseal {self.path}: wrong key or corrupted file") from None
        except OSError as exc:
            raise StoreError(f"Cannot read {self.path}: {exc}") from None
        log.debug(f"Unsealed {self.path} with {len(data)} namespaces")
        return data

    def _flush(self):
        if self.path is None:
            return
        token = self._fernet.encrypt(salt.utils.msgpack.packb(self._data, use_bin_type=True))
        try:
            with salt.utils.atomicfile.atomic_open(self.path, "wb") as fil:
                fil.write(token)
        except OSError as exc:
            raise StoreError(f"Cannot write {self.path}: {exc}") from None

    def put(self, namespace, key, value):
        with self._lock:
            self._data.setdefault(namespace, {})[key] = value
            self._flush()

    def get(self, namespace, key):
        with self._lock:
            try:
                return self._data[namespace][key]
            except KeyError:
                raise NotFoundError(f"No '{namespace}' entry for {key}") from None

    def contains(self, namespace, key):
        with self._lock:
            return key in self._data.get(namespace, {})

    def keys(self, namespace):
        with self._lock:
            return list(self._data.get(namespace, {}))


def witness_key(h_raw, h_tau, circuit):
    return f"{bytes(h_raw).hex()}:{bytes(h_tau).hex()}:{core.hash_node(circuit.to_bytes()).hex()}"


class WitnessStore:
    """
    Private LTR witnesses and built trees of a CRO. Nothing in here is served externally.
    """

    def __init__(self, store: SealedStore):
        self.store = store

    def put_ltr(self, h_raw, h_tau, circuit, delta, mu, tau, leaf):
        key = witness_key(h_raw, h_tau, circuit)
        record = {
            "delta": [float(value) for value in delta],
            "mu": bytes(mu),
            "tau": bytes(tau),
            "leaf": leaf.serialize(),
        }
        if self.store.contains("ltr", key) and self.store.get("ltr", key) == record:
            return key
        self.store.put("ltr", key, record)
        return key

    def get_ltr(self, h_raw, h_tau, circuit):
        try:
            return self.store.get("ltr", witness_key(h_raw, h_tau, circuit))
        except NotFoundError:
            raise NotFoundError(
                f"No witness for record {bytes(h_raw).hex()[:16]} under {circuit.target_id}"
            ) from None

    def put_tree(self, tree_id, dump):
        self.store.put("trees", tree_id, dump)

    def get_tree(self, tree_id):
        return self.store.get("trees", tree_id)

    def tree_ids(self):
        return self.store.keys("trees")

    def put_deliveries(self, tree_id, deliveries):
        self.store.put("deliveries", tree_id, dict(deliveries))

    def get_delivery(self, tree_id, user_id):
        try:
            return self.store.get("deliveries", tree_id)[user_id]
        except KeyError:
            raise NotFoundError(f"User {user_id} received no salt digest for {tree_id}") from None
