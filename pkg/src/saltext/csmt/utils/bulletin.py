"""
Append-only public bulletin of signed records.

Each record carries its sequence number, the digest of the previous record and an Ed25519
signature over its canonical JSON form. The signing key is derived from the backend seed,
so a deployment restarted with the same seed keeps signing with the same key.
"""
import datetime
import logging
import os
import threading

import salt.utils.files
import salt.utils.json
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import core
from .exceptions import NotFoundError
from .exceptions import StoreError

log = logging.getLogger(__name__)

GENESIS = "00" * core.DIGEST_SIZE


def signing_key_from_seed(seed):
    raw = HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=b"csmt-bulletin").derive(
        bytes(seed)
    )
    return Ed25519PrivateKey.from_private_bytes(raw)


def public_key_hex(private_key):
    raw = private_key.public_key().public_bytes(
        encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw
    )
    return raw.hex()


def canonical_json(record):
    unsigned = {key: value for key, value in record.items() if key != "signature"}
    return salt.utils.json.dumps(unsigned, sort_keys=True, separators=(",", ":")).encode()


def record_digest(record):
    return core.hash_node(canonical_json(record)).hex()


def verify_record(record, public_key):
    """
    Check one record's signature against a hex encoded Ed25519 public key.
    """
    try:
        key = Ed25519PublicKey.from_public_bytes(bytes.fromhex(public_key))
        key.verify(bytes.fromhex(record["signature"]), canonical_json(record))
    except (InvalidSignature, KeyError, ValueError):
        return False
    return True


def verify_chain(records, public_key):
    """
    Signatures, sequence numbers and previous-record links of a whole bulletin.
    """
    previous = GENESIS
    for seq, record in enumerate(records):
        if record.get("seq") != seq or record.get("prev") != previous:
            return False
        if not verify_record(record, public_key):
            return False
        previous = record_digest(record)
    return True


class Bulletin:
    """
    seed
        Backend seed the signing key is derived from.

    path
        JSON lines file; ``None`` keeps the bulletin in memory.
    """

    def __init__(self, seed, path=None):
        self._key = signing_key_from_seed(seed)
        self.public_key = public_key_hex(self._key)
        self.path = path
        self._lock = threading.Lock()
        self._records = []
        if path and os.path.exists(path):
            with salt.utils.files.fopen(path, "r") as fil:
                self._records = [salt.utils.json.loads(line) for line in fil if line.strip()]
            if not verify_chain(self._records, self.public_key):
                raise StoreError(f"Bulletin {path} fails signature or chain verification")

    def publish(self, kind, study_id, body):
        with self._lock:
            record = {
                "seq": len(self._records),
                "prev": record_digest(self._records[-1]) if self._records else GENESIS,
                "kind": kind,
                "study_id": study_id,
                "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                "body": body,
            }
            record["signature"] = self._key.sign(canonical_json(record)).hex()
            if self.path:
                with salt.utils.files.fopen(self.path, "a") as fil:
                    fil.write(salt.utils.json.dumps(record, sort_keys=True) + "\n")
            self._records.append(record)
        log.debug(f"Published bulletin record {record['seq']} ({kind}) for {study_id}")
        return record

    def records(self, study_id=None, kind=None):
        with self._lock:
            return [
                record
                for record in self._records
                if (study_id is None or record["study_id"] == study_id)
                and (kind is None or record["kind"] == kind)
            ]

    def latest(self, study_id, kind):
        found = self.records(study_id, kind)
        if not found:
            raise NotFoundError(f"No '{kind}' bulletin record for study {study_id}")
        return found[-1]
