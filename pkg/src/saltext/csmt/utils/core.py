"""
Canonical serialization, hashing, fixed-point codec, salts and leaf indexing.

Everything that gets hashed goes through :func:`canonical_serialize` first::

    version (1 byte, 0x01)
    for every field:
        length  (4 bytes, little endian, unsigned)
        content (length bytes)

A :class:`FixedPoint` field is 9 bytes: the raw value as 8 byte little endian two's
complement followed by one byte holding the scale. Byte fields are copied verbatim.
The digest function is SHA-256.
"""
import hashlib
import logging
import math
import secrets
import struct
from dataclasses import dataclass
from typing import Iterable
from typing import List
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np

from .exceptions import OutOfRangeError
from .exceptions import QuantizationOverflowError
from .exceptions import SerializationOverflowError
from .exceptions import ShapeError

log = logging.getLogger(__name__)

SERIALIZATION_VERSION = 1
HASH_NAME = "sha256"
DIGEST_SIZE = 32
DIGEST_BITS = DIGEST_SIZE * 8
SALT_LENGTH = 16
MAX_SCALE = 62
RAW_LIMIT = 1 << 63
ENCODE_LIMIT = 1 << 62
# fractional bits used for transform parameters, independent of the working scale
PARAM_SCALE = 32
SUPPORTED_SCALES = (8, 10, 12, 14)

BinaryPath = Tuple[int, ...]


class Digest(bytes):
    """
    A 32 byte digest. Equality is plain byte equality.
    """

    def __new__(cls, value=b""):
        value = bytes(value)
        if len(value) != DIGEST_SIZE:
            raise ShapeError(f"A digest has {DIGEST_SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def from_hex(cls, text):
        try:
            return cls(bytes.fromhex(text))
        except (TypeError, ValueError) as exc:
            raise ShapeError(f"Not a hex encoded digest: {text!r}") from exc

    def __repr__(self):
        return f"Digest({self.hex()[:16]}…)"


@dataclass(frozen=True)
class FixedPoint:
    """
    ``raw / 2**scale`` with a signed 64 bit raw value
    """

    raw: int
    scale: int

    def __post_init__(self):
        if not 0 <= self.scale <= MAX_SCALE:
            raise OutOfRangeError(f"Scale {self.scale} outside [0, {MAX_SCALE}]")
        if abs(self.raw) >= RAW_LIMIT:
            raise QuantizationOverflowError(f"Raw value {self.raw} exceeds 64 bits")

    def to_bytes(self):
        return self.raw.to_bytes(8, "little", signed=True) + bytes([self.scale])

    @classmethod
    def from_bytes(cls, data):
        if len(data) != 9:
            raise ShapeError(f"A fixed-point field has 9 bytes, got {len(data)}")
        return cls(int.from_bytes(data[:8], "little", signed=True), data[8])

    def __float__(self):
        return decode_fixed(self)


Field = Union[FixedPoint, bytes]


def canonical_serialize(fields: Iterable[Field]) -> bytes:
    """
    Serialize a flat list of fields into the versioned, length prefixed wire format.

    fields
        Iterable of :class:`FixedPoint` values and byte strings.
    """
    out = bytearray([SERIALIZATION_VERSION])
    for field in fields:
        if isinstance(field, FixedPoint):
            content = field.to_bytes()
        elif isinstance(field, (bytes, bytearray, memoryview)):
            content = bytes(field)
        else:
            raise ShapeError(f"Cannot serialize field of type {type(field).__name__}")
        if len(content) > 0xFFFFFFFF:
            raise SerializationOverflowError(f"Field of {len(content)} bytes exceeds 2^32-1")
        out += struct.pack("<I", len(content))
        out += content
    return bytes(out)


def split_fields(data: bytes) -> List[bytes]:
    """
    Inverse of :func:`canonical_serialize` down to the raw field contents.
    """
    if not data or data[0] != SERIALIZATION_VERSION:
        raise ShapeError("Unknown serialization version")
    fields = []
    pos = 1
    while pos < len(data):
        if pos + 4 > len(data):
            raise ShapeError("Truncated length prefix")
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + length > len(data):
            raise ShapeError("Truncated field")
        fields.append(data[pos : pos + length])
        pos += length
    return fields


def hash_node(data: bytes) -> Digest:
    """
    SHA-256 of ``data``
    """
    return Digest(hashlib.sha256(data).digest())


def hash_fields(fields: Iterable[Field]) -> Digest:
    return hash_node(canonical_serialize(fields))


def encode_fixed(x, scale: int) -> FixedPoint:
    """
    Quantize ``x`` to ``scale`` fractional bits, rounding half to even.
    """
    if not 0 <= scale <= MAX_SCALE:
        raise OutOfRangeError(f"Scale {scale} outside [0, {MAX_SCALE}]")
    scaled = math.ldexp(float(x), scale)
    if not math.isfinite(scaled) or abs(scaled) >= ENCODE_LIMIT:
        raise QuantizationOverflowError(f"{x} does not fit at scale {scale}")
    return FixedPoint(round(scaled), scale)


def encode_vector(values: Sequence[float], scale: int) -> Tuple[FixedPoint, ...]:
    """
    Vectorised :func:`encode_fixed`; ``numpy.rint`` rounds half to even as well.
    """
    if not 0 <= scale <= MAX_SCALE:
        raise OutOfRangeError(f"Scale {scale} outside [0, {MAX_SCALE}]")
    scaled = np.ldexp(np.asarray(values, dtype=np.float64), scale)
    if scaled.size and (not np.all(np.isfinite(scaled)) or np.max(np.abs(scaled)) >= ENCODE_LIMIT):
        raise QuantizationOverflowError(f"Vector does not fit at scale {scale}")
    return tuple(FixedPoint(int(raw), scale) for raw in np.rint(scaled))


def decode_fixed(value: FixedPoint) -> float:
    return math.ldexp(value.raw, -value.scale)


def decode_vector(values: Iterable[FixedPoint]) -> List[float]:
    return [decode_fixed(value) for value in values]


def new_salt(length: int = SALT_LENGTH) -> bytes:
    """
    Fresh salt from the operating system CSPRNG
    """
    return secrets.token_bytes(length)


def check_salt(salt, length: int = SALT_LENGTH) -> bytes:
    salt = bytes(salt)
    if len(salt) != length:
        raise ShapeError(f"Salts are {length} bytes long, got {len(salt)}")
    return salt


def pack_datum(values: Sequence[float]) -> List[bytes]:
    # IEEE-754 doubles keep the raw record exact, independent of any working scale
    return [struct.pack("<d", float(value)) for value in values]


def record_digest(delta: Sequence[float], mu: bytes) -> Digest:
    """
    ``H^(δ,μ)``: digest binding a raw datum to its user salt
    """
    return hash_fields(pack_datum(delta) + [bytes(mu)])


def salt_digest(tau: bytes) -> Digest:
    """
    ``H^τ``: digest of a transform salt
    """
    return hash_fields([bytes(tau)])


def bit_digest(bit: int) -> Digest:
    if bit not in (0, 1):
        raise OutOfRangeError(f"Selector bits are 0 or 1, got {bit}")
    return hash_fields([bytes([bit])])


def nonce_digest(nonce: bytes) -> Digest:
    return hash_fields([b"nonce", bytes(nonce)])


def cohort_digest(user_ids: Iterable[str]) -> Digest:
    """
    Digest of a set of user ids; order and repetitions do not matter.
    """
    return hash_fields([b"cohort", *(user_id.encode() for user_id in sorted(set(map(str, user_ids))))])


def derive_leaf_index(digest: bytes, height: int) -> int:
    """
    Top ``height`` bits of ``digest`` read big endian.
    """
    if not 1 <= height <= DIGEST_BITS:
        raise OutOfRangeError(f"Tree height {height} outside [1, {DIGEST_BITS}]")
    return int.from_bytes(bytes(digest), "big") >> (DIGEST_BITS - height)


def index_to_path(index: int, height: int) -> BinaryPath:
    """
    Big endian bit expansion; ``path[0]`` picks the child of the root, 0 is left.
    """
    if height < 1:
        raise OutOfRangeError(f"Tree height {height} must be positive")
    if not 0 <= index < (1 << height):
        raise OutOfRangeError(f"Index {index} outside [0, 2^{height})")
    return tuple((index >> (height - 1 - pos)) & 1 for pos in range(height))


def path_to_index(path: Sequence[int]) -> int:
    index = 0
    for bit in path:
        if bit not in (0, 1):
            raise OutOfRangeError(f"Selector bits are 0 or 1, got {bit}")
        index = (index << 1) | bit
    return index
