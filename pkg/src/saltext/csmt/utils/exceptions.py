"""
Exception hierarchy for the CSMT toolkit.

Every domain failure is a :class:`CsmtError`, which Salt renders like any other
``CommandExecutionError``. Configuration and usage problems raise :class:`ConfigError`.
"""
from salt.exceptions import CommandExecutionError
from salt.exceptions import SaltInvocationError


class CsmtError(CommandExecutionError):
    """
    Base class for all CSMT domain errors
    """


class ConfigError(SaltInvocationError):
    """
    Invalid settings, config files or command line usage
    """


class UsageError(ConfigError):
    """
    A malformed command line or a missing option
    """


class SerializationOverflowError(CsmtError):
    """
    A canonical serialization field exceeds the 32 bit length prefix
    """


class QuantizationOverflowError(CsmtError):
    """
    A real value does not fit the fixed-point range at the requested scale
    """


class OutOfRangeError(CsmtError):
    """
    An index, level, tree height or bin lookup is outside its domain
    """


class ShapeError(CsmtError):
    """
    Vector length or fixed-point scale mismatch
    """


class AggregationOverflowError(CsmtError):
    """
    Aggregating two node values overflows the 64 bit raw range
    """


class LeafCollisionError(CsmtError):
    """
    Two distinct records map to the same leaf index
    """

    def __init__(self, index, first, second):
        super().__init__(
            f"Leaf index {index} is claimed by both {first} and {second}; "
            "re-draw the transform salt of one of them"
        )
        self.index = index
        self.users = (first, second)


class UnknownCircuitError(CsmtError):
    """
    A circuit id does not resolve to a registered transform, aggregator or statistic
    """


class WitnessMismatchError(CsmtError):
    """
    Re-executing a circuit on the witness does not reproduce the claimed publics
    """


class KeyKindError(CsmtError):
    """
    A proving key of the wrong circuit kind was supplied
    """


class NotFoundError(CsmtError):
    """
    A witness, user, job, study or PHR entry does not exist
    """


class IndexMismatchError(CsmtError):
    """
    A leaf index does not match the leaf digest it was derived from
    """


class NotBuiltError(CsmtError):
    """
    No tree has been built for the requested circuit or root
    """


class DuplicateError(CsmtError):
    """
    A user, registry id or write-once artifact already exists
    """


class StoreError(CsmtError):
    """
    The sealed store could not be read or written
    """


class TreeIntegrityError(StoreError):
    """
    A loaded tree does not reproduce its embedded root digest
    """


class AcquisitionError(CsmtError):
    """
    Records could not be fetched from the PHR database
    """


class IncompleteBundleError(CsmtError):
    """
    An audit bundle lacks the proof set of a claimed leaf or included user
    """


class ZeroCohortError(CsmtError):
    """
    A statistic would divide by an empty cohort
    """


class TransportError(CsmtError):
    """
    A remote endpoint could not be reached; the call may be retried
    """

    retryable = True
