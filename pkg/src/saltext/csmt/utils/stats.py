"""
Statistical pipelines over committed trees and their post-aggregation kernels.

Every pipeline builds its trees through the CRO, computes the statistic from the root
payloads with integer fixed-point arithmetic, proves that computation with a POST circuit
and publishes the result on the bulletin.
"""
import concurrent.futures
import logging
from dataclasses import dataclass
from typing import Optional
from typing import Tuple

from . import core
from .exceptions import LeafCollisionError
from .exceptions import NotFoundError
from .exceptions import OutOfRangeError
from .exceptions import QuantizationOverflowError
from .exceptions import ShapeError
from .exceptions import ZeroCohortError
from .proofsys import CircuitKind
from .proofsys import ProofArtifact
from .proofsys import VerificationKey
from .proofsys import VerificationOutcome
from .proofsys import post_circuit
from .proofsys import verify
from .prover import CohortSpec
from .transforms import bincount_spec
from .transforms import classassess_spec
from .transforms import count_spec
from .transforms import loglik_spec

log = logging.getLogger(__name__)

KS_MAX_GAP = "ks_max_gap"
LRT = "lrt_statistic"
ACCURACY = "accuracy"

DEFAULT_KS_BINS = tuple(range(0, 133, 11))
COLLISION_RETRIES = 3
ROOT_MISMATCH_MESSAGE = "Hashes not match."


def _counts(payload):
    counts = []
    for value in payload:
        count, rest = divmod(value.raw, 1 << value.scale)
        if rest or count < 0:
            raise ShapeError("Count vectors hold non-negative integers")
        counts.append(count)
    return counts


def max_absolute_gap(counts_a, counts_b, scale) -> core.FixedPoint:
    """
    Largest gap between the two empirical CDFs at the bin edges.

    counts_a / counts_b
        Non-negative per-bin counts of equal length.

    CDF entries are ``floor(cumulative count * 2**scale / N)``.
    """
    if len(counts_a) != len(counts_b):
        raise ShapeError(f"Count vectors of {len(counts_a)} and {len(counts_b)} bins")
    if any(count < 0 for count in (*counts_a, *counts_b)):
        raise ShapeError("Counts must be non-negative")
    size_a, size_b = sum(counts_a), sum(counts_b)
    if not size_a or not size_b:
        raise ZeroCohortError("Both cohorts need at least one record")
    gap = cum_a = cum_b = 0
    for count_a, count_b in zip(counts_a, counts_b):
        cum_a += count_a
        cum_b += count_b
        gap = max(gap, abs((cum_a << scale) // size_a - (cum_b << scale) // size_b))
    return core.FixedPoint(gap, scale)


def lrt_statistic(psi_full: core.FixedPoint, psi_reduced: core.FixedPoint) -> core.FixedPoint:
    """
    ``-2 (Ψ_reduced - Ψ_full)`` on raw values
    """
    if psi_full.scale != psi_reduced.scale:
        raise ShapeError("Log-likelihoods at different scales")
    raw = -2 * (psi_reduced.raw - psi_full.raw)
    if abs(raw) >= core.RAW_LIMIT:
        raise QuantizationOverflowError("Likelihood ratio statistic exceeds 64 bits")
    return core.FixedPoint(raw, psi_full.scale)


def accuracy_ratio(total, correct, scale) -> core.FixedPoint:
    if total <= 0:
        raise ZeroCohortError("Accuracy of an empty cohort")
    return core.FixedPoint((correct << scale) // total, scale)


def _single(payload):
    if len(payload) != 1:
        raise ShapeError(f"Expected a scalar root payload, got {len(payload)} slots")
    return payload[0]


STATISTIC_KERNELS = {
    KS_MAX_GAP: lambda first, second, scale: max_absolute_gap(_counts(first), _counts(second), scale),
    LRT: lambda first, second, scale: lrt_statistic(_single(first), _single(second)),
    ACCURACY: lambda first, second, scale: accuracy_ratio(
        _counts([_single(first)])[0], _counts([_single(second)])[0], scale
    ),
}


@dataclass(frozen=True)
class StatisticResult:
    kind: str
    zeta: core.FixedPoint
    scale: int
    root_digests: Tuple[core.Digest, ...]
    post_proof: ProofArtifact
    tree_ids: Tuple[str, ...]
    study_id: str
    vk_post: Optional[VerificationKey] = None

    @property
    def decoded(self):
        return core.decode_fixed(self.zeta)

    def to_dict(self):
        return {
            "kind": self.kind,
            "study_id": self.study_id,
            "zeta": self.zeta.raw,
            "scale": self.scale,
            "decoded": self.decoded,
            "root_digests": [digest.hex() for digest in self.root_digests],
            "tree_ids": list(self.tree_ids),
            "post_proof": self.post_proof.to_dict(),
            "vk_post": self.vk_post.to_dict() if self.vk_post else None,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            data["kind"],
            core.FixedPoint(int(data["zeta"]), int(data["scale"])),
            int(data["scale"]),
            tuple(core.Digest.from_hex(digest) for digest in data["root_digests"]),
            ProofArtifact.from_dict(data["post_proof"]),
            tuple(data["tree_ids"]),
            data["study_id"],
            VerificationKey.from_dict(data["vk_post"]) if data.get("vk_post") else None,
        )


def _run_builds(cro, phr, study_id, builds):
    with concurrent.futures.ThreadPoolExecutor(max_workers=len(builds)) as executor:
        futures = [
            executor.submit(cro.cro_build, study_id, cohort, phr, transform_id, tree_id=tree_id, publish=False)
            for cohort, transform_id, tree_id in builds
        ]
        results, collisions = [], []
        for future in futures:
            try:
                results.append(future.result())
            except LeafCollisionError as exc:
                collisions.append(exc)
        return results, collisions


def build_trees(cro, phr, study_id, builds):
    """
    Build ``(cohort, transform_id, tree_id)`` trees side by side and publish their roots.

    A leaf collision in any build re-draws the transform salt of the second colliding user
    once, after every build of the round has finished, and all trees are rebuilt. Roots are
    published only when a round completes without collisions, so every published tree
    commits the salts the PHR database holds.
    """
    for attempt in range(COLLISION_RETRIES + 1):
        results, collisions = _run_builds(cro, phr, study_id, builds)
        if not collisions:
            return [cro.publish_build(study_id, result) for result in results]
        if attempt == COLLISION_RETRIES:
            raise collisions[0]
        for user_id in sorted({exc.users[1] for exc in collisions}):
            log.warning(f"Leaf collision on {user_id}; rebuilding {len(builds)} tree(s) of {study_id}")
            phr.redraw_transform_salt(user_id)


def build_tree(cro, phr, study_id, cohort: CohortSpec, transform_id, tree_id):
    return build_trees(cro, phr, study_id, [(cohort, transform_id, tree_id)])[0]


def _prove_statistic(cro, study_id, kind, scale, first, second, tree_ids):
    keys = cro.keys(post_circuit(kind, scale))
    zeta = STATISTIC_KERNELS[kind](first.root.payload, second.root.payload, scale)
    publics = {
        "Input1": first.h_root,
        "Input2": second.h_root,
        "Output": core.hash_fields([zeta]),
    }
    proof = cro.backend.prove(keys.pk, {"inputs": (first.root, second.root)}, publics, CircuitKind.POST)
    result = StatisticResult(
        kind, zeta, scale, (first.h_root, second.h_root), proof, tuple(tree_ids), study_id, keys.vk
    )
    if cro.bulletin is not None:
        cro.bulletin.publish("statistic", study_id, result.to_dict())
    log.debug(f"{kind} for {study_id} at scale {scale}: {result.decoded:.6f}")
    return result


def _check_users(phr, users):
    users = list(users)
    if not users:
        raise ZeroCohortError("Cohorts need at least one user")
    for user_id in users:
        phr.fetch(user_id)
    return users


def ks_two_sample(cro, phr, study_id, cohort_a, cohort_b, bins=DEFAULT_KS_BINS, scale=12, population=None):
    """
    Two-sample Kolmogorov-Smirnov gap between two cohorts of single-value records.

    cohort_a / cohort_b
        User ids registered in ``phr``.

    population
        Users transformed for both trees (defaults to both cohorts), so that users of one
        cohort get exclusion proofs against the other cohort's tree.
    """
    cohort_a = _check_users(phr, cohort_a)
    cohort_b = _check_users(phr, cohort_b)
    population = tuple(population or dict.fromkeys(cohort_a + cohort_b))
    for user_id in population:
        value = phr.fetch(user_id).delta[0]
        if not bins[0] <= value < bins[-1]:
            raise OutOfRangeError(f"Value of {user_id} outside the bin range [{bins[0]}, {bins[-1]})")
    spec = cro.registry.register_transform(bincount_spec(f"{study_id}:bincount@{scale}", bins, scale))
    first, second = build_trees(
        cro,
        phr,
        study_id,
        [
            (CohortSpec.of(population, cohort_a), spec.id, f"{study_id}/A"),
            (CohortSpec.of(population, cohort_b), spec.id, f"{study_id}/B"),
        ],
    )
    return _prove_statistic(cro, study_id, KS_MAX_GAP, scale, first, second, (first.tree_id, second.tree_id))


def lrt(cro, phr, study_id, cohort, beta_full, beta_reduced, scale=12, select_full=None, select_reduced=None):
    """
    Likelihood ratio statistic of a reduced logistic model against the full one, both
    evaluated on the same cohort.

    beta_full / beta_reduced
        Coefficient vectors, intercept first. ``select_*`` name the feature columns each
        model reads; by default the leading columns.
    """
    cohort = _check_users(phr, cohort)
    input_dim = len(phr.fetch(cohort[0]).delta)
    full = cro.registry.register_transform(
        loglik_spec(f"{study_id}:loglik-full@{scale}", beta_full, scale, input_dim, select_full)
    )
    reduced = cro.registry.register_transform(
        loglik_spec(f"{study_id}:loglik-reduced@{scale}", beta_reduced, scale, input_dim, select_reduced)
    )
    spec = CohortSpec.of(cohort)
    first, second = build_trees(
        cro,
        phr,
        study_id,
        [(spec, full.id, f"{study_id}/full"), (spec, reduced.id, f"{study_id}/reduced")],
    )
    return _prove_statistic(cro, study_id, LRT, scale, first, second, (first.tree_id, second.tree_id))


def accuracy(cro, phr, study_id, cohort, beta, scale=12, select=None):
    """
    Classification accuracy of a logistic model: a count tree and a correctness tree over
    the test cohort.
    """
    cohort = _check_users(phr, cohort)
    input_dim = len(phr.fetch(cohort[0]).delta)
    counter = cro.registry.register_transform(count_spec(f"{study_id}:count@{scale}", scale, input_dim))
    assess = cro.registry.register_transform(
        classassess_spec(f"{study_id}:classassess@{scale}", beta, scale, input_dim, select)
    )
    spec = CohortSpec.of(cohort)
    first, second = build_trees(
        cro,
        phr,
        study_id,
        [(spec, counter.id, f"{study_id}/count"), (spec, assess.id, f"{study_id}/correct")],
    )
    return _prove_statistic(cro, study_id, ACCURACY, scale, first, second, (first.tree_id, second.tree_id))


def published_vk_post(record) -> VerificationKey:
    """
    Post-aggregation verifying key of a published statistic record.
    """
    vk_post = record["body"].get("vk_post")
    if not vk_post:
        raise NotFoundError(f"Statistic record {record.get('seq')} carries no verifying key")
    return VerificationKey.from_dict(vk_post)


def _check_statistic(result: StatisticResult, published_roots, vk_post):
    if vk_post is None or vk_post.circuit != post_circuit(result.kind, result.scale):
        return VerificationOutcome(False, "unknown-circuit", "b", "no key for this statistic")
    outcome = verify(vk_post, result.post_proof)
    if not outcome:
        return VerificationOutcome(False, outcome.reason, "b", outcome.detail)
    proof = result.post_proof
    committed = tuple(bytes(digest) for digest in result.root_digests)
    if proof["Output"] != core.hash_fields([result.zeta]) or (proof["Input1"], proof["Input2"]) != committed:
        return VerificationOutcome(False, "field-mismatch", "b", "statistic differs from the proven one")
    if committed != tuple(bytes(digest) for digest in published_roots):
        log.error(f"{result.kind} of {result.study_id}: {ROOT_MISMATCH_MESSAGE}")
        return VerificationOutcome(False, "root-mismatch", "c", ROOT_MISMATCH_MESSAGE)
    return VerificationOutcome(True, stage="c")


def stat_verify(result: StatisticResult, published_roots, vk_post, endpoints, sample_user, nonce=None):
    """
    Verify a statistic: (a) the sampled user's proofs against every committed tree, (b) the
    post-aggregation proof, (c) the committed roots against the published ones.

    vk_post
        Published post-aggregation key, see :func:`published_vk_post`. The key a result
        file carries is never trusted.
    """
    from .verifier import cosmetic_verifier  # pylint: disable=import-outside-toplevel

    for tree_id in result.tree_ids:
        outcome = cosmetic_verifier(sample_user, endpoints, result.study_id, tree_id, nonce)
        if not outcome:
            return VerificationOutcome(False, outcome.reason, "a", f"{tree_id}: {outcome.detail}")
    return _check_statistic(result, published_roots, vk_post)


def stat_verify_offline(result: StatisticResult, published_roots, vk_post, bundles, public_key=None):
    """
    :func:`stat_verify` replayed from downloaded artifacts and saved proof bundles.

    bundles
        Proof bundle dicts of the sampled user, at least one per committed tree.
    """
    from .verifier import verify_proof_bundle  # pylint: disable=import-outside-toplevel

    for tree_id in result.tree_ids:
        matching = [bundle for bundle in bundles if bundle["tree_id"] == tree_id]
        if not matching:
            return VerificationOutcome(False, "field-mismatch", "a", f"{tree_id}: no proof bundle")
        for bundle in matching:
            outcome = verify_proof_bundle(bundle, public_key)
            if not outcome:
                return VerificationOutcome(False, outcome.reason, "a", f"{tree_id}: {outcome.detail}")
            if bundle["root_record"]["body"]["root"] != _root_for(result, tree_id, published_roots):
                return VerificationOutcome(False, "root-mismatch", "a", f"{tree_id}: bundle for another root")
    return _check_statistic(result, published_roots, vk_post)


def _root_for(result, tree_id, published_roots):
    return bytes(published_roots[result.tree_ids.index(tree_id)]).hex()
