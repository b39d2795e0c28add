import dataclasses
import time

import numpy as np
import pytest
from saltext.csmt.utils import core
from saltext.csmt.utils import phr
from saltext.csmt.utils import stats
from saltext.csmt.utils.deployment import Deployment
from saltext.csmt.utils.exceptions import LeafCollisionError
from saltext.csmt.utils.exceptions import NotFoundError
from saltext.csmt.utils.exceptions import OutOfRangeError
from saltext.csmt.utils.exceptions import ShapeError
from saltext.csmt.utils.exceptions import ZeroCohortError
from saltext.csmt.utils.proofsys import CircuitKind
from saltext.csmt.utils.proofsys import post_circuit
from scipy import optimize
from scipy.special import expit


def _fit(x, y):
    design = np.column_stack([np.ones(len(x)), x])

    def negative_loglik(beta):
        logit = design @ beta
        return np.sum(np.logaddexp(0.0, logit) - y * logit)

    return optimize.minimize(negative_loglik, np.zeros(design.shape[1]), method="BFGS").x


def _loglik(x, y, beta):
    sigma = expit(beta[0] + x @ beta[1:])
    return float(np.sum(y * np.log(sigma) + (1 - y) * np.log1p(-sigma)))


@pytest.fixture
def logistic(deployment):
    records = phr.generate_logistic_cohort(11, size=200, features=4)
    deployment.register_records(records)
    return records


def test_max_absolute_gap():
    gap = stats.max_absolute_gap([1, 1], [0, 2], 12)
    assert gap == core.FixedPoint(2048, 12)
    assert core.decode_fixed(gap) == 0.5
    assert stats.max_absolute_gap([3, 0], [3, 0], 12).raw == 0
    with pytest.raises(ZeroCohortError):
        stats.max_absolute_gap([0, 0], [1, 1], 12)
    with pytest.raises(ShapeError):
        stats.max_absolute_gap([1], [1, 1], 12)
    with pytest.raises(ShapeError):
        stats.max_absolute_gap([-1, 2], [1, 1], 12)


def test_lrt_statistic():
    full = core.encode_fixed(-10.0, 12)
    reduced = core.encode_fixed(-12.0, 12)
    assert core.decode_fixed(stats.lrt_statistic(full, reduced)) == 4.0
    with pytest.raises(ShapeError):
        stats.lrt_statistic(full, core.encode_fixed(-12.0, 8))


def test_accuracy_ratio():
    assert core.decode_fixed(stats.accuracy_ratio(4, 3, 12)) == 0.75
    with pytest.raises(ZeroCohortError):
        stats.accuracy_ratio(0, 0, 12)


def test_kernels_need_integer_counts():
    kernel = stats.STATISTIC_KERNELS[stats.KS_MAX_GAP]
    with pytest.raises(ShapeError):
        kernel((core.FixedPoint(1, 12),), (core.FixedPoint(4096, 12),), 12)
    accuracy = stats.STATISTIC_KERNELS[stats.ACCURACY]
    with pytest.raises(ShapeError):
        accuracy((core.FixedPoint(4096, 12), core.FixedPoint(0, 12)), (core.FixedPoint(0, 12),), 12)


def test_hd_ks_separates_the_cohorts(deployment, hd_cohorts):
    healthy, hd = hd_cohorts
    result = deployment.ks("hd", healthy, hd)
    assert result.kind == stats.KS_MAX_GAP
    assert result.decoded >= 0.99
    assert result.tree_ids == ("hd/A", "hd/B")
    assert deployment.stat_verify(result, healthy[0]).flag
    assert deployment.stat_verify(result, hd[0]).flag
    assert deployment.verify_user("hd", hd[0], tree_id="hd/A").status == "excluded"


def test_ks_rejects_values_outside_the_bins(deployment):
    deployment.register_records([("a", [10.0]), ("b", [140.0])])
    with pytest.raises(OutOfRangeError):
        deployment.ks("ks", ["a"], ["b"])
    with pytest.raises(ZeroCohortError):
        deployment.ks("ks", ["a"], [])


def test_stat_verify_stages(deployment, hd_cohorts):
    healthy, hd = hd_cohorts
    result = deployment.ks("hd", healthy, hd)
    forged = dataclasses.replace(result, zeta=core.FixedPoint(result.zeta.raw - 1, result.scale))
    outcome = deployment.stat_verify(forged, healthy[1])
    assert outcome.stage == "b"
    assert not outcome
    roots = [bytes(32), bytes(32)]
    outcome = stats.stat_verify(result, roots, result.vk_post, deployment.endpoints, healthy[1])
    assert outcome.stage == "c"
    assert outcome.detail == stats.ROOT_MISMATCH_MESSAGE


def test_stat_verify_offline(deployment, hd_cohorts):
    healthy, hd = hd_cohorts
    result = deployment.ks("hd", healthy, hd)
    bundles = [deployment.prove_user("hd", healthy[2], tree_id) for tree_id in result.tree_ids]
    roots = deployment.published_roots(result)
    public_key = deployment.bulletin.public_key
    assert stats.stat_verify_offline(result, roots, result.vk_post, bundles, public_key)
    outcome = stats.stat_verify_offline(result, roots, result.vk_post, bundles[:1], public_key)
    assert outcome.stage == "a"
    restored = stats.StatisticResult.from_dict(result.to_dict())
    vk_post = stats.published_vk_post(deployment.statistic_record("hd", stats.KS_MAX_GAP))
    assert stats.stat_verify_offline(restored, roots, vk_post, bundles, public_key)
    outcome = stats.stat_verify_offline(restored, roots, None, bundles, public_key)
    assert outcome.reason == "unknown-circuit"


def test_stat_verify_uses_the_published_key(deployment, hd_cohorts, settings):
    healthy, hd = hd_cohorts
    result = deployment.ks("hd", healthy, hd)
    foreign = Deployment(dataclasses.replace(settings, backend_seed="ab" * 32))
    keys = foreign.cro.keys(post_circuit(result.kind, result.scale))
    inputs = tuple(deployment.cro.tree(tree_id).root for tree_id in result.tree_ids)
    publics = {
        "Input1": result.root_digests[0],
        "Input2": result.root_digests[1],
        "Output": core.hash_fields([result.zeta]),
    }
    proof = foreign.backend.prove(keys.pk, {"inputs": inputs}, publics, CircuitKind.POST)
    swapped = dataclasses.replace(result, post_proof=proof, vk_post=keys.vk)
    roots = deployment.published_roots(swapped)
    assert stats.stat_verify(swapped, roots, swapped.vk_post, deployment.endpoints, healthy[0])
    outcome = deployment.stat_verify(swapped, healthy[0])
    assert not outcome
    assert outcome.stage == "b"
    with pytest.raises(NotFoundError):
        stats.published_vk_post({"seq": 3, "body": {"kind": stats.KS_MAX_GAP}})


def test_statistic_is_published(deployment, hd_cohorts):
    healthy, hd = hd_cohorts
    result = deployment.ks("hd", healthy, hd)
    record = deployment.statistic_record("hd", stats.KS_MAX_GAP)
    assert record["body"]["zeta"] == result.zeta.raw
    assert record["body"]["root_digests"] == [digest.hex() for digest in result.root_digests]


def test_accuracy_does_not_depend_on_the_scale(deployment):
    records = phr.generate_logistic_cohort(4, size=64, features=4)
    deployment.register_records(records)
    users = [user for user, _ in records]
    beta = [-0.5, 1.2, -0.8, 0.6, 0.3]
    coarse = deployment.acc("acc8", users, beta, scale=8)
    fine = deployment.acc("acc14", users, beta, scale=14)
    assert coarse.decoded == fine.decoded
    x = np.array([values[:-1] for _, values in records])
    y = np.array([values[-1] for _, values in records])
    predicted = (expit(beta[0] + x @ np.array(beta[1:])) >= 0.5).astype(float)
    assert coarse.decoded == np.mean(predicted == y)


def test_lrt_matches_a_plaintext_fit(deployment, logistic):
    users = [user for user, _ in logistic]
    x = np.array([values[:-1] for _, values in logistic])
    y = np.array([values[-1] for _, values in logistic])
    beta_full = _fit(x, y)
    beta_reduced = _fit(x[:, :2], y)
    expected = 2 * (_loglik(x, y, beta_full) - _loglik(x[:, :2], y, beta_reduced))
    assert expected >= 0
    scale = 12
    result = deployment.lrt("lrt", users, list(beta_full), list(beta_reduced), scale=scale, select_reduced=(0, 1))
    assert result.kind == stats.LRT
    assert abs(result.decoded - expected) <= len(users) * 2.0 ** (1 - scale) + 1e-6
    assert deployment.stat_verify(result, users[0])


SCALES = [8, 10, 12, 14]


def test_ks_gap_is_the_same_at_every_scale(deployment):
    rng = np.random.default_rng(21)
    values_a = np.clip(rng.normal(40, 15, 32), 0, 131).round(1)
    values_b = np.clip(rng.normal(60, 15, 32), 0, 131).round(1)
    cohort_a = [f"ka-{pos:02d}" for pos in range(32)]
    cohort_b = [f"kb-{pos:02d}" for pos in range(32)]
    deployment.register_records(
        [(user, [float(value)]) for user, value in zip(cohort_a + cohort_b, np.concatenate([values_a, values_b]))]
    )
    cum_a = np.cumsum(np.histogram(values_a, bins=stats.DEFAULT_KS_BINS)[0])
    cum_b = np.cumsum(np.histogram(values_b, bins=stats.DEFAULT_KS_BINS)[0])
    expected = float(np.max(np.abs(cum_a - cum_b))) / 32
    decoded = {scale: deployment.ks(f"ks{scale}", cohort_a, cohort_b, scale=scale).decoded for scale in SCALES}
    assert {round(value, 3) for value in decoded.values()} == {round(expected, 3)}


def test_accuracy_is_the_same_at_every_scale(deployment):
    records = phr.generate_logistic_cohort(4, size=64, features=4)
    deployment.register_records(records)
    users = [user for user, _ in records]
    beta = [-0.5, 1.2, -0.8, 0.6, 0.3]
    decoded = {round(deployment.acc(f"acc{scale}", users, beta, scale=scale).decoded, 3) for scale in SCALES}
    assert len(decoded) == 1


@pytest.mark.parametrize("scale", SCALES)
def test_lrt_stays_within_the_quantisation_bound(deployment, logistic, scale):
    users = [user for user, _ in logistic]
    x = np.array([values[:-1] for _, values in logistic])
    y = np.array([values[-1] for _, values in logistic])
    beta_full = _fit(x, y)
    beta_reduced = _fit(x[:, :2], y)
    expected = 2 * (_loglik(x, y, beta_full) - _loglik(x[:, :2], y, beta_reduced))
    result = deployment.lrt(
        f"lrt{scale}", users, list(beta_full), list(beta_reduced), scale=scale, select_reduced=(0, 1)
    )
    assert result.scale == scale
    assert abs(result.decoded - expected) <= len(users) * 2.0 ** (1 - scale) + 1e-6


def test_collision_remediation_redraws_the_second_user(deployment, monkeypatch):
    deployment.register_records([("a", [1.0]), ("b", [2.0])])
    before = deployment.phr.entry("b").h_tau
    build = deployment.cro.cro_build
    calls = []

    def collide_once(*args, **kwargs):
        calls.append(args)
        if len(calls) == 1:
            raise LeafCollisionError(7, "a", "b")
        return build(*args, **kwargs)

    monkeypatch.setattr(deployment.cro, "cro_build", collide_once)
    deployment.build_study("s", {"id": "count", "kind": "count"})
    assert len(calls) == 2
    assert deployment.phr.entry("b").h_tau != before


def test_collisions_give_up_after_the_retries(settings):
    deployment = Deployment(dataclasses.replace(settings, tree_height=1))
    deployment.register_records([("a", [1.0]), ("b", [2.0]), ("c", [3.0])])
    with pytest.raises(LeafCollisionError):
        deployment.build_study("s", {"id": "count", "kind": "count"})


def test_collision_in_both_trees_rebuilds_the_pair(deployment, hd_cohorts, monkeypatch):
    healthy, hd = hd_cohorts
    build = deployment.cro.cro_build
    collided = set()
    redraw = deployment.phr.redraw_transform_salt
    redrawn = []

    def collide_once_per_tree(study_id, cohort, database, transform_id, **kwargs):
        tree_id = kwargs["tree_id"]
        if tree_id not in collided:
            collided.add(tree_id)
            if tree_id.endswith("/B"):
                time.sleep(0.2)
            raise LeafCollisionError(7, healthy[0], hd[1])
        return build(study_id, cohort, database, transform_id, **kwargs)

    def count_redraws(user_id):
        redrawn.append(user_id)
        return redraw(user_id)

    monkeypatch.setattr(deployment.cro, "cro_build", collide_once_per_tree)
    monkeypatch.setattr(deployment.phr, "redraw_transform_salt", count_redraws)
    result = deployment.ks("race", healthy, hd)
    assert redrawn == [hd[1]]
    assert len(deployment.bulletin.records("race", "root")) == 2
    h_tau = deployment.phr.entry(hd[1]).h_tau.hex()
    indexes = set()
    for tree_id in result.tree_ids:
        assert deployment.cro.delivery(tree_id, hd[1]) == h_tau
        bundle = deployment.prove_user("race", hd[1], tree_id)
        indexes.add(bundle["proof_set"]["index"])
    assert len(indexes) == 1
    assert deployment.audit("race", "race/B")
    assert deployment.stat_verify(result, hd[1])
