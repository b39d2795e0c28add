"""
SaltStack extension for computational sparse Merkle trees

csmt execution module
=====================
SaltStack execution module that runs a CRO deployment on the minion: the PHR database,
study trees, inclusion and exclusion proofs, exclusivity audits and the statistical
pipelines.

:maturity:      new
:depends:       numpy, scipy, cryptography
:platform:      all

Settings are read from the ``csmt`` key of the minion configuration, falling back to the
``CSMT_*`` environment variables:

.. code-block:: yaml

    csmt:
      state_dir: /var/lib/csmt
      witness_key: <Fernet key>
      backend_seed: <hex seed>
      tree_height: 32
      scale: 12

Functions return ``False`` and log the error when an operation fails.
"""
import logging

import salt.utils.files
import salt.utils.json

from saltext.csmt.utils import core
from saltext.csmt.utils import phr as phr_mod
from saltext.csmt.utils import stats
from saltext.csmt.utils import verifier
from saltext.csmt.utils.config import load_settings
from saltext.csmt.utils.deployment import Deployment
from saltext.csmt.utils.exceptions import ConfigError
from saltext.csmt.utils.exceptions import CsmtError

# Globals

log = logging.getLogger(__name__)

__virtualname__ = "csmt"


def __virtual__():
    return __virtualname__


def _deployment(**overrides):
    """
    Deployment for the current settings, cached in ``__context__``.
    """
    settings = load_settings(
        {name: value for name, value in overrides.items() if value is not None},
        __salt__["config.get"]("csmt", {}),
    )
    key = f"csmt.deployment.{hash(settings)}"
    if key not in __context__:
        log.debug(f"Creating deployment (height {settings.tree_height}, scale {settings.scale})")
        __context__[key] = Deployment(settings)
    return __context__[key]


def _load(filename):
    with salt.utils.files.fopen(filename, "r") as fil:
        return salt.utils.json.load(fil)


# pylint: disable=unused-argument
def phr_register(user_id=None, values=None, filename=None, **kwargs):
    """
    Register PHR records, either one user or a cohort CSV file.

    user_id
        Id of a single user.

    values
        List of the user's values.

    filename
        Cohort CSV with a ``user_id`` column.

    Returns the number of new records and the PHR root.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.phr_register user_id=p-001 values="[44]"
        salt "*" csmt.phr_register filename=/srv/cohorts/hd.csv
    """
    log.debug("Running function")
    try:
        if filename:
            records = phr_mod.import_cohort_csv(filename)
        elif user_id is not None and values is not None:
            records = [(user_id, list(values))]
        else:
            log.error("Either filename or user_id and values are required")
            return False
        deployment = _deployment()
        entries = deployment.register_records(records)
    except (CsmtError, ConfigError) as exc:
        log.error(f"Could not register records:\n{exc}")
        return False
    return {"registered": len(entries), "phr_root": deployment.phr.root.hex()}


# pylint: disable=unused-argument
def phr_prove(user_id, **kwargs):
    """
    PHR membership path of a user.

    user_id
        Registered user.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.phr_prove p-001
    """
    log.debug("Running function")
    try:
        deployment = _deployment()
        entry = deployment.phr.entry(user_id)
        path = deployment.phr.prove_membership(entry.h_raw, entry.h_tau)
    except (CsmtError, ConfigError) as exc:
        log.error(f"Could not prove membership of {user_id}:\n{exc}")
        return False
    return {**entry.to_dict(), "audit_path": path.to_dict()}


# pylint: disable=unused-argument
def phr_users(**kwargs):
    """
    Registered user ids.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.phr_users
    """
    try:
        return _deployment().phr.users()
    except (CsmtError, ConfigError) as exc:
        log.error(f"Could not list users:\n{exc}")
        return False


# pylint: disable=unused-argument
def phr_root(**kwargs):
    """
    Current root of the PHR Merkle tree.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.phr_root
    """
    try:
        return _deployment().phr.root.hex()
    except (CsmtError, ConfigError) as exc:
        log.error(f"Could not compute the PHR root:\n{exc}")
        return False


# pylint: disable=unused-argument
def study_build(study_id, transform, included=None, tree_id=None, aggregator_id="sum", **kwargs):
    """
    Build and publish a study tree.

    study_id
        Study the tree belongs to.

    transform
        Id of a registered transform, or a transform entry such as
        ``{"id": "cag", "kind": "bincount", "bins": [0, 11, 22]}``.

    included
        Users whose leaves enter the tree; all registered users by default.

    tree_id
        Tree id, ``<study_id>/<transform id>`` by default.

    Returns the published root record.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.study_build s1 transform='{"id": "v", "kind": "identity"}'
    """
    log.debug("Running function")
    try:
        result = _deployment().build_study(study_id, transform, included, None, aggregator_id, tree_id)
    except (CsmtError, ConfigError) as exc:
        log.error(f"Could not build study {study_id}:\n{exc}")
        return False
    return result.record


# pylint: disable=unused-argument
def study_root(study_id, tree_id=None, **kwargs):
    """
    Latest published root record of a study tree, ``None`` if there is none.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.study_root s1
    """
    try:
        records = _deployment().bulletin.records(study_id, "root")
    except (CsmtError, ConfigError) as exc:
        log.error(f"Could not read the bulletin:\n{exc}")
        return False
    records = [record for record in records if tree_id is None or record["body"]["tree_id"] == tree_id]
    return records[-1] if records else None


# pylint: disable=unused-argument
def prove_ltr(study_id, user_id, tree_id=None, **kwargs):
    """
    Leaf transformation proof of a user.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.prove_ltr s1 p-001
    """
    log.debug("Running function")
    try:
        deployment = _deployment()
        body = deployment.root_record(study_id, tree_id)["body"]
        entry = deployment.phr.entry(user_id)
        h_tau = core.Digest.from_hex(deployment.cro.delivery(body["tree_id"], user_id))
        h_leaf, index, artifact = deployment.cro.cro_ltr_prove(entry.h_raw, h_tau, body["transform_id"])
    except (CsmtError, ConfigError) as exc:
        log.error(f"Could not prove the leaf of {user_id}:\n{exc}")
        return False
    return {"h_leaf": h_leaf.hex(), "index": index, "artifact": artifact.to_dict()}


# pylint: disable=unused-argument
def prove_mrp(study_id, user_id, tree_id=None, nonce=None, filename=None, **kwargs):
    """
    Complete proof bundle (LTR and every MRP hop) of a user.

    nonce
        Hex nonce, fresh by default.

    filename
        Also write the bundle to this file.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.prove_mrp s1 p-001 filename=/tmp/p-001.json
    """
    log.debug("Running function")
    try:
        bundle = _deployment().prove_user(study_id, user_id, tree_id, bytes.fromhex(nonce) if nonce else None)
    except (CsmtError, ConfigError, ValueError) as exc:
        log.error(f"Could not prove {user_id}:\n{exc}")
        return False
    if filename:
        with salt.utils.files.fopen(filename, "w") as fil:
            fil.write(salt.utils.json.dumps(bundle, sort_keys=True, indent=2))
    return bundle


def _membership(expected, study_id, user_id, tree_id, filename, public_key):
    try:
        if filename:
            outcome = verifier.verify_proof_bundle(_load(filename), public_key)
        else:
            outcome = _deployment().verify_user(study_id, user_id, tree_id)
    except (CsmtError, ConfigError, KeyError) as exc:
        log.error(f"Could not verify {user_id or filename}:\n{exc}")
        return False
    if outcome.status != expected:
        log.error(f"Verification of {user_id or filename} ended {outcome.status}: {outcome.reason}")
    return {**outcome.to_dict(), "verified": outcome.status == expected}


# pylint: disable=unused-argument
def verify_include(study_id=None, user_id=None, tree_id=None, filename=None, public_key=None, **kwargs):
    """
    Verify that a user's leaf is included in a study tree, online against this
    deployment or offline from a proof bundle file.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.verify_include s1 p-001
        salt "*" csmt.verify_include filename=/tmp/p-001.json
    """
    return _membership(verifier.INCLUDED, study_id, user_id, tree_id, filename, public_key)


# pylint: disable=unused-argument
def verify_exclude(study_id=None, user_id=None, tree_id=None, filename=None, public_key=None, **kwargs):
    """
    Verify that a user's leaf is excluded from a study tree.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.verify_exclude s1 p-042
    """
    return _membership(verifier.EXCLUDED, study_id, user_id, tree_id, filename, public_key)


# pylint: disable=unused-argument
def verify_stat(study_id, user_id, kind=None, **kwargs):
    """
    Verify the latest published statistic of a study for a sampled user.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.verify_stat hd healthy-003
    """
    log.debug("Running function")
    try:
        deployment = _deployment()
        body = deployment.statistic_record(study_id, kind)["body"]
        outcome = deployment.stat_verify(stats.StatisticResult.from_dict(body), user_id)
    except (CsmtError, ConfigError) as exc:
        log.error(f"Could not verify the statistic of {study_id}:\n{exc}")
        return False
    return outcome.to_dict()


# pylint: disable=unused-argument
def audit_exclusivity(study_id, tree_id=None, **kwargs):
    """
    Data exclusivity audit of a published study tree.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.audit_exclusivity s1
    """
    log.debug("Running function")
    try:
        result = _deployment().audit(study_id, tree_id)
    except (CsmtError, ConfigError) as exc:
        log.error(f"Could not audit {study_id}:\n{exc}")
        return False
    return result.to_dict()


# pylint: disable=unused-argument
def pipeline_ks(study_id="ks", cohort_a=None, cohort_b=None, seed=0, bins=None, scale=None, **kwargs):
    """
    Two-sample KS gap between two cohorts. Without cohorts the synthetic healthy and HD
    cohorts of ``seed`` are registered and compared.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.pipeline_ks scale=14
    """
    log.debug("Running function")
    try:
        deployment = _deployment()
        if not (cohort_a and cohort_b):
            cohort_a, cohort_b = deployment.register_hd_cohorts(int(seed))
        result = deployment.ks(study_id, cohort_a, cohort_b, bins or stats.DEFAULT_KS_BINS, scale)
    except (CsmtError, ConfigError) as exc:
        log.error(f"KS pipeline failed:\n{exc}")
        return False
    return result.to_dict()


def _logistic_cohort(deployment, study_id, cohort, seed, size, features):
    if cohort:
        return list(cohort)
    records = phr_mod.generate_logistic_cohort(int(seed), int(size), int(features), prefix=study_id)
    deployment.register_records(records)
    return [user for user, _ in records]


# pylint: disable=unused-argument
def pipeline_lrt(
    beta_full,
    beta_reduced,
    study_id="lrt",
    cohort=None,
    seed=0,
    size=200,
    features=4,
    scale=None,
    select_full=None,
    select_reduced=None,
    **kwargs,
):
    """
    Likelihood ratio statistic of a reduced logistic model against the full one.

    beta_full / beta_reduced
        Coefficients, intercept first.

    cohort
        Registered users; a synthetic logistic cohort of ``size`` users by default.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.pipeline_lrt beta_full="[-0.5, 1.2, -0.8]" beta_reduced="[-0.5, 1.2]"
    """
    log.debug("Running function")
    try:
        deployment = _deployment()
        users = _logistic_cohort(deployment, study_id, cohort, seed, size, features)
        result = deployment.lrt(study_id, users, beta_full, beta_reduced, scale, select_full, select_reduced)
    except (CsmtError, ConfigError) as exc:
        log.error(f"LRT pipeline failed:\n{exc}")
        return False
    return result.to_dict()


# pylint: disable=unused-argument
def pipeline_acc(beta, study_id="acc", cohort=None, seed=0, size=200, features=4, scale=None, select=None, **kwargs):
    """
    Classification accuracy of a logistic model.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.pipeline_acc beta="[-0.5, 1.2, -0.8, 0.6, 0.3]"
    """
    log.debug("Running function")
    try:
        deployment = _deployment()
        users = _logistic_cohort(deployment, study_id, cohort, seed, size, features)
        result = deployment.acc(study_id, users, beta, scale, select)
    except (CsmtError, ConfigError) as exc:
        log.error(f"Accuracy pipeline failed:\n{exc}")
        return False
    return result.to_dict()


# pylint: disable=unused-argument
def gen_hd_cohorts(healthy, hd, seed=0, size=phr_mod.HD_COHORT_SIZE, **kwargs):
    """
    Write the synthetic healthy and HD CAG cohorts to CSV files.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.gen_hd_cohorts /tmp/healthy.csv /tmp/hd.csv seed=7
    """
    first, second = phr_mod.generate_hd_cohorts(int(seed), int(size))
    try:
        phr_mod.export_cohort_csv(healthy, first, ["cag"])
        phr_mod.export_cohort_csv(hd, second, ["cag"])
    except OSError as exc:
        log.error(f"Could not write cohorts:\n{exc}")
        return False
    return {"healthy": len(first), "hd": len(second)}


# pylint: disable=unused-argument
def download(study_id, filename, **kwargs):
    """
    Write the artifact zip of a published study.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.download s1 /tmp/s1.zip
    """
    try:
        data = _deployment().download_artifacts(study_id)
        with salt.utils.files.fopen(filename, "wb") as fil:
            fil.write(data)
    except (CsmtError, ConfigError, OSError) as exc:
        log.error(f"Could not download artifacts of {study_id}:\n{exc}")
        return False
    return {"filename": filename, "bytes": len(data)}


# pylint: disable=unused-argument
def bulletin(study_id=None, kind=None, **kwargs):
    """
    Signed bulletin records, optionally filtered.

    CLI Example:

    .. code-block:: bash

        salt "*" csmt.bulletin study_id=s1 kind=root
    """
    try:
        deployment = _deployment()
    except (CsmtError, ConfigError) as exc:
        log.error(f"Could not open the bulletin:\n{exc}")
        return False
    return {"public_key": deployment.bulletin.public_key, "records": deployment.bulletin.records(study_id, kind)}
