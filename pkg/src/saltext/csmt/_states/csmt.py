"""
SaltStack extension for computational sparse Merkle trees

csmt state module
=================
SaltStack states for PHR registrations and published study trees.

:maturity:      new
:depends:       numpy, scipy, cryptography
:platform:      all

The states call the ``csmt`` execution module and therefore share its deployment
settings (the ``csmt`` key of the minion configuration).
"""
import logging

from saltext.csmt.utils import core

# Globals
log = logging.getLogger(__name__)

__virtualname__ = "csmt"


def __virtual__():
    if "csmt.phr_register" not in __salt__:
        return False, "The csmt execution module is not available"
    return __virtualname__


# pylint: disable=unused-argument
def phr_registered(name, values, **kwargs):
    """
    Ensure that a participant record is registered in the PHR database.

    Records are immutable once registered; an existing user is left untouched.

    name
        User id.

    values
        List of the user's values.

    Example:

    .. code-block:: jinja

        Participant p-001 is registered:
          csmt.phr_registered:
            - name: p-001
            - values: [44]
    """
    log.debug("Running function")
    ret = {"name": name, "changes": {}, "comment": "", "result": True}
    users = __salt__["csmt.phr_users"]()
    if users is False:
        ret["result"] = False
        ret["comment"] = "Could not read the PHR database"
        return ret
    if name in users:
        ret["comment"] = f"User {name} is already registered"
        return ret
    if __opts__["test"]:
        ret["result"] = None
        ret["changes"] = {"new": f"User {name} would be registered"}
        ret["comment"] = f"User {name} would be registered"
        return ret
    registered = __salt__["csmt.phr_register"](user_id=name, values=values)
    if not registered:
        ret["result"] = False
        ret["comment"] = f"Could not register user {name}"
        return ret
    ret["changes"] = {"new": name, "phr_root": registered["phr_root"]}
    ret["comment"] = f"Registered user {name}"
    return ret


# pylint: disable=unused-argument
def study_published(name, transform, included=None, tree_id=None, aggregator_id="sum", **kwargs):
    """
    Ensure that a study tree is built and its root is published on the bulletin.

    The tree is rebuilt when no root is published yet, or when the PHR database or the
    included cohort changed since the last publication.

    name
        Study id.

    transform
        Transform id or transform entry, see ``csmt.study_build``.

    included
        Users whose leaves enter the tree; all registered users by default.

    Example:

    .. code-block:: jinja

        HD study is published:
          csmt.study_published:
            - name: hd
            - transform:
                id: cag-bins
                kind: bincount
                bins: [0, 11, 22, 33, 44, 55, 66, 77, 88, 99, 110, 121, 132]
    """
    log.debug("Running function")
    ret = {"name": name, "changes": {}, "comment": "", "result": True}
    transform_id = transform["id"] if isinstance(transform, dict) else transform
    tree_id = tree_id or f"{name}/{transform_id}"
    current = __salt__["csmt.study_root"](name, tree_id=tree_id)
    phr_root = __salt__["csmt.phr_root"]()
    users = __salt__["csmt.phr_users"]()
    if current is False or phr_root is False or users is False:
        ret["result"] = False
        ret["comment"] = "Could not read the deployment state"
        return ret
    expected_cohort = core.cohort_digest(included if included is not None else users).hex()
    if current:
        body = current["body"]
        if (
            body["transform_id"] == transform_id
            and body["phr_root"] == phr_root
            and body.get("cohort") == expected_cohort
        ):
            ret["comment"] = f"Study tree {tree_id} is published with root {body['root']}"
            return ret
        log.debug(f"Published root of {tree_id} is stale")
    old = current["body"]["root"] if current else None
    if __opts__["test"]:
        ret["result"] = None
        ret["changes"] = {"old": old, "new": f"Study tree {tree_id} would be built and published"}
        ret["comment"] = f"Study tree {tree_id} would be published"
        return ret
    record = __salt__["csmt.study_build"](
        name, transform, included=included, tree_id=tree_id, aggregator_id=aggregator_id
    )
    if not record:
        ret["result"] = False
        ret["comment"] = f"Could not build study tree {tree_id}"
        return ret
    ret["changes"] = {"old": old, "new": record["body"]["root"]}
    ret["comment"] = f"Published study tree {tree_id}"
    return ret
