from unittest.mock import MagicMock

import pytest
from saltext.csmt._states import csmt
from saltext.csmt.utils import core

CAG = {"id": "cag-bins", "kind": "bincount", "bins": [0, 11, 22]}
COHORT = core.cohort_digest(["p-001", "p-002"]).hex()
ROOT = {
    "body": {
        "tree_id": "hd/cag-bins",
        "transform_id": "cag-bins",
        "phr_root": "aa" * 32,
        "included": 2,
        "cohort": COHORT,
        "root": "bb" * 32,
    }
}


@pytest.fixture
def salt_mock():
    return {
        "csmt.phr_users": MagicMock(return_value=["p-001", "p-002"]),
        "csmt.phr_register": MagicMock(return_value={"registered": 1, "phr_root": "cc" * 32}),
        "csmt.phr_root": MagicMock(return_value="aa" * 32),
        "csmt.study_root": MagicMock(return_value=ROOT),
        "csmt.study_build": MagicMock(return_value={"body": {"root": "dd" * 32}}),
    }


@pytest.fixture
def configure_loader_modules(salt_mock):
    return {csmt: {"__salt__": salt_mock, "__opts__": {"test": False}}}


def test_virtual(monkeypatch):
    assert csmt.__virtual__() == "csmt"
    monkeypatch.delitem(csmt.__salt__, "csmt.phr_register")
    assert csmt.__virtual__()[0] is False


def test_registered_user_is_left_alone(salt_mock):
    ret = csmt.phr_registered("p-001", [44])
    assert ret["result"] is True
    assert ret["changes"] == {}
    salt_mock["csmt.phr_register"].assert_not_called()


def test_new_user_is_registered(salt_mock):
    ret = csmt.phr_registered("p-003", [51])
    assert ret["result"] is True
    assert ret["changes"] == {"new": "p-003", "phr_root": "cc" * 32}
    salt_mock["csmt.phr_register"].assert_called_once_with(user_id="p-003", values=[51])


def test_registration_test_mode(salt_mock):
    with pytest.MonkeyPatch.context() as patch:
        patch.setitem(csmt.__opts__, "test", True)
        ret = csmt.phr_registered("p-003", [51])
    assert ret["result"] is None
    assert ret["changes"]
    salt_mock["csmt.phr_register"].assert_not_called()


@pytest.mark.parametrize("failing", ["csmt.phr_users", "csmt.phr_register"])
def test_registration_failures(salt_mock, failing):
    salt_mock[failing].return_value = False
    assert csmt.phr_registered("p-003", [51])["result"] is False


def test_current_study_is_left_alone(salt_mock):
    ret = csmt.study_published("hd", CAG)
    assert ret["result"] is True
    assert ret["changes"] == {}
    assert "bb" * 32 in ret["comment"]
    salt_mock["csmt.study_root"].assert_called_once_with("hd", tree_id="hd/cag-bins")
    salt_mock["csmt.study_build"].assert_not_called()


@pytest.mark.parametrize(
    "stale",
    [
        {"phr_root": "ee" * 32},
        {"cohort": core.cohort_digest(["p-001"]).hex()},
        {"transform_id": "cag-other"},
    ],
)
def test_stale_study_is_rebuilt(salt_mock, stale):
    salt_mock["csmt.study_root"].return_value = {"body": {**ROOT["body"], **stale}}
    ret = csmt.study_published("hd", "cag-bins", tree_id="hd/cag-bins")
    assert ret["result"] is True
    assert ret["changes"] == {"old": "bb" * 32, "new": "dd" * 32}
    salt_mock["csmt.study_build"].assert_called_once_with(
        "hd", "cag-bins", included=None, tree_id="hd/cag-bins", aggregator_id="sum"
    )


def test_included_cohort_is_compared(salt_mock):
    assert csmt.study_published("hd", CAG, included=["p-001"])["changes"]
    salt_mock["csmt.study_build"].reset_mock()
    assert csmt.study_published("hd", CAG, included=["p-002", "p-001"])["changes"] == {}
    salt_mock["csmt.study_build"].assert_not_called()


def test_swapped_included_user_triggers_a_rebuild(salt_mock):
    salt_mock["csmt.phr_users"].return_value = ["p-001", "p-002", "p-003"]
    ret = csmt.study_published("hd", CAG, included=["p-001", "p-003"])
    assert ret["changes"] == {"old": "bb" * 32, "new": "dd" * 32}
    salt_mock["csmt.study_build"].assert_called_once_with(
        "hd", CAG, included=["p-001", "p-003"], tree_id="hd/cag-bins", aggregator_id="sum"
    )


def test_unpublished_study(salt_mock):
    salt_mock["csmt.study_root"].return_value = None
    with pytest.MonkeyPatch.context() as patch:
        patch.setitem(csmt.__opts__, "test", True)
        ret = csmt.study_published("hd", CAG)
    assert ret["result"] is None
    assert ret["changes"]["old"] is None
    salt_mock["csmt.study_build"].assert_not_called()

    ret = csmt.study_published("hd", CAG)
    assert ret["changes"] == {"old": None, "new": "dd" * 32}


@pytest.mark.parametrize("failing", ["csmt.study_root", "csmt.phr_root", "csmt.study_build"])
def test_study_failures(salt_mock, failing):
    salt_mock["csmt.phr_root"].return_value = "ee" * 32
    salt_mock[failing].return_value = False
    assert csmt.study_published("hd", CAG)["result"] is False
