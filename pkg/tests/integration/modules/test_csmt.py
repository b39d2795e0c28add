import pytest

pytestmark = [
    pytest.mark.requires_salt_modules("csmt.phr_register"),
]


def test_published_root(salt_call_cli, hd_study):
    ret = salt_call_cli.run("csmt.study_root", "hd")
    assert ret.returncode == 0
    assert ret.data == hd_study
    assert ret.data["body"]["tree_id"] == "hd/cag-bins"
    assert ret.data["body"]["included"] == 3


def test_membership_across_calls(salt_call_cli, hd_study):
    ret = salt_call_cli.run("csmt.verify_include", "hd", "p-002")
    assert ret.data["verified"] is True
    ret = salt_call_cli.run("csmt.verify_exclude", "hd", "p-004")
    assert ret.data["verified"] is True
    ret = salt_call_cli.run("csmt.verify_include", "hd", "p-004")
    assert ret.data["verified"] is False


def test_offline_bundle(salt_call_cli, hd_study, tmp_path):
    filename = str(tmp_path / "p-001.json")
    ret = salt_call_cli.run("csmt.prove_mrp", "hd", "p-001", f"filename={filename}")
    assert ret.returncode == 0
    public_key = salt_call_cli.run("csmt.bulletin", "study_id=hd").data["public_key"]
    ret = salt_call_cli.run("csmt.verify_include", f"filename={filename}", f"public_key={public_key}")
    assert ret.data["verified"] is True


def test_audit(salt_call_cli, hd_study):
    ret = salt_call_cli.run("csmt.audit_exclusivity", "hd")
    assert ret.data["passed"] is True


def test_unknown_user(salt_call_cli, hd_study):
    ret = salt_call_cli.run("csmt.phr_prove", "p-404")
    assert ret.data is False
