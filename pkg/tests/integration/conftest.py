import pytest


@pytest.fixture(scope="package")
def master(master):
    with master.started():
        yield master


@pytest.fixture(scope="package")
def minion(minion):
    with minion.started():
        yield minion


@pytest.fixture
def salt_run_cli(master):
    return master.salt_run_cli()


@pytest.fixture
def salt_cli(master):
    return master.salt_cli()


@pytest.fixture
def salt_call_cli(minion):
    return minion.salt_call_cli()


@pytest.fixture(scope="package")
def hd_study(minion):
    """
    A published study over four registered users, three of them included.
    """
    cli = minion.salt_call_cli()
    for user, value in (("p-001", 44), ("p-002", 18), ("p-003", 51), ("p-004", 29)):
        ret = cli.run("csmt.phr_register", f"user_id={user}", f"values=[{value}]")
        assert ret.returncode == 0
    transform = '{"id": "cag-bins", "kind": "bincount", "bins": [0, 11, 22, 33, 44, 55, 66]}'
    ret = cli.run("csmt.study_build", "hd", f"transform={transform}", "included=[p-001, p-002, p-003]")
    assert ret.returncode == 0
    assert ret.data
    return ret.data
