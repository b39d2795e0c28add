import os

import pytest
from cryptography.fernet import Fernet
from saltext.csmt import PACKAGE_ROOT
from saltext.csmt.utils.config import Settings
from saltext.csmt.utils.deployment import Deployment
from saltfactories.utils import random_string

# 32 bit trees keep leaf index collisions out of the way for cohorts of a few hundred users
TEST_SETTINGS = {
    "tree_height": 32,
    "scale": 12,
    "backend_seed": "5eed" * 16,
}


@pytest.fixture(scope="session")
def salt_factories_config():
    """
    Return a dictionary with the keyworkd arguments for FactoriesManager
    """
    return {
        "code_dir": str(PACKAGE_ROOT),
        "inject_sitecustomize": "COVERAGE_PROCESS_START" in os.environ,
        "start_timeout": 120 if os.environ.get("CI") else 60,
    }


@pytest.fixture(scope="package")
def master(salt_factories):
    return salt_factories.salt_master_daemon(random_string("master-"))


@pytest.fixture(scope="package")
def minion(master, tmp_path_factory):
    # every salt-call is a new process
    overrides = {
        **TEST_SETTINGS,
        "state_dir": str(tmp_path_factory.mktemp("csmt-state")),
        "witness_key": Fernet.generate_key().decode(),
    }
    return master.salt_minion_daemon(random_string("minion-"), overrides={"csmt": overrides})


@pytest.fixture
def settings():
    return Settings(**TEST_SETTINGS)


@pytest.fixture
def deployment(settings):
    return Deployment(settings)


@pytest.fixture
def hd_cohorts(deployment):
    """
    Seed 7 healthy and HD cohorts registered in ``deployment``.
    """
    return deployment.register_hd_cohorts(7)
