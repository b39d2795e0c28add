"""
Salt loader entry points for the CSMT extension.

Salt calls these through the ``salt.loader`` entry point declared in ``setup.cfg`` to find
the ``csmt`` execution and state modules.
"""
from . import PACKAGE_ROOT  # pylint: disable=no-name-in-module


def get_module_dirs():
    """
    Directories holding the ``csmt`` execution module
    """
    return [str(PACKAGE_ROOT / "_modules")]


def get_states_dirs():
    """
    Directories holding the ``csmt`` state module
    """
    return [str(PACKAGE_ROOT / "_states")]
