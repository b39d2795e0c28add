# Configuration file for the Sphinx documentation builder.
# https://www.sphinx-doc.org/en/master/usage/configuration.html
import datetime
import os
import sys

try:
    from importlib_metadata import distribution
except ImportError:
    from importlib.metadata import distribution


try:
    docs_basepath = os.path.abspath(os.path.dirname(__file__))
except NameError:
    # sphinx-intl executes this file without __file__
    docs_basepath = os.path.abspath(os.path.dirname("."))

# saltext.csmt itself, for autodoc
sys.path.insert(0, os.path.abspath(os.path.join(docs_basepath, os.pardir, "src")))

dist = distribution("saltext.csmt")


# -- Project information -----------------------------------------------------
this_year = datetime.datetime.today().year
copyright_year = "2026" if this_year == 2026 else f"2026 - {this_year}"
project = dist.metadata["Summary"]
author = dist.metadata["Author"]
copyright = f"{copyright_year}, {author}"  # pylint: disable=redefined-builtin
release = dist.version


# Substitutions shared by every page
with open(os.path.join(docs_basepath, "sitevars.rst")) as site_vars_file:
    rst_prolog = "\n" + site_vars_file.read() + "\n"

# -- General configuration ---------------------------------------------------
extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.napoleon",
    "sphinx.ext.intersphinx",
    "sphinx.ext.viewcode",
    "sphinx_copybutton",
    "sphinxcontrib.spelling",
]

exclude_patterns = [
    "_build",
    ".venv",
    "sitevars.rst",
]

autosummary_generate = False

# -- Options for HTML output -------------------------------------------------
html_theme = "furo"
html_title = project

# Docstrings use the Salt style: a parameter name on its own line, indented text below
napoleon_google_docstring = True
napoleon_numpy_docstring = False
napoleon_include_init_with_doc = True
napoleon_use_param = True
napoleon_use_rtype = True

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "salt": ("https://docs.saltproject.io/en/latest", None),
    "flask": ("https://flask.palletsprojects.com/en/latest", None),
    "cryptography": ("https://cryptography.io/en/latest", None),
}

autodoc_default_options = {"member-order": "bysource"}
# the library imports salt and the scientific stack at module level
autodoc_mock_imports = ["salt", "flask", "werkzeug", "requests", "urllib3", "scipy"]
