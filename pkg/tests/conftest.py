import os

import pytest

from vxe import demos
from vxe.archspec import parse_spec

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def toy32():
    return parse_spec(demos.bundled_text("specs/toy32.spec"))


@pytest.fixture(scope="session")
def toy16dpp():
    return parse_spec(demos.bundled_text("specs/toy16dpp.spec"))


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Assembled demo firmware plus instantiated configs."""
    root = tmp_path_factory.mktemp("demo-workspace")
    return demos.build_workspace(str(root))


@pytest.fixture()
def data_path():
    def lookup(name):
        return os.path.join(DATA_DIR, name)
    return lookup
