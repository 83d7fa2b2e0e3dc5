import logging

import pytest


@pytest.fixture(autouse=True)
def _restore_root_logger():
    # the CLIs reconfigure the root logger; undo that between tests
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for h in list(root.handlers):
        if h not in handlers:
            root.removeHandler(h)
    for h in handlers:
        if h not in root.handlers:
            root.addHandler(h)
    root.setLevel(level)
