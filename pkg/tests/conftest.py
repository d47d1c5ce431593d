import pytest

from nestseg.config import parse_config_text

TINY = """
[scene]
image_size = 32x32
[network]
depth = 1
base_channels = 4
[train]
loss = {loss}
iterations = 20
eval_every = 10
n_images = 8
k_folds = 2
methods = softmax-ce, mce
"""


@pytest.fixture
def tiny_text():
    return TINY.format(loss="mce")


@pytest.fixture
def tiny_cfg(tiny_text):
    return parse_config_text(tiny_text)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
