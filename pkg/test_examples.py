import pytest

from test_suite import CASES


@pytest.mark.slow
@pytest.mark.parametrize("name, case", CASES, ids=[n for n, _ in CASES])
def test_bundled_example(name, case):
    passed, detail = case()
    assert passed, detail
