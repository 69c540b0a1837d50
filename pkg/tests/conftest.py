import pytest
from hypothesis import settings

settings.register_profile("numeric", deadline=None, max_examples=100)
settings.load_profile("numeric")

from glmgf.functionals import catalog  # noqa: E402


@pytest.fixture(scope="session")
def cat():
    return catalog()
