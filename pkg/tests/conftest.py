import pytest

from semdews.ontology import default_ontology


@pytest.fixture(scope="session")
def onto():
    """Shipped ontology, closed once per test session."""
    return default_ontology()
