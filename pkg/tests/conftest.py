import pytest

from src.client import AttributeSpec
from src.group import GroupElement, GroupParams, setup_group


@pytest.fixture
def toy_params():
    """P = 23, q = 11, g = 4, cofactor 2."""
    return GroupParams(modulus_P=23, order_q=11, generator_g=GroupElement(4), cofactor_c=2)


@pytest.fixture(scope="session")
def params64():
    """64-bit modulus with a 48-bit prime-order subgroup."""
    return setup_group(64, 48, "test-group")


@pytest.fixture
def specs():
    return [
        AttributeSpec(1, "income", 1, 100),
        AttributeSpec(2, "education", 1, 16),
        AttributeSpec(3, "age", 15, 90),
    ]


@pytest.fixture
def small_spec():
    return AttributeSpec(1, "score", 1, 10)
