import pytest

from devicetalk.statemodel import builtin_device


@pytest.fixture(scope="session")
def lamp():
    return builtin_device("lamp")


@pytest.fixture(scope="session")
def thermostat():
    return builtin_device("thermostat")
