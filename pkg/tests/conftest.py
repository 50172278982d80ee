import numpy as np
import pytest

from ftlmacro import (FAMILY_NEWELL, FAMILY_TRUNCATED_LINEAR, TypeDistribution,
                      VehicleTypeSpec, demo_two_type_mix)

# Frozen oracle constants (computed from the closed forms and cross-checked
# against bisection on the forward map; see test_velocity_models).
P_HALF_A = 1.6931471805599454          # V_A^{-1}(0.5) = 1 + ln 2
P_HALF_B = 2.5753641449035616          # V_B^{-1}(0.5) = 2 - 2 ln(3/4)
EXPECTED_INV_HALF = 2.1342556627317535  # mix E[V^{-1}(0.5)]
EXPECTED_INV_99 = 4.4857819427008225    # mix E[V^{-1}(0.99)]


@pytest.fixture
def type_a():
    return VehicleTypeSpec("A", FAMILY_NEWELL, h0=1.0, v_max=1.0, params={"lam": 1.0})


@pytest.fixture
def type_b():
    return VehicleTypeSpec("B", FAMILY_NEWELL, h0=2.0, v_max=2.0, params={"lam": 0.5})


@pytest.fixture
def trunc_lin():
    return VehicleTypeSpec("T", FAMILY_TRUNCATED_LINEAR, h0=2.0, v_max=2.0,
                           params={"sigma": 0.5})


@pytest.fixture
def single_a(type_a):
    return TypeDistribution(((type_a, 1.0),))


@pytest.fixture
def mix():
    return demo_two_type_mix()
