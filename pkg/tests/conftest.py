import numpy as np
import pytest

from mlplr import ConstraintBox, HiddenUnit, MlpParams, RegressionSpec


@pytest.fixture(scope="session")
def desk_spec() -> RegressionSpec:
    """Default desk configuration: d=1, k0=1, theta0=(0.5, 1, (0.5, 1))."""
    theta0 = MlpParams(0.5, [HiddenUnit(1.0, np.array([0.5, 1.0]))])
    return RegressionSpec(theta0, sigma2=1.0, input_dim=1)


@pytest.fixture(scope="session")
def desk_box() -> ConstraintBox:
    return ConstraintBox(eta=0.1, M=50.0, positive_amplitudes=True)
