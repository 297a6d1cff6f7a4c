import numpy as np
import pytest

from modedec.conical import ConicalSpaceSpec
from modedec.model import REAL, SignalModel


def gaussian_bump_model(beta: float = 1.0) -> SignalModel:
    """Real scalar-magnitude model with a smooth location-dependent bump."""

    def mode(xs, b):
        return np.exp(-((xs - b[0]) ** 2))

    def jac(xs, b):
        return (2.0 * (xs - b[0]) * np.exp(-((xs - b[0]) ** 2)))[:, None]

    return SignalModel(
        name="gaussian-bump",
        space=ConicalSpaceSpec(magnitude_dim=1, location_dim=1, beta=beta),
        value_kind=REAL,
        mode=mode,
        mode_location_jacobian=jac,
    )


@pytest.fixture
def bump_model():
    return gaussian_bump_model()
