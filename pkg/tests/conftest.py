import pytest

from msdelay.models import BouncingBallParams, bouncing_ball, bouncing_ball_affine
from msdelay.ode import IntegratorSettings
from msdelay.poincare import default_curve

# Floor stiffness at which the nonlinear reference optimum (0.0014128697 s) is reproduced.
TARGET_STIFFNESS = 50000.0


@pytest.fixture(scope="session")
def settings():
    return IntegratorSettings()


@pytest.fixture(scope="session")
def affine_settings():
    return IntegratorSettings(horizon=100.0)


@pytest.fixture(scope="session")
def ball():
    return bouncing_ball()


@pytest.fixture(scope="session")
def ball50():
    return bouncing_ball(BouncingBallParams(c=TARGET_STIFFNESS))


@pytest.fixture(scope="session")
def affine():
    return bouncing_ball_affine()


@pytest.fixture(scope="session")
def curve(ball):
    return default_curve(ball)


@pytest.fixture(scope="session")
def curve50(ball50):
    return default_curve(ball50)


@pytest.fixture(scope="session")
def affine_curve(affine):
    return default_curve(affine)


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
