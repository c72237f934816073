import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from planar_impact.dynamics import BodyModel, PlanarState, build_contact_frame

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_frame(rng, approach_min=1e-2):
    """Contact frame of a random triangle body at a random contact point below the COM."""
    while True:
        m = rng.uniform(0.5, 2.0)
        rho = rng.uniform(0.03, 0.15)
        body = BodyModel(m, m * rho**2, [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        ang = rng.uniform(-0.95 * np.pi, -0.05 * np.pi)
        d = rng.uniform(0.1, 1.8) * rho
        v = np.array([rng.uniform(-1, 1), rng.uniform(-2, 0), rng.uniform(-10, 10)])
        state = PlanarState([0.0, 0.0, 0.0], v)
        frame = build_contact_frame(state, body, [d * np.cos(ang), d * np.sin(ang)])
        if frame.v_n < -approach_min:
            return frame


def random_frames(rng, n):
    return [random_frame(rng) for _ in range(n)]


def lowest_vertex_state(body, rng, speed=(0.5, 3.0)):
    """Random configuration touching the ground at its lowest vertex, approaching."""
    while True:
        theta = rng.uniform(0, 2 * np.pi)
        q = np.array([0.0, 0.0, theta])
        verts = body.world_vertices(q)
        q[1] = -verts[:, 1].min()
        contact = body.world_vertices(q)[np.argmin(verts[:, 1])]
        v = np.array([rng.uniform(-1, 1), -rng.uniform(*speed), rng.uniform(-10, 10)])
        state = PlanarState(q, v)
        if build_contact_frame(state, body, contact).v_n < -1e-2:
            return state, contact


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def box_body():
    return BodyModel.rectangle(0.1, 0.06, 0.5, name="rectangle")


@pytest.fixture(scope="session")
def unit_body():
    """m = 1, I = 0.1, COM at the origin."""
    return BodyModel(1.0, 0.1, [[-0.2, -0.2], [0.2, -0.2], [0.2, 0.2], [-0.2, 0.2]], name="unit")


def synthetic_events(model, params, body, rng, n, speed=(0.5, 3.0)):
    from planar_impact.sysid import synthetic_event

    out = []
    for i in range(n):
        state, contact = lowest_vertex_state(body, rng, speed)
        out.append(synthetic_event(model, params, body, state, contact, event_id=f"e{i}"))
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
