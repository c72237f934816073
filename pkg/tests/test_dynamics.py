import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from planar_impact.dynamics import (
    BodyModel,
    ContactFrame,
    Impulse,
    PlanarState,
    apply_impulse,
    build_contact_frame,
    contact_momentum,
    load_body,
    save_body,
)
from planar_impact.errors import NonPositiveDefinite

finite = st.floats(-5, 5, allow_nan=False)


def point_contact_velocity(q, v, r):
    """Velocity of a material point: v + omega k x (r - com)."""
    rx, ry = r[0] - q[0], r[1] - q[1]
    return np.array([v[0] - v[2] * ry, v[1] + v[2] * rx])


def test_frame_offset_com(unit_body):
    state = PlanarState([0.0, 0.1, 0.0], [0.0, -1.0, 0.0])
    f = build_contact_frame(state, unit_body, [0.0, 0.0])
    np.testing.assert_allclose(f.jacobian, [[1, 0, 0.1], [0, 1, 0]], atol=1e-15)
    np.testing.assert_allclose(f.v_c, [0, -1], atol=1e-15)
    np.testing.assert_allclose(f.m_c_inv, [[1.1, 0], [0, 1]], atol=1e-12)
    j, minv = f.jacobian, np.diag([1.0, 1.0, 10.0])
    np.testing.assert_allclose(f.m_c_inv, j @ minv @ j.T, atol=1e-14)


def test_frame_at_com_is_decoupled(unit_body):
    state = PlanarState([0.3, 0.2, 0.7], [1.0, -1.0, 2.0])
    f = build_contact_frame(state, unit_body, [0.3, 0.2])
    np.testing.assert_allclose(f.m_c_inv, np.eye(2), atol=1e-15)


def coupled_frame(unit_body):
    state = PlanarState([0.0, 0.1, 0.0], [1.0, -1.0, 0.0])
    return state, build_contact_frame(state, unit_body, [0.1, 0.0])


def test_frame_coupled_example(unit_body):
    _, f = coupled_frame(unit_body)
    np.testing.assert_allclose(f.m_c_inv, [[1.1, 0.1], [0.1, 1.1]], atol=1e-12)
    np.testing.assert_allclose(f.v_c, [1, -1], atol=1e-15)
    np.testing.assert_allclose(f.m_c @ f.m_c_inv, np.eye(2), atol=1e-10)


def test_apply_zero_impulse(unit_body):
    state, f = coupled_frame(unit_body)
    out = apply_impulse(state, unit_body, f, Impulse(0.0, 0.0))
    np.testing.assert_array_equal(out.v, state.v)


def test_apply_impulse_example(unit_body):
    # omega gain = (-r_y p_t + r_x p_n) / I with r = (0.1, -0.1), I = 0.1
    state, f = coupled_frame(unit_body)
    p_t, p_n = -0.4206, 1.4019
    out = apply_impulse(state, unit_body, f, Impulse(p_t, p_n))
    expected = [1 + p_t, -1 + p_n, (0.1 * p_t + 0.1 * p_n) / 0.1]
    np.testing.assert_allclose(out.v, expected, atol=1e-12)
    np.testing.assert_allclose(out.v, [0.5794, 0.4019, 0.9813], atol=1e-12)


def test_contact_momentum_examples(unit_body):
    zero = ContactFrame.from_compliance(np.eye(2) / 2.0, [0.0, 0.0])
    np.testing.assert_allclose(contact_momentum(zero), [0, 0])
    point = ContactFrame.from_compliance(np.eye(2) / 2.0, [1.0, -1.0])
    np.testing.assert_allclose(contact_momentum(point), [2, -2], atol=1e-14)
    _, f = coupled_frame(unit_body)
    np.testing.assert_allclose(contact_momentum(f), np.linalg.solve(f.m_c_inv, f.v_c), atol=1e-12)


@given(q=st.tuples(finite, finite, finite), v=st.tuples(finite, finite, finite),
       r=st.tuples(finite, finite), p=st.tuples(finite, finite))
def test_kinematics_and_momentum_bookkeeping(unit_body, q, v, r, p):
    state = PlanarState(q, v)
    f = build_contact_frame(state, unit_body, r)
    np.testing.assert_allclose(f.v_c, point_contact_velocity(q, v, r), atol=1e-12)
    np.testing.assert_allclose(f.m_c_inv, f.m_c_inv.T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(f.m_c_inv) > 0)
    out = apply_impulse(state, unit_body, f, p)
    np.testing.assert_array_equal(out.q, state.q)
    assert out.t == state.t
    resid = unit_body.mass_matrix @ (out.v - state.v) - f.jacobian.T @ np.asarray(p)
    np.testing.assert_allclose(resid, 0, atol=1e-12)
    back = apply_impulse(out, unit_body, f, -Impulse(*p))
    np.testing.assert_allclose(back.v, state.v, atol=1e-12)


def test_body_validation():
    with pytest.raises(ValueError):
        BodyModel(0.0, 1.0, [[0, 0], [1, 0], [0, 1]])
    with pytest.raises(ValueError):
        BodyModel(1.0, -1.0, [[0, 0], [1, 0], [0, 1]])
    with pytest.raises(ValueError):
        BodyModel(1.0, 1.0, [[0, 0], [1, 0]])
    with pytest.raises(ValueError):
        BodyModel(1.0, 1.0, [[0, 0], [1, 1], [1, 0], [0, 1]])


def test_rectangle_and_polygon_mass_properties():
    box = BodyModel.rectangle(0.3, 0.1, 2.0)
    assert box.inertia == pytest.approx(2.0 * (0.09 + 0.01) / 12)
    # a regular 4-gon with circumradius R is a square of side R sqrt(2)
    sq = BodyModel.regular_polygon(4, 1.0, 1.0)
    assert sq.inertia == pytest.approx(2.0 / 6.0)
    np.testing.assert_allclose(sq.vertices[0], [0, -1], atol=1e-15)


def test_world_vertices(unit_body):
    w = unit_body.world_vertices([1.0, 2.0, np.pi / 2])
    np.testing.assert_allclose(w[0], [1.2, 1.8], atol=1e-12)


def test_degenerate_compliance_raises():
    with pytest.raises(NonPositiveDefinite):
        ContactFrame.from_compliance([[1.0, 1.0], [1.0, 1.0]], [0.0, -1.0])
    with pytest.raises(NonPositiveDefinite):
        ContactFrame.from_compliance([[1.0, 0.5], [0.0, 1.0]], [0.0, -1.0])


def test_body_file_round_trip(tmp_path, box_body):
    path = tmp_path / "body.json"
    save_body(box_body, path)
    assert set(json.loads(path.read_text())) >= {"mass", "inertia", "vertices"}
    again = load_body(path)
    assert again.mass == box_body.mass and again.inertia == box_body.inertia
    np.testing.assert_array_equal(again.vertices, box_body.vertices)


def test_state_rejects_bad_input():
    with pytest.raises(ValueError):
        PlanarState([0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        PlanarState([0, 0, np.nan], [0, 0, 0])
    with pytest.raises(ValueError):
        Impulse(np.inf, 0.0)
