import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cbf_invert.dynamics import (AgentState, DimensionError, DynamicsParams, JointState,
                                 constraint_relevant_state, control_matrix, step)


@pytest.mark.parametrize("p, v, u, dt, p_exp, v_exp", [
    ((0, 0), (1, 0), (0, 0), 0.1, (0.1, 0), (1, 0)),
    ((0, 0), (0, 0), (1, 0), 0.1, (0.005, 0), (0.1, 0)),
    ((1, 1), (-1, 0), (0, 2), 0.2, (0.8, 1.04), (-1, 0.4)),
])
def test_step_examples(p, v, u, dt, p_exp, v_exp):
    out = step(AgentState(p, v), u, DynamicsParams(dt))
    np.testing.assert_allclose(out.position, p_exp, atol=1e-12)
    np.testing.assert_allclose(out.velocity, v_exp, atol=1e-12)


@pytest.mark.parametrize("p, v", [((3, 4), (9, 9)), ((0, 0), (1, 1)), ((-2, 5), (0, 0))])
def test_constraint_relevant_state_is_position(p, v):
    np.testing.assert_array_equal(constraint_relevant_state(AgentState(p, v)), p)


@pytest.mark.parametrize("dt, scale", [(0.1, 0.005), (1.0, 0.5), (0.2, 0.02)])
def test_control_matrix(dt, scale):
    np.testing.assert_allclose(control_matrix(DynamicsParams(dt)), scale * np.eye(2))


vec3 = arrays(float, 3, elements=st.floats(-50, 50))


@settings(max_examples=60, deadline=None)
@given(p=vec3, v=vec3, u1=vec3, u2=vec3, dt=st.floats(0.01, 1.0))
def test_step_is_control_affine_in_any_dimension(p, v, u1, u2, dt):
    params = DynamicsParams(dt, dim=3)
    a, b = step(AgentState(p, v), u1, params), step(AgentState(p, v), u2, params)
    np.testing.assert_allclose(a.position - b.position, control_matrix(params) @ (u1 - u2),
                               atol=1e-9 * (1 + np.abs(u1).max() + np.abs(u2).max()))
    assert a.position.shape == p.shape


def test_invalid_inputs():
    with pytest.raises(ValueError):
        DynamicsParams(0.0)
    with pytest.raises(DimensionError):
        AgentState((0, 0), (0, 0, 0))
    with pytest.raises(DimensionError):
        step(AgentState((0, 0), (0, 0)), (1, 2, 3), DynamicsParams())
    with pytest.raises(ValueError):
        AgentState((np.nan, 0), (0, 0))
    with pytest.raises(DimensionError):
        JointState((AgentState((0, 0), (0, 0)), AgentState((0, 0, 0), (0, 0, 0))))


def test_joint_state_stacks():
    js = JointState((AgentState((0, 1), (2, 3)), AgentState((4, 5), (6, 7))), 3)
    assert len(js) == 2 and js.time_index == 3
    np.testing.assert_array_equal(js.positions(), [[0, 1], [4, 5]])
    np.testing.assert_array_equal(js.velocities(), [[2, 3], [6, 7]])
