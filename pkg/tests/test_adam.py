"""Adam optimizer contract tests."""

import numpy as np
import pytest

from fidonet.errors import NumericError
from fidonet.numerics import AdamState, Parameter, adam_step


def test_zero_grad_is_identity_on_values():
    p = Parameter(np.array([1.5, -2.0, 0.25]), "w")
    p.zero_grad()
    state = AdamState(lr=1e-3)
    adam_step([p], state)
    np.testing.assert_array_equal(p.data, [1.5, -2.0, 0.25])
    assert state.step == 1


def test_first_step_closed_form():
    # w=1, g=1, lr=1e-4: bias-corrected m_hat = v_hat = 1, so the update
    # magnitude is lr/(1+eps) and w lands at 1 - ~1e-4.
    p = Parameter(np.array([1.0]), "w")
    p.grad = np.array([1.0])
    state = AdamState(lr=1e-4)
    adam_step([p], state)
    assert abs(p.data[0] - (1.0 - 1e-4)) < 1e-6
    assert p.grad is not None and np.all(p.grad == 0.0)


def test_identical_grads_descend_monotonically():
    p = Parameter(np.array([3.0]), "w")
    state = AdamState(lr=1e-2)
    values = [p.data[0]]
    for _ in range(5):
        p.grad = np.array([2.0])
        adam_step([p], state)
        values.append(p.data[0])
    assert all(b < a for a, b in zip(values, values[1:]))


def test_missing_grad_names_parameter():
    p = Parameter(np.array([1.0]), "left.fido.ps.mhsa.Wq")
    with pytest.raises(NumericError, match="left.fido.ps.mhsa.Wq"):
        adam_step([p], AdamState())


def test_zero_lr_keeps_values():
    p = Parameter(np.array([1.0, 2.0]), "w")
    p.grad = np.array([0.3, -0.7])
    adam_step([p], AdamState(lr=0.0))
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
