import numpy as np
import pytest

from complexiris.autograd import Parameter
from complexiris.ctensor import ComplexTensor
from complexiris.optim import (DESK_SCHEDULE, FULL_SCHEDULE, NumericalError, OptimState,
                               format_schedule, global_grad_norm, learning_rate, parse_schedule,
                               sgd_step)


@pytest.mark.parametrize("epoch,lr", [(0, 0.01), (5, 0.01), (10, 0.1), (50, 0.1), (129, 0.1),
                                      (135, 0.01), (165, 0.001)])
def test_long_schedule(epoch, lr):
    assert learning_rate(FULL_SCHEDULE, epoch) == lr


def test_desk_schedule():
    assert [learning_rate(DESK_SCHEDULE, e) for e in (0, 2, 3, 20, 21, 26, 27)] == \
        [0.01, 0.01, 0.1, 0.1, 0.01, 0.01, 0.001]


def test_schedule_text_roundtrip():
    assert parse_schedule(format_schedule(FULL_SCHEDULE)) == FULL_SCHEDULE
    with pytest.raises(ValueError):
        parse_schedule("3:0.1")


def test_zero_gradient_leaves_params():
    p = Parameter(ComplexTensor(np.ones(3), np.ones(3)), "p")
    p.grad = ComplexTensor.zeros(3)
    sgd_step([p], OptimState(), 0)
    assert np.array_equal(p.value.re, np.ones(3))


def test_clipping_and_nesterov():
    p = Parameter(ComplexTensor(np.zeros(2)), "p")
    g = ComplexTensor(np.array([6.0, 8.0]))  # norm 10
    st = OptimState(schedule=((0, 0.5),))
    sgd_step([p], st, 0, [g])
    assert st.last_grad_norm == pytest.approx(10)
    clipped = np.array([0.6, 0.8])
    # v = g', update = g' + mu v = 1.9 g'
    assert np.allclose(p.value.re, -0.5 * 1.9 * clipped)
    assert global_grad_norm([ComplexTensor(clipped)]) <= 1 + 1e-9


def test_nonfinite_gradient_names_param():
    p = Parameter(ComplexTensor(np.zeros(2)), "dense0.conv")
    with pytest.raises(NumericalError, match="dense0.conv"):
        sgd_step([p], OptimState(), 0, [ComplexTensor(np.array([np.nan, 0.0]))])


def test_real_only_and_frozen():
    p = Parameter(ComplexTensor(np.zeros(2)), "r", real_only=True)
    q = Parameter(ComplexTensor(np.ones(2)), "q", trainable=False)
    sgd_step([p, q], OptimState(), 0, None)
    p.grad = ComplexTensor(np.ones(2), np.ones(2))
    q.grad = ComplexTensor(np.ones(2), np.ones(2))
    sgd_step([p, q], OptimState(), 0)
    assert np.all(p.value.im == 0) and np.all(p.value.re < 0)
    assert np.array_equal(q.value.re, np.ones(2))
