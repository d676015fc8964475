import numpy as np
import pytest

from refattn.errors import NumericalError, ShapeError, UsageError
from refattn.numerics import NdArray, Tape, no_grad, set_debug
from refattn.numerics import ops


def test_square_gradient_at_three():
    x = NdArray(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def test_repeated_backward_accumulates():
    x = NdArray([1.0, 2.0], requires_grad=True)
    ops.sum_(x * 3.0).backward()
    ops.sum_(x * 3.0).backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])
    x.zero_grad()
    assert x.grad is None


def test_detached_input_gets_no_grad():
    x = NdArray([1.0, 2.0], requires_grad=True)
    c = NdArray([4.0, 5.0])
    ops.sum_(x * c).backward()
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, [4.0, 5.0])


def test_backward_on_non_scalar_is_usage_error():
    x = NdArray([1.0, 2.0], requires_grad=True)
    with pytest.raises(UsageError):
        (x * 2.0).backward()


def test_backward_off_tape_is_usage_error():
    with pytest.raises(UsageError):
        NdArray(1.0).backward()


def test_construction_rejects_non_finite():
    with pytest.raises(NumericalError):
        NdArray([1.0, np.nan])
    with pytest.raises(NumericalError):
        NdArray([np.inf])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_debug_mode_checks_kernel_outputs():
    x = NdArray([0.0])
    set_debug(True)
    try:
        with pytest.raises(NumericalError):
            ops.log(x)
    finally:
        set_debug(False)


def test_data_is_float64_copy():
    src = np.arange(6, dtype=np.float32).reshape(2, 3)
    x = NdArray(src)
    assert x.data.dtype == np.float64 and x.data.flags.c_contiguous
    src[0, 0] = 99
    assert x.data[0, 0] == 0
    assert x.size == 6 and x.shape == (2, 3)


def test_no_grad_records_nothing():
    x = NdArray([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_tape_is_topological_and_unique():
    x = NdArray([1.0, 2.0], requires_grad=True)
    a = x * 2.0
    b = a + x
    c = ops.sum_(a * b)
    tape = Tape.from_output(c)
    seen = set()
    for node in tape.ops:
        for parent in node._parents:
            if not parent.is_leaf:
                assert id(parent) in seen
        assert id(node) not in seen
        seen.add(id(node))
    assert len(tape) == 4


def test_shared_subexpression_gradient():
    x = NdArray([2.0], requires_grad=True)
    a = x * x
    ops.sum_(a + a).backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_matmul_inner_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        ops.matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_broadcast_gradient_is_reduced():
    a = NdArray(np.ones((3, 4)), requires_grad=True)
    b = NdArray(np.arange(4.0), requires_grad=True)
    ops.sum_(a * b).backward()
    np.testing.assert_array_equal(b.grad, [3.0, 3.0, 3.0, 3.0])
    np.testing.assert_array_equal(a.grad, np.tile(np.arange(4.0), (3, 1)))
