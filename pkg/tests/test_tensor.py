import math

import numpy as np
import pytest

from cmmp.tensor import (NumericError, OP_TAGS, ShapeError, Tape, Tensor,
                         finite_difference_grad, primitive_forward)


def test_tensor_invariants():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.shape == (2, 2)
    assert t.size == 4
    assert list(t.data) == [1.0, 2.0, 3.0, 4.0]  # row-major
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 0)))


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[3.0, 4.0], [5.0, 6.0]])
    out = primitive_forward("matmul", [eye, m])
    np.testing.assert_array_equal(out.array, m.array)


def test_matmul_transpose_variants():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 5))
    np.testing.assert_allclose(
        primitive_forward("matmul", [Tensor(a.T), Tensor(b)], transpose_a=True).array,
        a @ b, rtol=0, atol=1e-15)
    np.testing.assert_allclose(
        primitive_forward("matmul", [Tensor(a), Tensor(b.T)], transpose_b=True).array,
        a @ b, rtol=0, atol=1e-15)


def test_sigmoid_at_zero():
    assert primitive_forward("sigmoid", [Tensor(0.0)]).item() == 0.5


def test_sigmoid_extreme_inputs_stay_finite():
    out = primitive_forward("sigmoid", [Tensor([-800.0, 800.0])])
    np.testing.assert_allclose(out.array, [0.0, 1.0], atol=1e-12)


def test_logsumexp_direct_value():
    # oracle: direct high-precision evaluation of ln(e^2 + 2)
    expected = math.log(math.exp(2.0) + 2.0)
    got = primitive_forward("logsumexp", [Tensor([2.0, 0.0, 0.0])]).item()
    assert abs(got - expected) <= 1e-12
    assert abs(got - 2.23954) <= 1e-4


def test_logsumexp_shift_invariance():
    rng = np.random.default_rng(3)
    s = rng.standard_normal(6)
    base = primitive_forward("logsumexp", [Tensor(s)]).item()
    for c in (-50.0, -1.0, 0.37, 12.0, 300.0):
        shifted = primitive_forward("logsumexp", [Tensor(s + c)]).item()
        assert abs(shifted - (base + c)) <= 1e-12 * max(1.0, abs(base + c))


def test_logsumexp_large_logits_no_overflow():
    out = primitive_forward("logsumexp", [Tensor([1000.0, 999.0])])
    assert abs(out.item() - (1000.0 + math.log(1.0 + math.exp(-1.0)))) < 1e-9


def test_mean_of_integer_constant_is_exact():
    for c, shape, axis in ((7.0, (3, 5), 0), (-4.0, (3, 5), 1), (2.0, (7,), 0)):
        out = primitive_forward("mean", [Tensor(np.full(shape, c))], axis=axis)
        assert np.all(out.array == c)


def test_add_row_broadcast_and_errors():
    a = Tensor(np.ones((2, 3)))
    b = Tensor([1.0, 2.0, 3.0])
    out = primitive_forward("add", [a, b])
    np.testing.assert_array_equal(out.array, [[2, 3, 4], [2, 3, 4]])
    with pytest.raises(ShapeError, match="add"):
        primitive_forward("add", [a, Tensor(np.ones((3, 2)))])


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ShapeError) as exc:
        primitive_forward("matmul", [Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3)))])
    msg = str(exc.value)
    assert "matmul" in msg and "(2, 3)" in msg


def test_nonfinite_input_raises_numeric_error():
    with pytest.raises(NumericError):
        primitive_forward("tanh", [Tensor.wrap(np.array([np.nan]))])
    tape = Tape()
    with pytest.raises(NumericError):
        tape.leaf(np.array([np.inf]))


def test_slice_concat_gather_roundtrip():
    arr = np.arange(12.0).reshape(3, 4)
    left = primitive_forward("slice", [Tensor(arr)], start=0, stop=2)
    right = primitive_forward("slice", [Tensor(arr)], start=2, stop=4)
    back = primitive_forward("concat", [left, right])
    np.testing.assert_array_equal(back.array, arr)
    row = primitive_forward("gather", [Tensor(arr)], index=1)
    np.testing.assert_array_equal(row.array, arr[1:2])
    with pytest.raises(ShapeError):
        primitive_forward("gather", [Tensor(arr)], index=3)


def test_backward_sum_of_squares():
    tape = Tape()
    x = tape.leaf([1.0, -2.0, 3.0])
    root = tape.sum(tape.mul(x, x))
    tape.backward(root)
    np.testing.assert_array_equal(tape.grad(x).array, [2.0, -4.0, 6.0])


def test_backward_relu_subgradient():
    for value, expected in ((-1.0, 0.0), (2.0, 1.0), (0.0, 0.0)):
        tape = Tape()
        x = tape.leaf(value)
        tape.backward(tape.sum(tape.relu(x)))
        assert tape.grad(x).item() == expected


def test_backward_requires_scalar_root():
    tape = Tape()
    x = tape.leaf([1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(tape.relu(x))


def test_unreachable_nodes_get_zero_gradient():
    tape = Tape()
    x = tape.leaf([1.0, 2.0])
    y = tape.leaf([3.0, 4.0])
    tape.mul(y, y)  # disconnected from the root
    tape.backward(tape.sum(x))
    np.testing.assert_array_equal(tape.grad(y).array, [0.0, 0.0])


def test_backward_replay_is_bit_identical():
    rng = np.random.default_rng(11)
    a_val = rng.standard_normal((3, 3))
    b_val = rng.standard_normal((3, 3))

    def run():
        tape = Tape()
        a, b = tape.leaf(a_val), tape.leaf(b_val)
        out = tape.sum(tape.tanh(tape.matmul(a, tape.sigmoid(b))))
        tape.backward(out)
        return tape.grad(a).array.copy(), tape.grad(b).array.copy()

    ga1, gb1 = run()
    ga2, gb2 = run()
    assert np.array_equal(ga1, ga2) and np.array_equal(gb1, gb2)


def test_random_three_op_graphs_match_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x_val = Tensor.wrap(rng.standard_normal((3, 4)))
        w_val = Tensor.wrap(rng.standard_normal((4, 4)))

        def loss(params):
            x, w = params
            tape = Tape()
            xn, wn = tape.leaf(x), tape.leaf(w)
            return tape.sum(tape.tanh(tape.matmul(xn, wn))).item()

        tape = Tape()
        xn, wn = tape.leaf(x_val), tape.leaf(w_val)
        tape.backward(tape.sum(tape.tanh(tape.matmul(xn, wn))))
        numeric = finite_difference_grad(loss, [x_val, w_val], h=1e-5)
        for node, num in ((xn, numeric[0]), (wn, numeric[1])):
            rel = np.abs(tape.grad(node).array - num.array) / (1.0 + np.abs(num.array))
            assert rel.max() <= 1e-6


def _random_case(op, rng):
    """Sample (inputs, params) for one catalogue op, away from relu kinks."""
    if op == "matmul":
        ta, tb = bool(rng.integers(2)), bool(rng.integers(2))
        m, k, n = (int(d) for d in rng.integers(1, 5, size=3))
        a = rng.standard_normal((k, m) if ta else (m, k))
        b = rng.standard_normal((n, k) if tb else (k, n))
        return [a, b], {"transpose_a": ta, "transpose_b": tb}
    if op == "add":
        if rng.integers(2):
            shape = tuple(rng.integers(1, 5, size=2))
            return [rng.standard_normal(shape), rng.standard_normal(shape)], {}
        m, n = (int(d) for d in rng.integers(1, 5, size=2))
        return [rng.standard_normal((m, n)), rng.standard_normal(n)], {}
    if op in ("mul", "sigmoid", "tanh", "sum", "logsumexp"):
        shape = tuple(rng.integers(1, 5, size=2))
        args = [rng.standard_normal(shape)]
        if op == "mul":
            args.append(rng.standard_normal(shape))
        return args, {}
    if op == "relu":
        x = rng.standard_normal((3, 4))
        x[np.abs(x) < 1e-3] += 0.1  # stay away from the kink
        return [x], {}
    if op == "scale":
        return [rng.standard_normal((2, 3))], {"factor": float(rng.standard_normal())}
    if op == "slice":
        n = int(rng.integers(2, 6))
        start = int(rng.integers(0, n - 1))
        stop = int(rng.integers(start + 1, n + 1))
        return [rng.standard_normal((3, n))], {"start": start, "stop": stop}
    if op == "concat":
        m = int(rng.integers(1, 4))
        return [rng.standard_normal((m, int(rng.integers(1, 4)))),
                rng.standard_normal((m, int(rng.integers(1, 4))))], {}
    if op == "mean":
        shape = tuple(rng.integers(1, 5, size=2))
        return [rng.standard_normal(shape)], {"axis": int(rng.integers(0, 2))}
    if op == "gather":
        m = int(rng.integers(1, 5))
        return [rng.standard_normal((m, 3))], {"index": int(rng.integers(0, m))}
    raise AssertionError(op)


@pytest.mark.parametrize("op", OP_TAGS)
def test_catalogue_backward_matches_finite_differences(op):
    # mixed tolerance |a - b| <= 1e-6 * (1 + |b|) over 100 seeded instances
    rng = np.random.default_rng(hash(op) % (2**32))
    tape_ops = {
        "matmul": lambda t, nodes, p: t.matmul(*nodes, **p),
        "add": lambda t, nodes, p: t.add(*nodes),
        "mul": lambda t, nodes, p: t.mul(*nodes),
        "scale": lambda t, nodes, p: t.scale(nodes[0], p["factor"]),
        "sigmoid": lambda t, nodes, p: t.sigmoid(nodes[0]),
        "tanh": lambda t, nodes, p: t.tanh(nodes[0]),
        "relu": lambda t, nodes, p: t.relu(nodes[0]),
        "slice": lambda t, nodes, p: t.slice_last(nodes[0], p["start"], p["stop"]),
        "concat": lambda t, nodes, p: t.concat_last(*nodes),
        "mean": lambda t, nodes, p: t.mean(nodes[0], p["axis"]),
        "sum": lambda t, nodes, p: t.sum(nodes[0]),
        "logsumexp": lambda t, nodes, p: t.logsumexp(nodes[0]),
        "gather": lambda t, nodes, p: t.gather_row(nodes[0], p["index"]),
    }
    for _ in range(100):
        arrays, params = _random_case(op, rng)
        tensors = [Tensor(a) for a in arrays]
        # weight the output so the scalarized loss exercises every entry
        out_probe = primitive_forward(op, tensors, **params)
        weights = rng.standard_normal(out_probe.shape)

        def loss(ts):
            tape = Tape()
            nodes = [tape.leaf(t) for t in ts]
            out = tape_ops[op](tape, nodes, params)
            return tape.sum(tape.mul(out, tape.leaf(weights))).item()

        tape = Tape()
        nodes = [tape.leaf(t) for t in tensors]
        out = tape_ops[op](tape, nodes, params)
        tape.backward(tape.sum(tape.mul(out, tape.leaf(weights))))
        numeric = finite_difference_grad(loss, tensors, h=1e-5)
        for node, num in zip(nodes, numeric):
            err = np.abs(tape.grad(node).array - num.array) - 1e-6 * (1.0 + np.abs(num.array))
            assert err.max() <= 0.0, f"{op}: vjp disagrees with finite differences"


def test_finite_difference_square():
    theta = Tensor(3.0)
    (grad,) = finite_difference_grad(lambda p: p[0].item() ** 2, [theta], h=1e-5)
    assert abs(grad.item() - 6.0) <= 1e-9


def test_finite_difference_sigmoid_slope():
    theta = Tensor(0.0)

    def f(params):
        return primitive_forward("sigmoid", [params[0]]).item()

    (grad,) = finite_difference_grad(f, [theta], h=1e-5)
    assert abs(grad.item() - 0.25) <= 1e-8


def test_finite_difference_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_difference_grad(lambda p: 0.0, [Tensor(1.0)], h=0.0)
