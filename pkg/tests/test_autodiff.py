import numpy as np
import pytest

from tempoedit.autodiff import (
    Tape,
    Tensor,
    add,
    finite_diff_check,
    gather,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    rope_rotate,
    scale,
    softmax,
    sub,
    tmean,
    transpose,
    tsum,
)
from tempoedit.rng import Rng


# -- independent naive references ---------------------------------------------


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def softmax_loops(x):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        e = [np.exp(v - max(row)) for v in row]
        s = sum(e)
        out[i] = [v / s for v in e]
    return out


def layer_norm_loops(x, eps=1e-6):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out[i] = [(v - mu) / np.sqrt(var + eps) for v in row]
    return out


# -- forward agreement ---------------------------------------------------------


def test_matmul_identity():
    m = Rng(0).normal((3, 3))
    assert np.array_equal(matmul(Tensor(np.eye(3)), Tensor(m)).data, m)


def test_matmul_hand_case():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[0.0], [1.0]])
    assert np.array_equal(matmul(a, b).data, [[2.0], [4.0]])


def test_matmul_against_triple_loop():
    rng = Rng(7)
    a, b = rng.normal((5, 7)), rng.normal((7, 3))
    got = matmul(Tensor(a), Tensor(b)).data
    assert np.max(np.abs(got - matmul_loops(a, b))) < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


@pytest.mark.parametrize("shape", [(4, 5), (2, 16), (1, 3)])
def test_softmax_and_layernorm_against_loops(shape):
    x = Rng(11).normal(shape)
    assert np.max(np.abs(softmax(Tensor(x)).data - softmax_loops(x))) < 1e-12
    assert np.max(np.abs(layer_norm(Tensor(x)).data - layer_norm_loops(x))) < 1e-12


def test_elementwise_against_loops():
    rng = Rng(3)
    a, b = rng.normal((4, 4)), rng.normal((4, 4))
    assert np.max(np.abs(add(Tensor(a), Tensor(b)).data - (a + b))) == 0.0
    assert np.max(np.abs(mul(Tensor(a), Tensor(b)).data - (a * b))) == 0.0
    assert np.max(np.abs(sub(Tensor(a), Tensor(b)).data - (a - b))) < 1e-12


# -- gradients -----------------------------------------------------------------


def test_grad_of_sum_is_ones():
    p = Tensor(Rng(1).normal((3, 2)))
    with Tape() as tape:
        leaf = tape.leaf(p)
        loss = tsum(leaf)
    g = tape.grad(loss, {"p": leaf})["p"]
    assert np.array_equal(g, np.ones((3, 2)))


def test_grad_of_square_is_2p():
    with Tape() as tape:
        p = tape.leaf(Tensor([1.0, 2.0]))
        loss = tsum(mul(p, p))
    g = tape.grad(loss, {"p": p})["p"]
    assert np.array_equal(g, [2.0, 4.0])


def test_unreachable_param_gets_zero_grad():
    with Tape() as tape:
        p = tape.leaf(Tensor([1.0, 2.0]))
        q = tape.leaf(Tensor([5.0]))
        loss = tsum(p)
    g = tape.grad(loss, {"p": p, "q": q})
    assert np.array_equal(g["q"], [0.0])


def test_non_scalar_loss_rejected():
    with Tape() as tape:
        p = tape.leaf(Tensor([1.0, 2.0]))
        out = mul(p, p)
    with pytest.raises(ValueError):
        tape.grad(out, {"p": p})


def test_broadcast_add_backward():
    # bias (d,) broadcast over (n, d): gradient must sum over rows
    with Tape() as tape:
        b = tape.leaf(Tensor([1.0, -1.0, 0.5]))
        x = Tensor(Rng(2).normal((4, 3)))
        loss = tsum(mul(add(x, b), add(x, b)))
    g = tape.grad(loss, {"b": b})["b"]
    expect = (2 * (np.asarray(x.data) + np.array([1.0, -1.0, 0.5]))).sum(axis=0)
    assert np.max(np.abs(g - expect)) < 1e-12


def test_gather_backward_scatter_adds():
    with Tape() as tape:
        table = tape.leaf(Tensor(np.arange(6.0).reshape(3, 2)))
        out = gather(table, np.array([0, 2, 0]))
        loss = tsum(out)
    g = tape.grad(loss, {"t": table})["t"]
    assert np.array_equal(g, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_gather_rejects_out_of_range():
    with pytest.raises(ValueError):
        gather(Tensor(np.zeros((3, 2))), np.array([3]))


# -- finite-difference checks on every differentiable primitive -----------------


def _fd(fn, shapes, seed=0, step=1e-5):
    rng = Rng(seed)
    params = {f"p{i}": Tensor(rng.normal(s)) for i, s in enumerate(shapes)}
    return finite_diff_check(fn, params, step=step)


@pytest.mark.parametrize(
    "name,fn,shapes",
    [
        ("matmul", lambda p: tsum(mul(matmul(p["p0"], p["p1"]), Tensor(Rng(9).normal((3, 4))))), [(3, 5), (5, 4)]),
        ("stacked_matmul", lambda p: tsum(mul(matmul(p["p0"], p["p1"]), Tensor(Rng(9).normal((2, 3, 4))))), [(2, 3, 5), (2, 5, 4)]),
        ("add_bcast", lambda p: tsum(mul(add(p["p0"], p["p1"]), add(p["p0"], p["p1"]))), [(4, 3), (3,)]),
        ("mul", lambda p: tsum(mul(mul(p["p0"], p["p1"]), p["p0"])), [(4, 3), (4, 3)]),
        ("scale", lambda p: tsum(scale(mul(p["p0"], p["p0"]), -2.5)), [(5,)]),
        ("softmax", lambda p: tsum(mul(softmax(p["p0"]), Tensor(Rng(9).normal((3, 6))))), [(3, 6)]),
        ("layer_norm", lambda p: tsum(mul(layer_norm(p["p0"]), Tensor(Rng(9).normal((3, 6))))), [(3, 6)]),
        ("gelu", lambda p: tsum(mul(gelu(p["p0"]), Tensor(Rng(9).normal((4, 4))))), [(4, 4)]),
        ("reshape_transpose", lambda p: tsum(mul(transpose(reshape(p["p0"], (2, 6)), (1, 0)), Tensor(Rng(9).normal((6, 2))))), [(3, 4)]),
        ("gather", lambda p: tsum(mul(gather(p["p0"], np.array([0, 1, 0, 2])), Tensor(Rng(9).normal((4, 3))))), [(3, 3)]),
        ("mean", lambda p: tmean(mul(p["p0"], p["p0"])), [(3, 5)]),
    ],
)
def test_primitive_finite_diff(name, fn, shapes):
    assert _fd(fn, shapes) < 1e-4


def test_rope_rotate_finite_diff():
    pos = np.arange(4.0)
    cos = np.cos(np.outer(pos, [1.0, 0.1, 0.0]))
    sin = np.sin(np.outer(pos, [1.0, 0.1, 0.0]))
    w = Rng(9).normal((2, 4, 6))

    def fn(p):
        return tsum(mul(rope_rotate(p["p0"], cos, sin), Tensor(w)))

    assert _fd(fn, [(2, 4, 6)]) < 1e-4


def test_softmax_attention_block_finite_diff():
    # q/k/v projections + softmax attention, the core of the denoiser
    x = Rng(5).normal((4, 6))

    def fn(p):
        q = matmul(Tensor(x), p["p0"])
        k = matmul(Tensor(x), p["p1"])
        v = matmul(Tensor(x), p["p2"])
        att = softmax(scale(matmul(q, transpose(k, (1, 0))), 1.0 / np.sqrt(6.0)))
        return tmean(mul(matmul(att, v), matmul(att, v)))

    assert _fd(fn, [(6, 6), (6, 6), (6, 6)], seed=13) < 1e-4


def test_finite_diff_quadratic_is_tight():
    def fn(p):
        return tsum(mul(p["p0"], p["p0"]))

    assert _fd(fn, [(6,)], seed=4) < 1e-9


def test_finite_diff_constant_function_is_zero():
    def fn(p):
        return tsum(mul(p["p0"], Tensor(np.zeros(4))))

    assert _fd(fn, [(4,)], seed=4) == 0.0


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda p: tsum(p["p0"]), {"p0": Tensor([1.0])}, step=0.0)


def test_finite_diff_rejects_nonfinite_loss():
    def fn(p):
        return Tensor(np.asarray(np.inf))

    with pytest.raises(ArithmeticError):
        finite_diff_check(fn, {"p0": Tensor([1.0])})


# -- rope algebra ---------------------------------------------------------------


def test_rope_zero_angle_is_identity():
    x = Rng(0).normal((3, 4))
    cos, sin = np.ones((3, 2)), np.zeros((3, 2))
    assert np.array_equal(rope_rotate(Tensor(x), cos, sin).data, x)


def test_rope_preserves_norm():
    rng = Rng(6)
    x = rng.normal((5, 8))
    ang = rng.normal((5, 4))
    y = rope_rotate(Tensor(x), np.cos(ang), np.sin(ang)).data
    assert np.max(np.abs(np.linalg.norm(y, axis=-1) - np.linalg.norm(x, axis=-1))) < 1e-12


# -- determinism ----------------------------------------------------------------


def test_forward_backward_bit_identical_across_runs():
    def run():
        rng = Rng(42)
        x = Tensor(rng.normal((8, 8)))
        with Tape() as tape:
            w = tape.leaf(Tensor(rng.normal((8, 8))))
            h = gelu(matmul(x, w))
            loss = tmean(mul(softmax(h), layer_norm(h)))
        return loss.item(), tape.grad(loss, {"w": w})["w"]

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


def test_tape_records_operation_ids():
    with Tape() as tape:
        a = tape.leaf(Tensor([1.0]))
        b = mul(a, a)
        tsum(b)
    ops = tape.operations()
    assert [op for _, op, _ in ops] == ["leaf", "mul", "sum"]
    assert ops[1][2] == (0, 0)
    assert ops[2][2] == (1,)


def test_tapes_do_not_nest():
    with Tape():
        with pytest.raises(RuntimeError):
            with Tape():
                pass
