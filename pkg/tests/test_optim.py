import numpy as np

from kens.optim import SparseAdam


def dense_adam(table, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(table)
    v = np.zeros_like(table)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        table = table - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return table


def test_full_rows_match_dense_adam():
    rng = np.random.default_rng(0)
    table = rng.normal(size=(4, 3))
    grads = [rng.normal(size=(4, 3)) for _ in range(5)]
    expected = dense_adam(table.copy(), grads, lr=0.01)
    opt = SparseAdam(table.shape, lr=0.01)
    rows = np.arange(4)
    for g in grads:
        opt.step(table, rows, g)
    assert np.allclose(table, expected, atol=1e-12)


def test_untouched_rows_stay_put():
    table = np.ones((5, 2))
    opt = SparseAdam(table.shape, lr=0.1)
    opt.step(table, np.array([1, 3]), np.ones((2, 2)))
    assert np.array_equal(table[[0, 2, 4]], np.ones((3, 2)))
    assert np.allclose(table[[1, 3]], 1 - 0.1, atol=1e-6)
    assert not opt.m[[0, 2, 4]].any()


def test_first_step_moves_by_learning_rate():
    table = np.zeros((1, 3))
    SparseAdam(table.shape, lr=0.05).step(table, np.array([0]), np.array([[2.0, -3.0, 0.5]]))
    assert np.allclose(table, [[-0.05, 0.05, -0.05]], atol=1e-8)
