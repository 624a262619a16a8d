import numpy as np


class SparseAdam:
    """Adam over the rows of one embedding table.

    Only rows that received a gradient are updated (moments of untouched rows
    are left as they are). The step counter is shared by the whole table.
    """

    def __init__(self, shape, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, table, rows, grad):
        self.t += 1
        m = self.beta1 * self.m[rows] + (1.0 - self.beta1) * grad
        v = self.beta2 * self.v[rows] + (1.0 - self.beta2) * (grad * grad)
        self.m[rows] = m
        self.v[rows] = v
        m_hat = m / (1.0 - self.beta1 ** self.t)
        v_hat = v / (1.0 - self.beta2 ** self.t)
        table[rows] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
