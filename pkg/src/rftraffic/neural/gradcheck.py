"""Central finite-difference gradient checking for the models."""
import numpy as np

from rftraffic.neural.model import loss_and_grads


def relative_error(a, b, floor=1e-6):
    """|a - b| / (|a| + |b|), with the denominator floored.

    Central differences at eps=1e-5 carry about 1e-11 of round-off, so entries
    much smaller than ``floor`` are effectively compared in absolute terms.
    """
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


def numeric_gradients(arch, params, x, y, train=False, dropout_seed=None, eps=1e-5):
    """Central differences of the mean batch loss for every parameter entry."""
    def f():
        return loss_and_grads(arch, params, x, y, train, dropout_seed)[0]

    numeric = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = f()
            flat[i] = old - eps
            down = f()
            flat[i] = old
            g.flat[i] = (up - down) / (2 * eps)
        numeric[name] = g
    return numeric


def check_gradients(arch, params, x, y, train=False, dropout_seed=None, eps=1e-5):
    """Max relative error between analytic and numeric gradients, per parameter group."""
    _, analytic, _ = loss_and_grads(arch, params, x, y, train, dropout_seed)
    numeric = numeric_gradients(arch, params, x, y, train, dropout_seed, eps)
    return {k: float(relative_error(analytic[k], numeric[k]).max()) for k in params}
