"""Pure numpy implementation of the MLP training kernels.

Used when the compiled extension is unavailable or when
``FAIRFED_BACKEND=python``.  The compiled module exposes the same two
functions with the same signatures.
"""
import numpy as np


def _unpack(values, in_dim, hidden, classes):
    i = 0
    W1 = values[i:i + in_dim * hidden].reshape(in_dim, hidden)
    i += in_dim * hidden
    b1 = values[i:i + hidden]
    i += hidden
    W2 = values[i:i + hidden * classes].reshape(hidden, classes)
    i += hidden * classes
    b2 = values[i:i + classes]
    return W1, b1, W2, b2


def mlp_loss_grad(values, X, y, in_dim, hidden, classes, grad):
    """Mean softmax cross-entropy of the MLP on ``(X, y)``.

    Writes the gradient into ``grad`` (same length as ``values``) and
    returns the loss.
    """
    W1, b1, W2, b2 = _unpack(values, in_dim, hidden, classes)
    gW1, gb1, gW2, gb2 = _unpack(grad, in_dim, hidden, classes)
    n = X.shape[0]
    rows = np.arange(n)

    z1 = X @ W1
    z1 += b1
    a = np.maximum(z1, 0.0)
    logits = a @ W2
    logits += b2

    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[rows, y]))

    dlogits = np.exp(shifted - lse[:, None])
    dlogits[rows, y] -= 1.0
    dlogits /= n

    np.matmul(a.T, dlogits, out=gW2)
    gb2[:] = dlogits.sum(axis=0)
    da = dlogits @ W2.T
    da[z1 <= 0.0] = 0.0
    np.matmul(X.T, da, out=gW1)
    gb1[:] = da.sum(axis=0)
    return loss


def sgd_epoch(values, X, y, order, in_dim, hidden, classes, lr, batch_size):
    """One pass of minibatch SGD over ``order``, updating ``values`` in place."""
    grad = np.empty_like(values)
    n = order.shape[0]
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        mlp_loss_grad(values, X[idx], y[idx], in_dim, hidden, classes, grad)
        values -= lr * grad
