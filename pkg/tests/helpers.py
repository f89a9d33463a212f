"""Central-difference gradient checking shared by the unit and acceptance tests."""

import numpy as np

from atls.network import (
    Activation,
    AttentionBlock,
    DigitalLinear,
    SoftmaxHead,
    cross_entropy,
)

EPS = 1e-5


def rel_error(a, b, floor=1e-8):
    """Symmetric relative error; ``floor`` keeps identically-zero gradients (e.g. a key
    bias under softmax shift invariance) from turning rounding noise into error 1."""
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x, eps=EPS):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def check_layer(layer, x, rng):
    """Max relative error of input and parameter gradients of ``sum(R * layer(x))``.

    Parameter gradients are compared as one concatenated vector per layer, so
    entries whose true gradient is exactly zero are judged on the layer's scale.
    """
    out = layer.forward(x)
    R = rng.standard_normal(out.shape)
    loss = lambda: float(np.sum(R * layer.forward(x)))  # noqa: E731
    layer.forward(x)
    gx = layer.backward(R)
    errs = [rel_error(gx, numeric_grad(loss, x))]
    analytic, numeric = [], []
    for lin in layer.linears():
        # analytic grads were stored by the single backward call above
        analytic.append(lin.grad_w.ravel().copy())
        if lin.bias is not None:
            analytic.append(lin.grad_b.ravel().copy())
    for lin in layer.linears():
        numeric.append(numeric_grad(loss, lin.weight).ravel())
        if lin.bias is not None:
            numeric.append(numeric_grad(loss, lin.bias).ravel())
    if analytic:
        errs.append(rel_error(np.concatenate(analytic), np.concatenate(numeric)))
    return max(errs)


def check_head(head, x, labels):
    loss = lambda: cross_entropy(head.forward(x), labels)[0]  # noqa: E731
    _, g = cross_entropy(head.forward(x), labels)
    gx = head.backward(g)
    lin = head.linear
    gw, gb = lin.grad_w.copy(), lin.grad_b.copy()
    return max(
        rel_error(gx, numeric_grad(loss, x)),
        rel_error(gw, numeric_grad(loss, lin.weight)),
        rel_error(gb, numeric_grad(loss, lin.bias)),
    )


def _away_from_kinks(x, margin=1e-3):
    return x + np.sign(x) * margin * (np.abs(x) < margin)


def random_instance(kind, rng):
    """``(error)`` for one random instance of a layer kind."""
    if kind == "linear":
        n_in, n_out, b = rng.integers(1, 7, size=3)
        layer = DigitalLinear.init(n_in, n_out, rng)
        return check_layer(layer, rng.standard_normal((b, n_in)), rng)
    if kind in Activation.KINDS:
        x = _away_from_kinks(rng.standard_normal((3, 5)))
        return check_layer(Activation(kind), x, rng)
    if kind == "attention":
        heads = int(rng.integers(1, 3))
        dim = heads * int(rng.integers(1, 4))
        block = AttentionBlock.init(dim, heads, int(rng.integers(2, 6)), rng)
        x = rng.standard_normal((2, int(rng.integers(1, 4)), dim))
        return check_layer(block, x, rng)
    if kind == "head":
        n_in, k = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        head = SoftmaxHead(DigitalLinear.init(n_in, k, rng))
        b = int(rng.integers(1, 5))
        return check_head(head, rng.standard_normal((b, n_in)), rng.integers(0, k, size=b))
    raise ValueError(kind)


LAYER_KINDS = ("linear", "relu", "tanh", "sigmoid", "attention", "head")
