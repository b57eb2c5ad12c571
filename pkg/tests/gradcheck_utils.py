"""Finite-difference battery shared by the unit and acceptance suites.

Each case builds one random instance: a list of (f, x0) pairs where f is a
deterministic scalar function of one tensor, checked against central
differences by ndiff.grad_check.  Kinked primitives (relu, huber) sample
inputs away from their kinks.
"""

import zlib

import numpy as np

from jamlab import ndiff as nd


def _nudge(x, points, margin=1e-3):
    """Push entries of x away from the given kink points."""
    x = np.asarray(x, dtype=float)
    for p in points:
        close = np.abs(x - p) < margin
        x = np.where(close, p + margin * np.sign(x - p + 0.5), x)
    return x


def _case_add(rng):
    a0 = rng.normal(size=(3, 4))
    b0 = rng.normal(size=(4,))
    bc = nd.tensor(rng.normal(size=(3, 4)))
    return [
        (lambda a: nd.sum_(nd.add(a, bc)), a0),
        (lambda b: nd.sum_(nd.add(bc, b)), b0),
    ]


def _case_sub(rng):
    a0 = rng.normal(size=(3, 4))
    b0 = rng.normal(size=(4,))
    c = nd.tensor(rng.normal(size=(3, 4)))
    return [
        (lambda a: nd.sum_(nd.mul(nd.sub(a, c), c)), a0),
        (lambda b: nd.sum_(nd.mul(nd.sub(c, b), c)), b0),
    ]


def _case_mul(rng):
    a0 = rng.normal(size=(3, 4))
    b0 = rng.normal(size=(4,))
    c = nd.tensor(rng.normal(size=(3, 4)))
    return [
        (lambda a: nd.sum_(nd.mul(a, c)), a0),
        (lambda b: nd.sum_(nd.mul(c, b)), b0),
    ]


def _case_neg(rng):
    x0 = rng.normal(size=(5,))
    c = nd.tensor(rng.normal(size=(5,)))
    return [(lambda x: nd.sum_(nd.mul(nd.neg(x), c)), x0)]


def _case_matmul(rng):
    A = nd.tensor(rng.normal(size=(3, 4)))
    B = nd.tensor(rng.normal(size=(4, 2)))
    v = nd.tensor(rng.normal(size=(4,)))
    return [
        (lambda a: nd.sum_(nd.matmul(a, B)), rng.normal(size=(3, 4))),
        (lambda b: nd.sum_(nd.matmul(A, b)), rng.normal(size=(4, 2))),
        (lambda a: nd.sum_(nd.matmul(a, B)), rng.normal(size=(4,))),
        (lambda b: nd.sum_(nd.matmul(v, b)), rng.normal(size=(4, 2))),
        (lambda a: nd.sum_(nd.matmul(A, a)), rng.normal(size=(4,))),
        (lambda b: nd.matmul(v, b), rng.normal(size=(4,))),
    ]


def _case_affine(rng):
    x = nd.tensor(rng.normal(size=(5, 3)))
    w = nd.tensor(rng.normal(size=(3, 2)))
    b = nd.tensor(rng.normal(size=(2,)))
    return [
        (lambda t: nd.sum_(nd.affine(t, w, b)), rng.normal(size=(5, 3))),
        (lambda t: nd.sum_(nd.affine(x, t, b)), rng.normal(size=(3, 2))),
        (lambda t: nd.sum_(nd.affine(x, w, t)), rng.normal(size=(2,))),
        (lambda t: nd.sum_(nd.affine(t, w, b)), rng.normal(size=(3,))),
    ]


def _case_sigmoid(rng):
    return [(lambda x: nd.sum_(nd.sigmoid(x)), rng.normal(size=(3, 4)))]


def _case_tanh(rng):
    return [(lambda x: nd.sum_(nd.tanh(x)), rng.normal(size=(3, 4)))]


def _case_relu(rng):
    x0 = _nudge(rng.normal(size=(4, 4)), [0.0])
    c = nd.tensor(rng.normal(size=(4, 4)))
    return [(lambda x: nd.sum_(nd.mul(nd.relu(x), c)), x0)]


def _case_gelu(rng):
    return [(lambda x: nd.sum_(nd.gelu(x)), rng.normal(size=(3, 4)))]


def _case_huber(rng):
    beta = 0.5
    x0 = _nudge(rng.normal(size=(4, 4)), [-beta, beta], margin=5e-3)
    return [(lambda x: nd.sum_(nd.huber(x, beta)), x0)]


def _case_conv1d(rng):
    k1 = nd.tensor(rng.normal(size=(3,)))
    x1 = nd.tensor(rng.normal(size=(9,)))
    x2 = nd.tensor(rng.normal(size=(2, 3, 8)))
    k2 = nd.tensor(rng.normal(size=(2, 3, 3)))
    k3 = nd.tensor(rng.normal(size=(2, 3, 3)))
    return [
        (lambda x: nd.sum_(nd.conv1d(x, k1)), rng.normal(size=(9,))),
        (lambda k: nd.sum_(nd.conv1d(x1, k)), rng.normal(size=(3,))),
        (lambda x: nd.sum_(nd.conv1d(x, k2)), rng.normal(size=(2, 3, 8))),
        (lambda k: nd.sum_(nd.conv1d(x2, k)), rng.normal(size=(2, 3, 3))),
        (lambda x: nd.sum_(nd.conv1d(x, k2, stride=2)), rng.normal(size=(2, 3, 9))),
        (lambda x: nd.sum_(nd.conv1d(x, k3)), rng.normal(size=(3, 7))),
    ]


def _case_batchnorm(rng):
    gamma = nd.tensor(rng.normal(size=(3,)) + 1.5)
    beta = nd.tensor(rng.normal(size=(3,)))
    rm = rng.normal(size=(3,))
    rv = rng.uniform(0.5, 2.0, size=(3,))

    def bn_train(x):
        m = nd.tensor(rm.copy())
        v = nd.tensor(rv.copy())
        return nd.sum_(nd.batchnorm1d(x, gamma, beta, m, v, training=True))

    def bn_eval(x):
        m = nd.tensor(rm.copy())
        v = nd.tensor(rv.copy())
        return nd.sum_(nd.batchnorm1d(x, gamma, beta, m, v, training=False))

    x3 = nd.tensor(rng.normal(size=(4, 3, 5)))

    def bn_gamma(t):
        m = nd.tensor(rm.copy())
        v = nd.tensor(rv.copy())
        return nd.sum_(nd.mul(nd.batchnorm1d(x3, t, beta, m, v, training=True), x3))

    def bn_beta(t):
        m = nd.tensor(rm.copy())
        v = nd.tensor(rv.copy())
        return nd.sum_(nd.mul(nd.batchnorm1d(x3, gamma, t, m, v, training=False), x3))

    return [
        (bn_train, rng.normal(size=(6, 3))),
        (bn_eval, rng.normal(size=(6, 3))),
        (bn_train, rng.normal(size=(4, 3, 5))),
        (bn_gamma, rng.normal(size=(3,))),
        (bn_beta, rng.normal(size=(3,))),
    ]


def _case_dropout(rng):
    seed = int(rng.integers(0, 2**32))

    def f(x):
        r = np.random.default_rng(seed)
        return nd.sum_(nd.dropout(x, 0.35, training=True, rng=r))

    return [(f, rng.normal(size=(4, 5)))]


def _case_sum(rng):
    c = nd.tensor(rng.normal(size=(3, 4)))
    c4 = nd.tensor(rng.normal(size=(4,)))
    return [
        (lambda x: nd.sum_(x), rng.normal(size=(3, 4))),
        (lambda x: nd.sum_(nd.mul(nd.sum_(x, axis=1, keepdims=True), c)), rng.normal(size=(3, 4))),
        (lambda x: nd.sum_(nd.mul(nd.sum_(x, axis=0), c4)), rng.normal(size=(3, 4))),
    ]


def _case_mean(rng):
    c = nd.tensor(rng.normal(size=(4,)))
    return [
        (lambda x: nd.mean_(x), rng.normal(size=(3, 4))),
        (lambda x: nd.sum_(nd.mul(nd.mean_(x, axis=0), c)), rng.normal(size=(3, 4))),
    ]


def _case_flatten(rng):
    c = nd.tensor(rng.normal(size=(24,)))
    c2 = nd.tensor(rng.normal(size=(2, 12)))
    c3 = nd.tensor(rng.normal(size=(4, 6)))
    return [
        (lambda x: nd.sum_(nd.mul(nd.flatten(x), c)), rng.normal(size=(2, 3, 4))),
        (lambda x: nd.sum_(nd.mul(nd.flatten(x, from_axis=1), c2)), rng.normal(size=(2, 3, 4))),
        (lambda x: nd.sum_(nd.mul(nd.reshape(x, (4, 6)), c3)), rng.normal(size=(2, 3, 4))),
    ]


def _case_concat(rng):
    a = nd.tensor(rng.normal(size=(2, 3)))
    c = nd.tensor(rng.normal(size=(5, 3)))
    return [
        (lambda x: nd.sum_(nd.mul(nd.concat([x, a], axis=0), c)), rng.normal(size=(3, 3))),
        (lambda x: nd.sum_(nd.mul(nd.concat([a, x], axis=0), c)), rng.normal(size=(3, 3))),
    ]


def _case_slice(rng):
    c = nd.tensor(rng.normal(size=(3, 2)))
    idx = np.array([0, 2, 2, 4])
    c2 = nd.tensor(rng.normal(size=(4, 4)))
    return [
        (lambda x: nd.sum_(nd.mul(nd.slice_(x, (slice(1, 4), slice(None, None, 2))), c)), rng.normal(size=(5, 4))),
        (lambda x: nd.sum_(nd.mul(nd.slice_(x, idx), c2)), rng.normal(size=(5, 4))),
    ]


def _case_composite(rng):
    W = nd.tensor(rng.normal(size=(4, 4)))
    b = nd.tensor(rng.normal(size=(4,)))
    V = nd.tensor(rng.normal(size=(4, 4)))

    def f(x):
        h = nd.sigmoid(nd.affine(x, W, b))
        z = nd.tanh(nd.matmul(x, V))
        return nd.mean_(nd.mul(h, z))

    return [(f, rng.normal(size=(5, 4)))]


CASES = [
    ("add", _case_add),
    ("sub", _case_sub),
    ("mul", _case_mul),
    ("neg", _case_neg),
    ("matmul", _case_matmul),
    ("affine", _case_affine),
    ("sigmoid", _case_sigmoid),
    ("tanh", _case_tanh),
    ("relu", _case_relu),
    ("gelu", _case_gelu),
    ("huber", _case_huber),
    ("conv1d", _case_conv1d),
    ("batchnorm1d", _case_batchnorm),
    ("dropout", _case_dropout),
    ("sum", _case_sum),
    ("mean", _case_mean),
    ("flatten", _case_flatten),
    ("concat", _case_concat),
    ("slice", _case_slice),
    ("composite", _case_composite),
]


def run_case(name, builder, n_instances, eps=1e-5, seed=20240):
    """Return the max relative error over n_instances random instances."""
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    worst = 0.0
    for _ in range(n_instances):
        for f, x0 in builder(rng):
            worst = max(worst, nd.grad_check(f, nd.tensor(x0), eps=eps))
    return worst


def model_gradcheck(build_loss, params, rng, coords_per_tensor=3, eps=1e-5,
                    tol=1e-4):
    """Finite-difference check of a full forward+loss against backward.

    build_loss(params) must be deterministic.  For every trainable tensor
    a few random coordinates are perturbed in place and compared with the
    analytic gradient; returns the max relative error over all checks.

    Coordinates that fail at the primary step size are retried at smaller
    steps: a relu/dropout kink sitting inside the central-difference
    window produces an error that collapses as the window shrinks,
    whereas a wrong pullback stays wrong at every step size.
    """
    for t in params.values():
        t.zero_grad()
    nd.backward(build_loss(params))

    def central(flat, i, step):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(build_loss(params).data)
        flat[i] = orig - step
        lo = float(build_loss(params).data)
        flat[i] = orig
        return (hi - lo) / (2.0 * step)

    worst = 0.0
    for name, t in params.items():
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.ravel()
        aflat = analytic.ravel()
        n_coords = min(coords_per_tensor, flat.size)
        coords = rng.choice(flat.size, size=n_coords, replace=False)
        for i in coords:
            err = None
            for step in (eps, eps / 16.0, eps / 64.0):
                numeric = central(flat, i, step)
                err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
                if err < tol:
                    break
            worst = max(worst, err)
    return worst
