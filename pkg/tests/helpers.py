"""Independent oracles shared by unit and acceptance tests."""
import numpy as np

from hwnas.nn import engine
from hwnas.nn.layers import BatchNorm, Linear
from hwnas.search_space import OperatorKind


def generic_params(spec, seed, rng):
    """Init weights with random BN scale/shift and head bias.

    At the default init a BN shift of 0 after a conv on an all-zero tensor
    puts a ReLU exactly on its kink, where no finite difference agrees with
    any subgradient; random shifts move the check point off the kinks.
    """
    theta = engine.init_params(spec, seed)
    for layer, off in zip(spec.layers, spec.offsets):
        op = layer.op
        if isinstance(op, BatchNorm):
            theta[off : off + op.c] = rng.uniform(0.5, 1.5, op.c)
            theta[off + op.c : off + 2 * op.c] = rng.normal(0.0, 0.5, op.c)
        elif isinstance(op, Linear):
            n = op.in_features * op.out_features
            theta[off + n : off + n + op.out_features] = rng.normal(0.0, 0.1, op.out_features)
    return theta


def central_difference(spec, theta, x, h=1e-5):
    """Central differences of sum(logits), shrinking h only where a ReLU kink is crossed.

    Returns (gradient, number of parameters that needed a smaller step).
    """
    _, p0 = engine.forward(spec, theta, x)
    out = np.empty(theta.size)
    shrunk = 0
    for j in range(theta.size):
        step = h
        while True:
            tp = theta.copy()
            tm = theta.copy()
            tp[j] += step
            tm[j] -= step
            fp, pp = engine.forward(spec, tp, x)
            fm, pm = engine.forward(spec, tm, x)
            if (np.array_equal(pp, p0) and np.array_equal(pm, p0)) or step < 1e-9:
                break
            step /= 10.0
        shrunk += step < h
        out[j] = (fp.sum() - fm.sum()) / (2.0 * step)
    return out, shrunk


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)


def naive_conv2d(x, w, stride, pad):
    """Direct nested-loop convolution (cross-correlation), one sample."""
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    y = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
                y[oc, i, j] = np.sum(patch * w[oc])
    return y


def pairwise_tau(a, b):
    a, b = [float(v) for v in a], [float(v) for v in b]
    n = len(a)
    s = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = (a[i] > a[j]) - (a[i] < a[j])
            db = (b[i] > b[j]) - (b[i] < b[j])
            s += da * db
    return s / (n * (n - 1) / 2)


def independent_flops(skeleton, g):
    """Re-derive FLOPs from the skeleton description alone."""
    stages = skeleton.stages()
    c0, h0, w0 = skeleton.input_shape
    cs = skeleton.stem_channels
    total = 2 * 9 * c0 * cs * h0 * w0 + 2 * cs * h0 * w0
    for s, (c, h, w) in enumerate(stages):
        if s:
            cp, hp, wp = stages[s - 1]
            total += 2 * 9 * cp * c * h * w + 2 * c * h * w  # conv_a + bn
            total += 2 * 9 * c * c * h * w + 2 * c * h * w  # conv_b + bn
            total += 4 * cp * h * w  # 2x2 avg pool
            total += 2 * cp * c * h * w  # 1x1 shortcut conv
            total += c * h * w  # residual add
        per_op = {
            OperatorKind.ZERO: 0,
            OperatorKind.SKIP_CONNECT: 0,
            OperatorKind.CONV_1X1: 2 * c * c * h * w + 2 * c * h * w,
            OperatorKind.CONV_3X3: 2 * 9 * c * c * h * w + 2 * c * h * w,
            OperatorKind.AVG_POOL_3X3: 9 * c * h * w,
        }
        total += skeleton.cells_per_stack * sum(per_op[op] for op in g.ops)
    c, h, w = stages[-1]
    total += 2 * c * h * w + c * h * w + 2 * c * skeleton.num_classes
    return total


# (criterion, title, passed, detail) rows filled by the acceptance suite
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def record(criterion: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((criterion, title, bool(passed), detail))
    print(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {title} ({detail})")
    assert passed, f"criterion {criterion} failed: {detail}"
