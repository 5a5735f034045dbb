"""Dense-tensor forward ops and their exact analytic backward passes.

Everything operates on plain numpy arrays. Forward functions return the
output (plus a cache where the backward needs intermediates); backward
functions take the upstream gradient and return gradients matching the
shapes of the differentiated inputs.
"""

import numpy as np


def _as_float(x):
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    return x


# ---------------------------------------------------------------------------
# convolution


def _im2col(x, kh, kw, stride, padding):
    """Patches as [C*kh*kw, N*H'*W'], filled kernel-position-major so the
    accumulation order is fixed."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = x[:, :, i:i + stride * oh:stride,
                              j:j + stride * ow:stride].transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * oh * ow), oh, ow


def conv2d(x, weight, bias, stride=1, padding=0, groups=1, return_cols=False):
    """Cross-correlation of x [N,C_in,H,W] with weight [C_out,C_in/groups,kH,kW].

    Output spatial extents follow floor((H + 2*padding - kH)/stride) + 1.
    With return_cols the per-group im2col buffers are returned alongside the
    output for reuse in conv2d_backward.
    """
    x = _as_float(x)
    weight = _as_float(weight)
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if cin_g * groups != cin or cout % groups:
        raise ValueError(
            f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape} "
            f"with groups={groups}"
        )
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(
            f"kernel {weight.shape} larger than padded input {x.shape} "
            f"(padding={padding})"
        )
    cog = cout // groups
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.empty((n, cout, oh, ow), dtype=np.result_type(x, weight))
    cols_list = []
    for g in range(groups):
        cols, oh, ow = _im2col(x[:, g * cin_g:(g + 1) * cin_g],
                               kh, kw, stride, padding)
        cols_list.append(cols)
        kmat = weight[g * cog:(g + 1) * cog].reshape(cog, -1)
        res = (kmat @ cols).reshape(cog, n, oh, ow)  # [cog, N*H'*W']
        out[:, g * cog:(g + 1) * cog] = res.transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + np.asarray(bias)[None, :, None, None]
    if return_cols:
        return out, cols_list
    return out


def conv2d_backward(x, weight, grad_out, stride=1, padding=0, groups=1,
                    cols_cache=None):
    """Gradients of conv2d w.r.t. (input, weight, bias).

    cols_cache lets a caller reuse the per-group im2col buffers from the
    forward pass; results are identical either way.
    """
    x = _as_float(x)
    weight = _as_float(weight)
    grad_out = _as_float(grad_out)
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if grad_out.shape != (n, cout, oh, ow):
        raise ValueError(
            f"upstream gradient shape {grad_out.shape} does not match forward "
            f"output {(n, cout, oh, ow)}"
        )
    grad_bias = grad_out.sum(axis=(0, 2, 3))

    cog = cout // groups
    grad_w = np.empty_like(weight)
    gx_pad = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    if cols_cache is None:
        cols_cache = [
            _im2col(x[:, g * cin_g:(g + 1) * cin_g], kh, kw, stride, padding)[0]
            for g in range(groups)]
    for g in range(groups):
        cols = cols_cache[g]
        gmat = np.ascontiguousarray(
            grad_out[:, g * cog:(g + 1) * cog].transpose(1, 0, 2, 3)
        ).reshape(cog, n * oh * ow)
        grad_w[g * cog:(g + 1) * cog] = (
            gmat @ cols.T).reshape(cog, cin_g, kh, kw)
        kmat = weight[g * cog:(g + 1) * cog].reshape(cog, -1)
        gcols = (kmat.T @ gmat).reshape(cin_g, kh, kw, n, oh, ow)
        for i in range(kh):
            for j in range(kw):
                gx_pad[:, g * cin_g:(g + 1) * cin_g,
                       i:i + stride * oh:stride,
                       j:j + stride * ow:stride] += (
                           gcols[:, i, j].transpose(1, 0, 2, 3))
    if padding:
        grad_x = gx_pad[:, :, padding:-padding, padding:-padding]
    else:
        grad_x = gx_pad
    return grad_x, grad_w, grad_bias


# ---------------------------------------------------------------------------
# elementwise / dense


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    return grad_out * (x > 0)


def linear(x, weight, bias):
    """x [N, in] @ weight [out, in].T + bias [out]."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"linear shape mismatch: input {x.shape} vs weight {weight.shape}"
        )
    return x @ weight.T + bias


def linear_backward(x, weight, grad_out):
    grad_x = grad_out @ weight
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def global_avg_pool(x):
    """[N,C,H,W] -> [N,C] mean over the spatial extents."""
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(x_shape, grad_out):
    n, c, h, w = x_shape
    g = np.broadcast_to(grad_out[:, :, None, None], (n, c, h, w))
    return g / (h * w)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of integer labels under probs [N,K]."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    n, k = probs.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k}): {labels}")
    picked = probs[np.arange(n), labels]
    return float(-np.log(np.clip(picked, 1e-300, None)).mean())


def softmax_cross_entropy_backward(probs, labels):
    """Gradient of mean cross_entropy(softmax(logits)) w.r.t. logits."""
    n, k = probs.shape
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    return g / n


def dropout(x, rate, seed, train=True):
    """Inverted dropout; identity when train is False. Returns (out, mask)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    rng = np.random.default_rng(seed)
    mask = (rng.random(x.shape) >= rate).astype(x.dtype)
    return x * mask / (1.0 - rate), mask


def dropout_backward(mask, rate, grad_out):
    if mask is None:
        return grad_out
    return grad_out * mask / (1.0 - rate)


def affine_norm(x, scale, shift, eps=1e-5):
    """Per-channel standardization over (batch, H, W) plus learnable affine.

    Always uses the statistics of the batch at hand; there is no running
    state, so evaluation batches are standardized by their own statistics.
    Returns (out, cache).
    """
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    out = scale[None, :, None, None] * xhat + shift[None, :, None, None]
    return out, (xhat, inv_std, scale)


def affine_norm_backward(cache, grad_out):
    xhat, inv_std, scale = cache
    n, _, h, w = grad_out.shape
    m = n * h * w
    grad_scale = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_shift = grad_out.sum(axis=(0, 2, 3))
    gxhat = grad_out * scale[None, :, None, None]
    # standard batch-statistics backward (mean and var depend on x)
    grad_x = (inv_std / m) * (
        m * gxhat
        - gxhat.sum(axis=(0, 2, 3), keepdims=True)
        - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    )
    return grad_x, grad_scale, grad_shift


# ---------------------------------------------------------------------------
# optimizer


def sgd_step(params, grads, velocities, lr, momentum=0.9, weight_decay=5e-4):
    """In-place SGD with momentum and decoupled-from-nothing weight decay.

    v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v.
    params/grads/velocities are dicts keyed by parameter name.
    """
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ValueError(
                f"sgd_step shape mismatch for {name}: param {p.shape} vs "
                f"grad {g.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        v = velocities[name]
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v
    return params
