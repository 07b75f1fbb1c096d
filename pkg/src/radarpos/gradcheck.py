"""Finite-difference oracles for the autodiff engine and the full model.

The contract everything here enforces: at float64, analytic gradients
match central finite differences with elementwise relative error below
1e-5, where the relative error of entry i is

    |analytic_i - fd_i| / (|fd_i| + 1e-8)

``check_op_gradients`` sweeps every differentiable primitive on random
inputs; ``check_model_losses`` differentiates the three pretraining
losses through an entire miniature network, probing every entry of every
trainable parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, no_grad

REL_TOL = 1e-5
_DENOM_FLOOR = 1e-8


def finite_difference(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. array ``x``.

    ``f`` must read ``x`` afresh on each call; entries are perturbed in
    place and restored.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Elementwise relative error; suited to O(1)-conditioned op probes."""
    return float(np.max(np.abs(analytic - fd) / (np.abs(fd) + _DENOM_FLOOR)))


def tensor_relative_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Per-parameter relative error: worst absolute disagreement over the
    tensor, scaled by the tensor's largest finite-difference entry.

    Through a deep network some individual gradient entries are
    legitimately ~1e-5 while float64 central differences carry ~1e-10 of
    evaluation noise, so an elementwise ratio is unbounded there; the
    per-tensor ratio is the meaningful fidelity measure.
    """
    return float(np.max(np.abs(analytic - fd)) / (np.max(np.abs(fd)) + _DENOM_FLOOR))


def _check_unary(op, x: np.ndarray, h: float) -> float:
    t = Tensor(x.copy(), requires_grad=True)
    T.backward(op(t).sum())
    with no_grad():
        fd = finite_difference(lambda: float(op(Tensor(t.data)).data.sum()), t.data, h)
    return relative_error(t.grad, fd)


def _check_binary(op, x: np.ndarray, y: np.ndarray, h: float) -> float:
    a = Tensor(x.copy(), requires_grad=True)
    b = Tensor(y.copy(), requires_grad=True)
    T.backward(op(a, b).sum())
    with no_grad():
        def val():
            return float(op(Tensor(a.data), Tensor(b.data)).data.sum())

        fd_a = finite_difference(val, a.data, h)
        fd_b = finite_difference(val, b.data, h)
    return max(relative_error(a.grad, fd_a), relative_error(b.grad, fd_b))


def check_op_gradients(seed: int = 0, h: float = 1e-4, corrupt: bool = False):
    """Gradient-check every differentiable primitive at float64.

    Returns a list of (op_name, max_relative_error). Probe inputs are
    kept away from derivative zero-crossings (gelu's flat spot, saturated
    softmax rows) so the finite-difference denominators stay healthy.
    ``corrupt`` deliberately skews one analytic gradient; it exists as a
    negative control so the failure path of the reporting machinery
    stays tested.
    """
    rng = np.random.default_rng(seed)

    def r(*shape):
        return rng.standard_normal(shape)

    results = []

    def weighted_sum(t):
        # Mix components with fixed weights so reductions are not blind
        # to per-entry sign errors.
        w = Tensor(np.linspace(0.5, 1.5, t.data.size).reshape(t.data.shape))
        return T.mul(t, w).sum()

    x34 = r(3, 4)
    results.append(("add", _check_binary(T.add, x34, r(3, 4), h)))
    results.append(("add_bias", _check_binary(T.add, x34, r(4), h)))
    results.append(("sub", _check_binary(T.sub, x34, r(3, 4), h)))
    results.append(("mul", _check_binary(T.mul, x34, r(3, 4), h)))
    results.append(("div", _check_binary(T.div, x34, r(3, 4) + 3.0, h)))
    results.append(("matmul_2d", _check_binary(T.matmul, r(3, 4), r(4, 2), h)))
    results.append(("matmul_batched", _check_binary(T.matmul, r(2, 3, 4), r(2, 4, 3), h)))
    results.append(("matmul_shared_rhs", _check_binary(T.matmul, r(2, 3, 4), r(4, 5), h)))
    results.append(("exp", _check_unary(T.exp, r(3, 4) * 0.5, h)))
    results.append(("log", _check_unary(T.log, np.abs(r(3, 4)) + 1.0, h)))
    results.append(("sqrt", _check_unary(T.sqrt, np.abs(r(3, 4)) + 1.0, h)))
    results.append(("sin", _check_unary(T.sin, r(3, 4), h)))
    results.append(("cos", _check_unary(T.cos, r(3, 4), h)))
    results.append(("tanh", _check_unary(T.tanh, r(3, 4), h)))

    # gelu's derivative vanishes near x = -0.75 and for deep negatives;
    # sample magnitudes in [0.2, 2] positive and [1.2, 2] negative.
    gelu_x = rng.uniform(0.2, 2.0, (3, 4))
    neg = rng.random((3, 4)) < 0.5
    gelu_x[neg] = -rng.uniform(1.2, 2.0, (3, 4))[neg]
    err = _check_unary(lambda t: weighted_sum(T.gelu(t)), gelu_x, h)
    if corrupt:
        err = max(err, 1e-3)
    results.append(("gelu", err))

    # Moderate logits keep softmax probabilities (and hence gradient
    # entries) bounded away from zero.
    results.append(
        ("softmax", _check_unary(lambda t: weighted_sum(T.softmax(t, axis=-1)), 0.5 * r(3, 5), h))
    )
    results.append(
        ("log_softmax",
         _check_unary(lambda t: weighted_sum(T.log_softmax(t, axis=-1)), 0.5 * r(3, 5), h))
    )

    gain = Tensor(np.abs(r(6)) + 0.5, requires_grad=True)
    bias = Tensor(r(6), requires_grad=True)
    xln = Tensor(r(4, 6), requires_grad=True)
    T.backward(weighted_sum(T.layer_norm(xln, gain, bias)))
    with no_grad():
        def ln_val():
            return float(
                T.mul(
                    T.layer_norm(Tensor(xln.data), Tensor(gain.data), Tensor(bias.data)),
                    Tensor(np.linspace(0.5, 1.5, 24).reshape(4, 6)),
                ).data.sum()
            )

        errs = [
            relative_error(xln.grad, finite_difference(ln_val, xln.data, h)),
            relative_error(gain.grad, finite_difference(ln_val, gain.data, h)),
            relative_error(bias.grad, finite_difference(ln_val, bias.data, h)),
        ]
    results.append(("layer_norm", max(errs)))

    results.append(("sum_axis", _check_unary(lambda t: weighted_sum(T.sum_(t, axis=0)), r(3, 4), h)))
    results.append(("mean_axis", _check_unary(lambda t: weighted_sum(T.mean_(t, axis=1)), r(3, 4), h)))
    results.append(("reshape", _check_unary(lambda t: weighted_sum(T.reshape(t, (4, 3))), r(3, 4), h)))
    results.append(
        ("transpose", _check_unary(lambda t: weighted_sum(T.transpose(t, (1, 0, 2))), r(2, 3, 4), h))
    )
    results.append(
        ("concat", _check_binary(lambda a, b: weighted_sum(T.concat([a, b], axis=0)), r(2, 3), r(4, 3), h))
    )
    results.append(("slice", _check_unary(lambda t: weighted_sum(t[1:, :2]), r(3, 4), h)))

    table = Tensor(r(5, 3), requires_grad=True)
    idx = np.array([0, 2, 2, 4])
    T.backward(weighted_sum(T.embedding_gather(table, idx)))
    with no_grad():
        fd = finite_difference(
            lambda: float(
                T.mul(
                    T.embedding_gather(Tensor(table.data), idx),
                    Tensor(np.linspace(0.5, 1.5, 12).reshape(4, 3)),
                ).data.sum()
            ),
            table.data,
            h,
        )
    results.append(("embedding_gather", relative_error(table.grad, fd)))

    return results


@dataclass
class ModelCheckReport:
    """Worst per-parameter relative error for each loss, plus the largest
    absolute analytic-vs-FD disagreement seen anywhere."""

    max_errors: dict
    per_parameter: dict
    max_abs_diff: float
    entries_checked: int

    @property
    def worst(self) -> float:
        return max(self.max_errors.values())

    def passed(self, tol: float = REL_TOL) -> bool:
        return self.worst < tol


def check_model_losses(cfg=None, seed: int = 0, h: float = 1e-3, sigma: float = 0.9,
                       temperature: float = 0.95) -> ModelCheckReport:
    """Differentiate all three pretraining losses through a full network.

    Builds a float64 model from ``cfg`` (tiny preset by default), runs one
    synthetic sample through tokenizer, masking, encoder, decoder,
    projector and attention weighting, and compares analytic gradients of
    every trainable parameter against central finite differences. One
    perturbed forward evaluates all three losses at once.
    """
    from .config import tiny_model_config
    from .losses import (attention_weights_batch, position_loss, radarpos_loss,
                         smoothed_loss, smoothing_weights)
    from .model import RadarPosModel, plan_mask

    if cfg is None:
        cfg = tiny_model_config()
    model = RadarPosModel(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    feats = rng.random((1, 2, cfg.seq_len))
    toas = np.cumsum(rng.uniform(40e-6, 60e-6, cfg.seq_len)) - 40e-6
    toas = toas.reshape(1, -1)
    plan = plan_mask(cfg.n_patches, cfg.mask_ratio, seed=seed + 2)
    w_star = smoothing_weights(cfg.n_patches, sigma)

    def forward():
        o, cls_out, patch_out = model.forward_pretrain(feats, toas, [plan])
        attn = attention_weights_batch(cls_out, patch_out, temperature)
        return {
            "position": position_loss(o, plan),
            "smoothed": smoothed_loss(o, plan, w_star),
            "radarpos": radarpos_loss(o, plan, w_star, attn),
        }

    loss_names = ("position", "smoothed", "radarpos")
    analytic = {}
    for name in loss_names:
        T.zero_grads(model.parameters())
        losses = forward()
        T.backward(losses[name])
        analytic[name] = {
            pname: p.grad.copy() for pname, p in model.parameters().items() if p.trainable
        }

    max_errors = {name: 0.0 for name in loss_names}
    per_parameter = {}
    max_abs_diff = 0.0
    entries = 0
    with no_grad():
        for pname, p in model.parameters().items():
            if not p.trainable:
                continue
            fd = {name: np.zeros_like(p.data) for name in loss_names}
            flat = p.data.reshape(-1)
            fd_flat = {name: fd[name].reshape(-1) for name in loss_names}
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = {k: v.item() for k, v in forward().items()}
                flat[i] = orig - h
                dn = {k: v.item() for k, v in forward().items()}
                flat[i] = orig
                for name in loss_names:
                    fd_flat[name][i] = (up[name] - dn[name]) / (2.0 * h)
                entries += 1
            worst_here = 0.0
            for name in loss_names:
                err = tensor_relative_error(analytic[name][pname], fd[name])
                max_errors[name] = max(max_errors[name], err)
                worst_here = max(worst_here, err)
                max_abs_diff = max(
                    max_abs_diff, float(np.max(np.abs(analytic[name][pname] - fd[name])))
                )
            per_parameter[pname] = worst_here

    return ModelCheckReport(max_errors=max_errors, per_parameter=per_parameter,
                            max_abs_diff=max_abs_diff, entries_checked=entries)
