"""
Central finite-difference gradient checks for the tensor core and every
composite network, used by the test-suite and the `gradcheck` CLI command.

All checks run in float64. A check perturbs a sample of entries of each
tensor, compares (f(x + h) - f(x - h)) / 2h against the analytic gradient
and reports the worst relative error.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np

from app.core import objectives
from app.core import tensor as tn
from app.core.denoiser import TinyUNet
from app.core.tensor import Tensor
from app.core.vgt import VgtConfig, VideoGenerationTransformer

STEP = 1e-5
TOLERANCE = 1e-4
REL_FLOOR = 1e-5  # absolute noise floor of float64 central differences on O(10) losses
MAX_ENTRIES = 12


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def _sample_indices(shape: tuple, rng: np.random.Generator, max_entries: int) -> list:
    size = int(np.prod(shape)) if shape else 1
    flat = np.arange(size) if size <= max_entries else rng.choice(size, max_entries, replace=False)
    return [np.unravel_index(i, shape) if shape else () for i in flat]


def check_gradients(name: str, loss_fn: Callable[[], Tensor], tensors: dict,
                    max_entries: int = MAX_ENTRIES, seed: int = 0) -> GradcheckResult:
    """
    `loss_fn` rebuilds the scalar loss from the current tensor buffers;
    `tensors` maps names to the leaves whose gradients are checked.
    """
    rng = np.random.default_rng(seed)
    for t in tensors.values():
        t.zero_grad()
    tn.backward(loss_fn())
    analytic = {key: (t.grad.copy() if t.grad is not None else np.zeros(t.shape)) for key, t in tensors.items()}

    worst, count = 0.0, 0
    for key, t in tensors.items():
        for idx in _sample_indices(t.shape, rng, max_entries):
            original = t.data[idx].copy()
            t.data[idx] = original + STEP
            with tn.no_grad():
                plus = loss_fn().item()
            t.data[idx] = original - STEP
            with tn.no_grad():
                minus = loss_fn().item()
            t.data[idx] = original
            numeric = (plus - minus) / (2 * STEP)
            worst = max(worst, relative_error(float(analytic[key][idx]), numeric))
            count += 1
    return GradcheckResult(name=name, max_rel_error=worst, checked=count)


def check_module(name: str, module, loss_fn: Callable[[], Tensor], max_entries: int = MAX_ENTRIES) -> GradcheckResult:
    return check_gradients(name, loss_fn, module.named_parameters(), max_entries=max_entries)


def _projection(out: Tensor, seed: int) -> Tensor:
    """Random linear read-out so every output entry reaches the scalar loss."""
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    return tn.sum_(out * tn.tensor(weights))


def _op_suite(rng: np.random.Generator) -> list:
    results = []

    def leaf(*shape, positive=False):
        data = rng.standard_normal(shape)
        return tn.parameter(np.abs(data) + 0.5 if positive else data)

    a, b = leaf(3, 4), leaf(3, 4)
    results.append(check_gradients("elementwise", lambda: _projection(
        tn.silu(a) * b + tn.sigmoid(a) / (tn.exp(b * 0.1) + 1.0) - tn.square(a), 1), {"a": a, "b": b}))

    p = leaf(3, 4, positive=True)
    results.append(check_gradients("log_sqrt", lambda: _projection(tn.log(p) + tn.sqrt(p), 2), {"p": p}))

    s = leaf(5)
    results.append(check_gradients("log_sigmoid", lambda: _projection(tn.log_sigmoid(s), 3), {"s": s}))

    m1, m2 = leaf(2, 3, 4), leaf(4, 5)
    results.append(check_gradients("matmul", lambda: _projection(tn.matmul(m1, m2), 4), {"a": m1, "b": m2}))

    q, k = leaf(2, 4, 3), leaf(2, 3, 4)
    results.append(check_gradients("batched_matmul", lambda: _projection(tn.matmul(q, k), 5), {"a": q, "b": k}))

    logits = leaf(2, 5, 5)
    mask = np.tril(np.ones((5, 5), dtype=bool))
    results.append(check_gradients("masked_softmax", lambda: _projection(
        tn.softmax_rows(tn.apply_attention_mask(logits, mask)), 6), {"logits": logits}))

    x, g, bias = leaf(3, 6), leaf(6), leaf(6)
    results.append(check_gradients("layer_norm", lambda: _projection(tn.layer_norm(x, g, bias), 7),
                                   {"x": x, "gain": g, "bias": bias}))

    r = leaf(2, 3, 4)
    results.append(check_gradients("shape_ops", lambda: _projection(tn.concat([
        tn.transpose(r, (0, 2, 1))[:, 1:, :],
        tn.expand(tn.reshape(tn.mean(r, axis=1), (2, 1, 4)), (2, 4, 4))[:, :, :3]], axis=1), 8), {"r": r}))

    vol, kern, kb = leaf(1, 2, 3, 5, 5), leaf(3, 2, 2, 3, 3), leaf(3)
    results.append(check_gradients("conv3d", lambda: _projection(
        tn.conv3d(vol, kern, kb, stride=(1, 2, 1), padding=1), 9), {"x": vol, "kernel": kern, "bias": kb}))

    tvol, tkern = leaf(1, 2, 2, 3, 3), leaf(2, 3, 2, 3, 3)
    results.append(check_gradients("conv_transpose3d", lambda: _projection(
        tn.conv_transpose3d(tvol, tkern, stride=(1, 2, 2), padding=(0, 1, 1)), 10), {"x": tvol, "kernel": tkern}))

    img, k1, b1 = leaf(2, 3, 4, 4), leaf(2, 3), leaf(2)
    results.append(check_gradients("conv1x1", lambda: _projection(tn.conv1x1(img, k1, b1), 11),
                                   {"x": img, "kernel": k1, "bias": b1}))
    return results


def _network_suite(rng: np.random.Generator) -> list:
    results = []
    z = rng.standard_normal((1, 3, 4, 8, 8))
    target = rng.standard_normal(z.shape)

    for variant in ("pure", "hyper"):
        cfg = VgtConfig(variant=variant, spatial_layers=1, temporal_layers=1, heads=2, width=8,
                        patch_size=4, latent_channels=4, frames=3, latent_h=8, latent_w=8)
        vgt = VideoGenerationTransformer(cfg, seed=3)
        # Break the zero-initialised head so upstream gradients are non-trivial.
        vgt.head_out.weight.data = rng.standard_normal(vgt.head_out.weight.shape) * 0.1
        zin = tn.parameter(z.copy())
        params = dict(vgt.named_parameters())
        params["input"] = zin
        results.append(check_gradients(f"vgt_{variant}", lambda: _projection(vgt(zin, 7), 20), params, max_entries=4))

    unet = TinyUNet(latent_channels=4, T=10, channels=4, n_prompts=3, time_dim=8, prompt_dim=4, seed=5)
    unet.conv_out.weight.data = rng.standard_normal(unet.conv_out.weight.shape) * 0.1
    results.append(check_module("denoiser", unet, lambda: _projection(unet(z, 4, 1), 21), max_entries=4))

    disc = objectives.Discriminator(4, seed=6)
    fake = tn.parameter(rng.standard_normal(z.shape))
    results.append(check_gradients("discriminator", lambda: objectives.discriminator_loss(disc, target, fake),
                                   disc.named_parameters()))
    results.append(check_gradients("generator_adversarial",
                                   lambda: objectives.generator_adversarial_term(disc, fake), {"fake": fake}))

    pred = tn.parameter(rng.standard_normal(z.shape))
    weights = objectives.LossWeights(alpha=0.5, beta=0.2, gamma=0.1, lam=0.5)
    for name, fn in (("mse_loss", lambda: objectives.mse_loss(target, pred)),
                     ("l1_loss", lambda: objectives.l1_loss(target, pred)),
                     ("perceptual_loss", lambda: objectives.perceptual_loss(target, pred)),
                     ("hyper_loss", lambda: objectives.hyper_loss(target, pred, weights))):
        results.append(check_gradients(name, fn, {"pred": pred}))
    return results


def run_suite(seed: int = 0, include_networks: bool = True) -> list:
    """Runs every check in float64 and returns the individual results."""
    rng = np.random.default_rng(seed)
    with tn.precision("float64"):
        results = _op_suite(rng)
        if include_networks:
            results.extend(_network_suite(rng))
    for result in results:
        status = "OK" if result.passed else "FAIL"
        print(f"[INFO]: gradcheck {result.name:<24} max rel err {result.max_rel_error:.2e} ({result.checked} entries) {status}")
    return results
