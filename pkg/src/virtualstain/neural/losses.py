"""Adversarial losses; batch and pixel reductions are means throughout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

LAMBDA_TV = 0.02
ALPHA_ADV = 2000.0


def loss_discriminator_graph(d_fake, d_real):
    """mean(D(G(x))^2) + mean((1 - D(z))^2)."""
    return T.add(T.mean(T.square(d_fake)), T.mean(T.square(T.sub(1.0, d_real))))


def loss_discriminator(d_fake, d_real) -> float:
    d_fake = np.asarray(d_fake, dtype=float)
    d_real = np.asarray(d_real, dtype=float)
    return float(np.mean(d_fake**2) + np.mean((1.0 - d_real) ** 2))


def total_variation_graph(x):
    """Anisotropic TV: mean |forward difference| along x plus along y.

    Means run over batch, pixels and channels, like the other loss terms.
    """
    data = x.data
    dx = data[:, :, 1:, :] - data[:, :, :-1, :]
    dy = data[:, 1:, :, :] - data[:, :-1, :, :]
    value = np.abs(dx).mean() + np.abs(dy).mean()

    def backward(g):
        sx = np.sign(dx)
        sy = np.sign(dy)
        sx *= g / dx.size
        sy *= g / dy.size
        grad = np.zeros_like(data)
        grad[:, :, 1:, :] += sx
        grad[:, :, :-1, :] -= sx
        grad[:, 1:, :, :] += sy
        grad[:, :-1, :, :] -= sy
        return (grad,)

    return T.Tensor(np.asarray(value, dtype=data.dtype), parents=(x,), backward=backward)


@dataclass
class GeneratorLoss:
    total: float
    l1: float
    tv: float
    adversarial: float


def loss_generator_graph(output, label, d_fake, lam=LAMBDA_TV, alpha=ALPHA_ADV):
    """Returns (total tensor, l1 tensor, tv tensor, adversarial tensor)."""
    label = T.as_tensor(label)
    l1 = T.mean(T.absolute(T.sub(output, label)))
    tv = total_variation_graph(output)
    adv = T.mul(T.mean(T.square(T.sub(1.0, d_fake))), alpha)
    total = T.add(T.add(l1, T.mul(tv, lam)), adv)
    return total, l1, tv, adv


def loss_generator(output, label, d_fake, lam=LAMBDA_TV, alpha=ALPHA_ADV) -> GeneratorLoss:
    """L1 + lam * TV + alpha * mean((1 - d_fake)^2), with components."""
    output = np.asarray(output, dtype=float)
    label = np.asarray(label, dtype=float)
    if output.shape != label.shape:
        raise ValueError(f"output {output.shape} and label {label.shape} differ")
    total, l1, tv, adv = loss_generator_graph(
        T.Tensor(output), label, T.Tensor(np.asarray(d_fake, dtype=float)), lam, alpha)
    return GeneratorLoss(float(total.data), float(l1.data), float(tv.data), float(adv.data))
