"""Lensfree phase imaging and GAN virtual staining at desk scale.

Modules:
    wavefield: complex fields and angular-spectrum propagation.
    holosim: synthetic phantoms and the lensfree measurement chain.
    psr: pixel super-resolution by shift-and-add.
    recon: multi-height phase recovery and autofocusing.
    register: phase-to-colour registration (edges, similarity, elastic).
    neural: numpy autodiff core, U-Net generator, discriminator, training.
    metrics: SSIM and phase-noise robustness.
    pipeline: end-to-end desk workflow on phantoms.
    cli: command-line entry point.
"""

__version__ = "0.1.0"
