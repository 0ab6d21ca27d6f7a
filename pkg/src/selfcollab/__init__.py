"""Unsupervised real-noise denoising: parallel GAN branches with a noise
extraction module, wrapped in a self-collaboration replace/boost loop."""

__version__ = "0.1.0"
