"""Two-line diffusion-perturbed risk model: simulation, kernels and integral-equation solver."""

__version__ = "0.1.0"
