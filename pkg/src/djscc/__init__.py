"""Wireless image transmission at desk scale.

A learned joint source-channel codec maps images to complex channel
symbols; a conditional latent diffusion model refines the noisy
reconstructions, steered by the coarse decode, a semantic label token
and the instantaneous channel state.
"""
from .autodiff import Tensor, backward, default_dtype, dtype_scope, no_grad
from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "default_dtype", "dtype_scope", "no_grad",
           "BACKEND", "__version__"]
