"""tempoedit: image editing as two-frame video generation, at desk scale.

Rectified-flow training over unified image-pair / short-video latent
sequences, two-stage sampling with droppable temporal reasoning tokens, and
few-step distribution-matching distillation, all verified against closed-form
Gaussian oracles and synthetic edit tasks with exact ground truth.
"""

__version__ = "0.1.0"
