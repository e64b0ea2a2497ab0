"""CoupAlign-style referring segmentation at desk scale: a numpy autodiff
core, toy two-stream encoders with word-pixel alignment, mask-proposal
decoding with sentence-mask alignment, and a synthetic shapes benchmark."""

from coupalign.tensor import Tensor, Tape, backward, grad_check

__all__ = ["Tensor", "Tape", "backward", "grad_check"]
