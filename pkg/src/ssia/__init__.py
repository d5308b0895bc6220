"""Self-supervised implicit attention: training-time attention for small CNNs.

SSIA blocks attach between backbone stages during training only. Each block
regresses normalized pooled descriptors of a higher stage (held behind a
stop-gradient) from a lower stage through a weak MLP predictor, adding an
auxiliary loss that steers the lower layers toward globally informative
features. Blocks are stripped after training; inference is bit-identical to
the plain backbone.
"""

from ssia.tensor import Tensor, backward, finite_diff_check, no_grad, stop_gradient

__all__ = ["Tensor", "backward", "finite_diff_check", "no_grad", "stop_gradient"]

__version__ = "0.1.0"
