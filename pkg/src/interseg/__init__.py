"""Interactive segmentation editing.

A base network proposes a segmentation from the image alone; an editor
network consumes the image, the current prediction and user scribbles and
emits a corrected prediction, and can be applied repeatedly.  The editor is
trained with iterated simulated interactions so that it sees both large
early errors and the small residual ones of later rounds.
"""

__version__ = "0.1.0"

from .core import (
    DiceCurve,
    ImageSlice,
    LabelMap,
    Prediction,
    ScribbleMask,
    argmax_labels,
    dice,
    fuse_binary,
    mean_dice,
)
from .robot import RobotUserConfig, generate_scribbles, misclassified_pixels, scribble_for_class
