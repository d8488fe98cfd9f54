"""Two-stage segmentation-conditioned video diffusion at desk scale.

Stages: a map predictor that forecasts panoptic segmentation maps from an
initial frame plus phase/triplet sequences, and a map-to-video renderer
conditioned on those maps and the first frame. Shipped with an automatic
panoptic labeling pipeline, a synthetic scene generator with exact ground
truth, and the evaluation metrics used to compare real and generated clips.
"""

__version__ = "0.1.0"
