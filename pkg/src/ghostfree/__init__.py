"""Ghost-free shadow removal: DHAN removal/detection network and SMGAN shadow synthesis."""
from .dhan import DHAN, DhanConfig, build_dhan, dhan_forward
from .features import ExtractorConfig, build_extractor, extract_hypercolumn
from .losses import LossWeights, attention_bce, generator_objective, perceptual_loss
from .smgan import GeneratorConfig, augment_dataset, composite, derive_matte, synthesize_shadow

__version__ = "0.1.0"
