"""Knowledge-augmented prompt tuning for video action recognition.

Frozen dual encoders, learnable text and video prompts, a focal
contrastive objective, the matching preprocessing protocol, and the
analysis suite (Ward dendrograms, classification metrics).
"""

from . import autodiff
from .autodiff import GradContext, Parameter, Tensor
from .config import RunConfig, desk_preset, load_config, paper_shape_preset
from .corpus import ClassDescription, Corpus, demo_corpus, load_corpus
from .encoders import (DescriptionEmbedder, EncoderConfig, TextEncoder,
                       TokenSequence, VisionEncoder, tokenize, weights_checksum)
from .metrics import EvalReport, evaluate
from .model import PromptTunedClassifier
from .training import (Adam, Dataset, FocalConfig, TrainConfig, TrainState,
                       class_probabilities, classify, focal_loss, train)
from .video_prompts import VideoPromptConfig, VideoPromptLearner

__version__ = "0.1.0"
