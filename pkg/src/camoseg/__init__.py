"""Zero-shot camouflaged object segmentation from a grounding detector,
a dense feature extractor and a promptable segmenter."""

from .geometry import BinaryMask, BoundingBox, FeatureMap, ImagePoint, SoftMask
from .metrics import EvalReport, score_image
from .pipeline import PipelineConfig, PipelineTrace, run_ablation, run_benchmark, run_pipeline
from .prompts import PromptChain, PromptStage, build_chain

__version__ = "0.1.0"

__all__ = [
    "BinaryMask", "BoundingBox", "FeatureMap", "ImagePoint", "SoftMask",
    "EvalReport", "score_image",
    "PipelineConfig", "PipelineTrace", "run_ablation", "run_benchmark", "run_pipeline",
    "PromptChain", "PromptStage", "build_chain",
]
