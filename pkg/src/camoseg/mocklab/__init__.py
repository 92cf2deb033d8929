"""Synthetic scenes, mock services and brute-force oracles for offline testing."""

from .oracles import oracle_fbw, oracle_smeasure, oracle_topk
from .scenes import PlantedScene, SceneParams, cell_mask, gen_scene, write_synthetic_dataset
from .services import (
    MockDetector,
    MockExtractor,
    MockParaphraser,
    MockSegmenter,
    MockWorld,
    mock_detector,
    mock_extractor,
    mock_segmenter,
)

__all__ = [
    "MockDetector", "MockExtractor", "MockParaphraser", "MockSegmenter", "MockWorld",
    "PlantedScene", "SceneParams", "cell_mask", "gen_scene", "mock_detector", "mock_extractor",
    "mock_segmenter", "oracle_fbw", "oracle_smeasure", "oracle_topk", "write_synthetic_dataset",
]
