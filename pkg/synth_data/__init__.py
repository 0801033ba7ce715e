"""Analytic multi-view dataset: primitives, oracle renders, persistence."""

from synth_data.mock_objects import MockObjectFactory, SyntheticObject
from synth_data.oracle_renderer import (
    MultiViewDataset,
    ObjectViews,
    View,
    camera_ring,
    generate_dataset,
    oracle_render,
)
from synth_data.storage import load_dataset, save_dataset
