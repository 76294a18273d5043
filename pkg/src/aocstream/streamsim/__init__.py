"""Transaction-level simulation of the streaming layer pipeline."""
from .blocks import LayerBlock, LineBuffer
from .engine import Engine, Fifo
from .pipeline import CycleStats, LayerCycles, PipelineResult, run_pipeline

__all__ = ["CycleStats", "Engine", "Fifo", "LayerBlock", "LayerCycles", "LineBuffer",
           "PipelineResult", "run_pipeline"]
