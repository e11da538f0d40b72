"""Viewpoint selection for camera-carrying robots supervising a construction robot."""
from .pipeline import (PipelineConfig, RunReport, Scene, build_environment, export_geometry, load_scene,
                       run_selection, update_after_install)

__all__ = ["PipelineConfig", "RunReport", "Scene", "build_environment", "export_geometry", "load_scene",
           "run_selection", "update_after_install"]
__version__ = "0.1.0"
