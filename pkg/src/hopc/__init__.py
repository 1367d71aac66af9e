"""Heterogeneous OPC: pixel ILT, model-based OPC and a learned per-design engine selector."""

from .layout import GridConfig, Layout, LayoutError, MaskGrid, Polygon, parse_layout, rasterize
from .litho import LithoContext, OpticsConfig, ResistConfig, aerial_image, mse
from .ilt import IltConfig, OpcResult, run_dual_ilt, run_ilt
from .mbopc import MbOpcConfig, run_mbopc

__version__ = "0.1.0"
