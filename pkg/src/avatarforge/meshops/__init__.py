"""Triangle-mesh services: rendering, silhouettes, isosurfaces, exporters."""

from .camera import Camera, Image
from .meshio import (
    ColoredMesh, export_obj, import_obj, export_ply, import_ply, uv_sphere,
)
from .render import render_mesh, render_mesh_fast, silhouette
from .masks import dilate, coverage_ratio, effective_resolution
from .marching import marching_cubes
from .imageio import save_png, load_png, png_bytes, png_from_bytes, to_uint8

__all__ = [
    "Camera", "Image", "ColoredMesh",
    "export_obj", "import_obj", "export_ply", "import_ply", "uv_sphere",
    "render_mesh", "render_mesh_fast", "silhouette",
    "dilate", "coverage_ratio", "effective_resolution",
    "marching_cubes",
    "save_png", "load_png", "png_bytes", "png_from_bytes", "to_uint8",
]
