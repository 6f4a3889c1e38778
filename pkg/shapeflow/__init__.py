"""
ShapeFlow — template-to-target 3D shape deformation via conditional flow
matching, conditioned on multi-view image features.
"""

__version__ = "0.1.0"
