"""Camera-to-textured-building-model matching and absolute pose evaluation.

Turns textured CityGML LoD2 faces into geo-referenced 2D-3D correspondence
sources, estimates absolute camera pose from feature matches with
PnP+RANSAC, and aggregates matching metrics into benchmark reports.
"""

__version__ = "0.1.0"
