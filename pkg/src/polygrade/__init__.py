"""polygrade: graded mesh refinement and FEM verification for singular domains."""

__version__ = "0.1.0"
