"""Core layer: numerical kernels, the model, and the application services."""
