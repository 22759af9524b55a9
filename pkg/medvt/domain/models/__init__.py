"""Domain models: value objects, configuration dataclasses, scenes and reports."""
