"""Infrastructure adapters: config, logging, console display, file formats."""
