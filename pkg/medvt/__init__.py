"""Main package for the medvt application."""
