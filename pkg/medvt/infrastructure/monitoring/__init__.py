"""Logging setup shared by every command."""
