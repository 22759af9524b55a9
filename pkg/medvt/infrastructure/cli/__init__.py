"""Command-line presentation: the rich console implementation of UserInterface."""
