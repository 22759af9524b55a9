"""Main entry point when executing medvt as a package.

This allows running the package using python -m medvt.
"""

from medvt.main import cli_entry_point

if __name__ == "__main__":
    cli_entry_point()
