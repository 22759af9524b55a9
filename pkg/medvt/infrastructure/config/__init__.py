"""Configuration loading: key=value or YAML files, MEDVT_ environment variables, .env files."""
