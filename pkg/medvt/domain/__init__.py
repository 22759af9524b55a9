"""Domain layer: value objects, configs, reports, interfaces and events."""
