"""Local-disk implementations of the FileSystem, DatasetStore and CheckpointStore interfaces."""
