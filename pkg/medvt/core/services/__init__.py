"""Application Services: the use cases behind each CLI command.

These services orchestrate the model, data and metrics code and reach
storage and the console only through domain interfaces.
"""
