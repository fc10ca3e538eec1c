"""File jail, shell service and command-wrapping utilities."""
