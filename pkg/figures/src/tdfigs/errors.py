class FigureError(Exception):
    """Invalid figure spec or unreadable input artifact."""
