"""Small numeric helpers."""


def running_max(xs):
    """Prefix maxima of xs, as a new list."""
    # SOLUTION
