import os


def worker_count() -> int:
    """Thread cap from FRACCAL_THREADS, defaulting to the machine core count."""
    raw = os.environ.get("FRACCAL_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1
