import time


def now_ms() -> int:
    """
    Return the current time in milliseconds.
    Only run metadata and log lines carry wall-clock time; result tables never do.
    """
    return int(time.time() * 1000)


def elapsed_ms(start_ms: int) -> int:
    return now_ms() - start_ms
