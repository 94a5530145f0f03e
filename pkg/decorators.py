import functools

import logging as log

from time import perf_counter

import config


def timer(func):
    """
    Decorator for measuring the execution time of a pipeline stage.

    Args:
        func (callable): The function to be decorated.

    Returns:
        callable: The decorated function.

    Usage:
    @timer
    def build_weight_matrix(graph):
        # Your stage code here

    The decorator logs the execution time of the decorated function
    and issues a warning if it exceeds config.SLOW_STAGE_MS milliseconds.

    """

    f_name = f"{func.__module__}.{func.__name__}"

    @functools.wraps(func)
    def helper(*args, **params):
        start = perf_counter()
        result = func(*args, **params)

        f_time = int(round(perf_counter() - start, 3) * 1000)
        log.debug(f"Function {f_name} took {f_time} ms")

        if f_time > config.SLOW_STAGE_MS:
            log.warning(f"Function {f_name} was slow. Execution time {f_time} ms")

        return result

    return helper
