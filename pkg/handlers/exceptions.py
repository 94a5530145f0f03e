import argparse
import logging
import sentry_sdk

from dispatcher import dp
from misc.exceptions import ConfigError, MissingArtifact, NRegionError, ParseError, StageError


@dp.errors_handler()
def errors_handler(args: argparse.Namespace, exception: Exception) -> int:
    """
    Exception handler for sub-commands.

    Args:
        args (argparse.Namespace): Parsed command line of the failed command.
        exception (Exception): The exception that occurred.

    Returns:
        int: Exit code. 2 for config and parse errors, 3 for a missing artifact,
        4 for a failed stage, 1 otherwise.
    """

    # Handle specific exceptions
    if isinstance(exception, ConfigError):
        logging.error(f"Config error: {exception}")
        return 2

    if isinstance(exception, ParseError):
        logging.error(f"Parse error: {exception}")
        return 2

    if isinstance(exception, StageError) and isinstance(exception.cause, ParseError):
        logging.error(f"Parse error in stage {exception.stage}: {exception.cause}")
        return 2

    if isinstance(exception, MissingArtifact):
        logging.error(f"Missing artifact: {exception}")
        return 3

    if isinstance(exception, StageError):
        logging.error(f"{args.command}: {exception}")
        sentry_sdk.capture_exception(exception)
        return 4

    if isinstance(exception, NRegionError):
        logging.exception(f"{args.command}: {exception}")
        sentry_sdk.capture_exception(exception)
        return 1

    # Log other exceptions for debugging purposes
    logging.exception(f"Command: {args.command} \n{exception}")
    sentry_sdk.capture_exception(exception)
    return 1
