import logging
import sys

import sentry_sdk

from dispatcher import dp, Dispatcher  # Import the Dispatcher instance from the dispatcher module

from actions.basic import Sys  # Import the Sys class for environment details

import handlers  # Import the handlers module registering the sub-commands and the errors handler

_ = handlers


def startup(_: Dispatcher) -> None:
    """
    Startup function called before the sub-command runs.

    Args:
        _: Dispatcher: The Dispatcher instance.

    """
    logging.debug(f"Environment: {Sys.sys_info()}")  # Log interpreter and package versions


def shutdown(_: Dispatcher) -> None:
    """
    Shutdown function called after the sub-command finished or failed.

    Args:
        _: Dispatcher: The Dispatcher instance.

    """
    sentry_sdk.flush()  # Deliver pending error reports


if __name__ == "__main__":
    # Run the selected sub-command, specifying startup and shutdown functions
    sys.exit(dp.start(on_startup=startup, on_shutdown=shutdown))
