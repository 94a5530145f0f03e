import argparse
import logging
import sentry_sdk

from typing import Callable, get_args

from misc.models.experiment import SamplerKind

import config

# Configure logging
logging.basicConfig(
    format="%(created)f:%(levelname)s:%(name)s:%(module)s:%(message)s",
    level=getattr(logging, config.LOG_LEVEL, logging.INFO)
)

# error tracker
# if SENTRY_DSN is not specified, this module will be skipped
sentry_sdk.init(
    dsn=config.SENTRY_DSN,
    traces_sample_rate=1.0
)

Handler = Callable[[argparse.Namespace], int | None]


def common_arguments() -> argparse.ArgumentParser:
    """
    Options shared by every sub-command. Dedicated flags win over ``--set``,
    which wins over the config file.
    """

    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--manifest", help="re-run with the config stored in a manifest.json")
    parser.add_argument("--seed", type=int, help="single seed for the split and training")
    parser.add_argument("--n", type=int, help="region count")
    parser.add_argument("--khop", type=int, help="traversal depth")
    parser.add_argument("--k", type=int, help="negatives per positive")
    parser.add_argument("--gamma", type=float, help="hinge margin")
    parser.add_argument("--sampler", choices=get_args(SamplerKind), help="negative sampler")
    parser.add_argument("--out", help="artifact directory")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override any config key, may be repeated"
    )
    parser.add_argument("--no-cache", action="store_true", help="clear the stage cache and do not write it")
    return parser


class Dispatcher:

    def __init__(self, prog: str, description: str) -> None:
        """
        Initializes a Dispatcher routing sub-commands to their handlers.

        Args:
            prog (str): Program name shown in usage.
            description (str): Program description.
        """

        self.parser = argparse.ArgumentParser(prog=prog, description=description)
        self.commands = self.parser.add_subparsers(dest="command", metavar="command", required=True)
        self.common = common_arguments()
        self.error_handler: Callable[[argparse.Namespace, Exception], int] | None = None

    def command_handler(self, name: str, help: str, arguments: tuple[tuple[tuple, dict], ...] = ()):
        """
        Registers a sub-command.

        Args:
            name (str): Sub-command name.
            help (str): One-line description.
            arguments (tuple): Extra ``(args, kwargs)`` pairs for add_argument.
        """

        def decorator(handler: Handler) -> Handler:
            command = self.commands.add_parser(name, help=help, parents=[self.common])
            for args, kwargs in arguments:
                command.add_argument(*args, **kwargs)
            command.set_defaults(handler=handler)
            return handler

        return decorator

    def errors_handler(self):
        """
        Registers the handler that turns an exception into an exit code.
        """

        def decorator(handler: Callable[[argparse.Namespace, Exception], int]):
            self.error_handler = handler
            return handler

        return decorator

    def start(
            self,
            argv: list[str] | None = None,
            on_startup: Callable[["Dispatcher"], None] | None = None,
            on_shutdown: Callable[["Dispatcher"], None] | None = None
    ) -> int:
        """
        Parses the command line and runs the selected handler.

        Returns:
            int: Process exit code.
        """

        args = self.parser.parse_args(argv)
        if on_startup is not None:
            on_startup(self)

        try:
            return args.handler(args) or 0
        except Exception as ex:
            if self.error_handler is None:
                raise
            return self.error_handler(args, ex)
        finally:
            if on_shutdown is not None:
                on_shutdown(self)


# init
dp = Dispatcher("nregion", "N-region negative sampling for graph recommenders")
