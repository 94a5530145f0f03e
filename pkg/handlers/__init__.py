from . import exceptions

from . import commands
