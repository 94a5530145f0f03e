from . import experiment
from . import manifest
from . import report
from . import selection
