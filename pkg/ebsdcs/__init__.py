__copyright__ = 'ebsdcs contributors 2026-present'
__version__ = '0.1.0'

import logging

from . import abc as abc
from .globals import *
from .errors import *
from .enums import *
from .utils import *
from .mixins import *
from .grid import *
from .maps import *
from .phantom import *
from .noise import *
from .sampling import *
from .metrics import *
from .indexing import *
from .bpfa import *
from .file import *
from .config import *
from .pipeline import *

logging.getLogger(__name__).addHandler(logging.NullHandler())
