"""Conservative and weighted behavior cloning for return-conditioned offline RL."""

from .config import *
from .conservatism import *
from .datafile import *
from .envs import *
from .evaluator import *
from .model import *
from .nn import *
from .oracles import *
from .policy import *
from .report import *
from .trainer import *
from .validator import *
from .weighting import *
