"""Adversarial training on small numpy networks: losses, attacks, schedules,
training loops and the analyses around them."""
from . import analysis, attacks, data, diffcore, losses, optim, train

__version__ = "0.1.0"
