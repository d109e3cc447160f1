"""Utility functions used internally in `cwbc`."""

from .render import *
