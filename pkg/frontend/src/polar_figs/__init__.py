"""Figure rendering for polar-lab experiment outputs."""

from .render import RECIPES, FigureRecipe, render
from .schema import SchemaError, load_table

__version__ = "0.1.0"
