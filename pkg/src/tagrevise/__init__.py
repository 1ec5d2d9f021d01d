"""Knowledge-guided genetic revision of process models with tree-adjoining grammars."""

__version__ = "0.1.0"
