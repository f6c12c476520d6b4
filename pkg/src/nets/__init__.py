"""nets — a neural triple store.

Ingests an ontological knowledge base, trains a relational tensor network to
emulate a forward-chaining rule reasoner, materializes inferences as
individual embeddings, and answers atomic and conjunctive queries.
"""

from .okb import (
    ClassFact,
    ContradictionError,
    Direction,
    InvalidNameError,
    NotFoundError,
    OkbError,
    OkbGraph,
    OkbSchema,
    RelationFact,
    SchemaError,
)

__version__ = "0.1.0"

__all__ = [
    "ClassFact",
    "ContradictionError",
    "Direction",
    "InvalidNameError",
    "NotFoundError",
    "OkbError",
    "OkbGraph",
    "OkbSchema",
    "RelationFact",
    "SchemaError",
    "__version__",
]
