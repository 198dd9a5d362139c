"""Exception types shared across the package."""


class TaxonomyError(ValueError):
    """Malformed taxonomy data: cycles, unknown concepts, bad input files."""


class CycleError(TaxonomyError):
    """The edge set contains a directed cycle."""


class UnknownConceptError(TaxonomyError):
    """A concept id or name was not found in the taxonomy."""


class MissingEmbeddingError(TaxonomyError):
    """A concept named in an edge or query file has no embedding vector."""


class DimensionMismatchError(TaxonomyError):
    """Embedding vectors disagree with the declared dimension."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""
