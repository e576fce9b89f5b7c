"""Exception hierarchy shared across the pipeline."""


class RevrankError(Exception):
    """Base class. The CLI maps subclasses to exit codes."""


class DataError(RevrankError):
    """Bad input data or a violated data contract (CLI exit 2)."""


class CorpusIntegrityError(DataError):
    pass


class ColdStartError(DataError):
    """Reviewer has no publications to profile or pool."""


class DimensionMismatch(DataError):
    pass


class EmptyInputError(DataError):
    pass


class MissingScoreError(DataError):
    def __init__(self, pair, key):
        super().__init__(f"no score for {key!r} needed by pair {pair!r}")
        self.pair = pair
        self.key = key


class NonFiniteLossError(DataError):
    pass


class ContractError(DataError):
    """A service replied with something that breaks its response contract."""

    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class KeywordExtractionError(DataError):
    def __init__(self, paper_id, cause):
        super().__init__(f"keyword extraction failed for paper {paper_id}: {cause}")
        self.paper_id = paper_id
        self.cause = cause


class TransportError(RevrankError):
    """External service unreachable after retries (CLI exit 3)."""


class VerifierUnavailable(TransportError):
    pass


class UnknownDocument(DataError, KeyError):
    def __str__(self):
        return f"unknown document id {self.args[0]!r}"
