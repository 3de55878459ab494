"""Exception hierarchy shared across the pipeline."""


class TextGnnError(Exception):
    """Base class for all pipeline errors."""


# --- graph loading / querying ---

class MissingNode(TextGnnError):
    """An edge references a node id that does not exist."""


class EmptyText(TextGnnError):
    """A node record carries no raw text."""


class DuplicateNodeId(TextGnnError):
    """The same node id appears twice in a node file."""


class UnknownNode(TextGnnError):
    """A queried node id is not part of the graph."""


class DegenerateGraph(TextGnnError):
    """A link split satisfying the spanning condition cannot be produced."""


class TooFewLabeledNodes(TextGnnError):
    """Fewer labeled nodes than requested folds."""


# --- completion gateway ---

class BackendUnavailable(TextGnnError):
    """The completion backend kept failing after bounded retries."""


class BudgetExceeded(TextGnnError):
    """The configured token budget has been spent."""


class PromptTooLong(TextGnnError):
    """A prompt exceeds the backend context window."""


class UnparseablePrompt(TextGnnError):
    """The mock backend could not parse a structured stage prompt."""


class LayerFailure(TextGnnError):
    """One or more nodes stayed unresolved after per-node retries."""

    def __init__(self, failures):
        self.failures = dict(failures)
        super().__init__(
            f"{len(self.failures)} node(s) failed: {sorted(self.failures)[:5]}"
        )


# --- vocabulary ---

class EmptyRepresentation(TextGnnError):
    """A node representation tokenizes to nothing."""


class TokenizerMismatch(TextGnnError):
    """Vocabularies or artifacts built with different tokenizers."""


class CorruptFile(TextGnnError):
    """A serialized artifact failed to deserialize."""


# --- constrained decoding ---

class EmptyCandidateSet(TextGnnError):
    """No candidates left after filtering."""


class ScorerFailure(TextGnnError):
    """The next-token scorer raised or returned incomplete scores."""


class PrefixNesting(TextGnnError):
    """One candidate id is a strict token prefix of another."""


# --- instruction rendering ---

class MissingLabel(TextGnnError):
    """Node classification requested for an unlabeled node."""


class NoHeldOutEdge(TextGnnError):
    """Generative link prediction needs at least one incident edge."""


class InsufficientClasses(TextGnnError):
    """Node discrimination needs two classes with enough members."""


class NoValidConfiguration(TextGnnError):
    """Link discrimination found no usable center/candidate layout."""


class UnknownDomain(TextGnnError):
    """A domain tag has no registered description or template."""


# --- evaluation ---

class EmptyClassSet(TextGnnError):
    """Macro-F1 requested over an empty class set."""


class DegenerateEmbedding(TextGnnError):
    """An embedder produced an all-zero vector."""


# --- cli ---

class MissingArtifact(TextGnnError):
    """A subcommand prerequisite artifact is absent."""
