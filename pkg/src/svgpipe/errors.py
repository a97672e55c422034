"""Exception types shared across the pipeline.

Every error the pipeline can raise deliberately derives from SvgPipeError so
batch drivers can distinguish per-sample rejection from genuine bugs.
"""


class SvgPipeError(Exception):
    """Base class for all pipeline errors."""


# --- parsing / document model ---

class MalformedXml(SvgPipeError):
    """Input is not well-formed XML or lacks a usable svg root."""


class UnsupportedFeature(SvgPipeError):
    """Document uses elements or paint features outside the supported set."""

    def __init__(self, features):
        if isinstance(features, str):
            features = [features]
        self.features = sorted(set(features))
        super().__init__("unsupported: " + ", ".join(self.features))


class DanglingReference(SvgPipeError):
    """An id reference (href, url(#...)) does not resolve inside the document."""

    def __init__(self, ref_id):
        self.ref_id = ref_id
        super().__init__(f"unresolvable reference: #{ref_id}")


# --- reconstruction ---

class CyclicReference(SvgPipeError):
    """use/defs reference chain loops back on itself."""


class EmptyDocument(SvgPipeError):
    """Document contains no visible primitive to flatten."""


class AllInvisible(SvgPipeError):
    """Every step was pruned as visually inert; sample must be rejected."""


# --- rasterization ---

class DegenerateViewBox(SvgPipeError):
    """viewBox has zero or negative area."""


class DimensionMismatch(SvgPipeError):
    """Two images or feature sets disagree on shape."""


class LocalityViolation(SvgPipeError):
    """A step changed pixels outside its coverage mask."""


# --- annotation ---

class EndpointError(SvgPipeError):
    """Remote endpoint failed after the configured retries."""


class EmptyResponse(SvgPipeError):
    """Endpoint returned an empty or whitespace-only message."""


class ContextOverflow(SvgPipeError):
    """Dialogue history exceeds the endpoint's context limit."""


class ProviderError(SvgPipeError):
    """Embedding or scoring provider failed."""


# --- dataset assembly ---

class RejectedRecord(SvgPipeError):
    """Annotation record failed its filters and cannot be assembled."""


class LengthOverflow(SvgPipeError):
    """Rendered sample exceeds the configured length budget."""


class InsufficientSamples(SvgPipeError):
    """Not enough samples for the requested split."""


class NonFiniteInput(SvgPipeError):
    """Numeric input contains NaN/Inf or negative log-probabilities."""


# --- metrics ---

class CovarianceRankError(SvgPipeError):
    """Too few vectors to estimate a covariance of the requested dimension."""


class NumericalFailure(SvgPipeError):
    """Eigensolver or other numeric routine did not converge."""


class ZeroVector(SvgPipeError):
    """Cosine similarity is undefined for a zero vector."""


class EmptyInput(SvgPipeError):
    """Operation requires a non-empty collection."""


# --- inference ---

class AmbiguousSpan(SvgPipeError):
    """Prompt edit target occurs zero or multiple times."""

    def __init__(self, span, count):
        self.span = span
        self.count = count
        super().__init__(f"span {span!r} occurs {count} times, expected exactly 1")


class AllInvalid(SvgPipeError):
    """Every candidate generation failed validation."""


# --- cli / orchestration ---

class EmptyCorpus(SvgPipeError):
    """Corpus directory holds no .svg files."""


class StageError(SvgPipeError):
    """Stage-level failure: bad configuration, missing inputs, or a broken
    invariant.  Unlike per-sample errors, this fails the whole run."""
