"""Exception hierarchy shared by all atlasfuse modules."""


class AtlasFuseError(Exception):
    """Base class for all errors raised by this package."""


# --- volume I/O ---

class VolumeFormatError(AtlasFuseError):
    """A volume file violates the MAV1 binary layout."""


class BadMagic(VolumeFormatError):
    pass


class BadDtype(VolumeFormatError):
    pass


class TruncatedPayload(VolumeFormatError):
    """Payload size does not equal nx*ny*nz*element_width."""


class NonFiniteData(VolumeFormatError):
    """A float32 payload contains NaN or Inf."""


class InvalidHeader(VolumeFormatError):
    """Header fields violate their invariants (dims < 1, bad spacing)."""


class IoFailure(AtlasFuseError):
    """Underlying OS-level read/write failure."""


# --- cross-volume validation ---

class IncompatibleVolumes(AtlasFuseError):
    """Volumes do not share dims and spacing."""


class DimsMismatch(IncompatibleVolumes):
    pass


class SpacingMismatch(IncompatibleVolumes):
    pass


# --- fusion ---

class MissingMask(AtlasFuseError):
    """Trusted voting requires a mask (or trust map) per atlas."""


class MissingTruth(AtlasFuseError):
    """Oracle fusion requires the true label volume."""


class BadThreshold(AtlasFuseError):
    """Vote threshold outside [1, n]."""


class UnknownMethod(AtlasFuseError):
    pass


# --- trust / patches ---

class BadPatchSpec(AtlasFuseError):
    """patch/core sizes violate the tiling contract."""


class MissingTile(AtlasFuseError):
    pass


class ExtentMismatch(AtlasFuseError):
    pass


class SamplingExhausted(AtlasFuseError):
    """Rejection sampling hit the attempt cap: the mask has too little
    disagreement to satisfy the zero-fraction constraint."""


class OutOfRangeValue(AtlasFuseError):
    """Trust map values outside [0, 1]."""


# --- metrics ---

class EmptyStructure(AtlasFuseError):
    """Surface metrics are undefined when a structure is empty."""


# --- stats ---

class EmptySample(AtlasFuseError):
    pass


class BadInput(AtlasFuseError):
    """p-values outside [0, 1] or malformed comparison input."""


class UnknownBaseline(AtlasFuseError):
    pass


# --- synth ---

class TooManyStructures(AtlasFuseError):
    """Phantom generation cannot place the requested structure count."""
