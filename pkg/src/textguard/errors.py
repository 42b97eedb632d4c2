"""Exception hierarchy for the textguard package.

Every failure mode that callers are expected to branch on gets its own
class; generic programming errors stay as stdlib exceptions.
"""


class TextGuardError(Exception):
    """Base class for all textguard errors."""


# ── Key material / handshake ─────────────────────────────────────────


class InvalidSeed(TextGuardError):
    """Identity seed is not exactly 32 bytes."""


class BundleRejected(TextGuardError):
    """Prekey bundle signature does not verify."""


class PrekeyMissing(TextGuardError):
    """Handshake references a one-time prekey we no longer hold."""


# ── Ratchet sessions ─────────────────────────────────────────────────


class KeyErased(TextGuardError):
    """Message keys for this counter were already used and erased."""


class TooManySkipped(TextGuardError):
    """Skipped-key storage bound exceeded; failing closed."""


# ── Stream cipher / integrity ────────────────────────────────────────


class BadIndex(TextGuardError):
    """Edit position outside the compose buffer."""


class MacMismatch(TextGuardError):
    """Token failed integrity verification; plaintext must not be shown."""


# ── Wire format ──────────────────────────────────────────────────────


class HeaderParseError(TextGuardError):
    """Metadata header bytes are truncated or garbled."""


class LengthMismatch(TextGuardError):
    """Header ciphertext_length disagrees with the actual ciphertext."""


class MalformedTokenError(TextGuardError):
    """Delimited candidate is not a decodable token."""


# ── Interceptor / IO ─────────────────────────────────────────────────


class CaptureDenied(TextGuardError):
    """Exclusive keyboard grab could not be acquired."""


class ContactNotFound(TextGuardError):
    """No contact record under that id."""


class DirectoryUnavailable(TextGuardError):
    """Key directory could not be reached."""


class NothingToDecrypt(TextGuardError):
    """Selection contains no well-formed token."""


class Unrecoverable(TextGuardError):
    """Keys erased and no cached plaintext; message cannot be shown."""


class FocusLost(TextGuardError):
    """Target window focus changed mid-encryption; session aborted."""


class GuiChannelClosed(TextGuardError):
    """Secure display channel failed during encryption."""


class ClockError(TextGuardError):
    """Simulated event timestamp regressed."""


class EmptySelection(TextGuardError):
    """No text is currently selected."""


class BackendUnavailable(TextGuardError):
    """Requested input/output backend cannot run on this host."""


# ── Keystore ─────────────────────────────────────────────────────────


class StoreUnavailable(TextGuardError):
    """Store directory missing or not accessible."""


class StoreCorrupt(TextGuardError):
    """A store file failed to load; carries the offending path."""

    def __init__(self, path, reason=""):
        self.path = str(path)
        super().__init__(f"corrupt store file {self.path}" + (f": {reason}" if reason else ""))


class SessionNotFound(TextGuardError):
    """No serialized session for that contact."""


class CacheCorrupt(TextGuardError):
    """Sealed cache entry failed authentication."""


class KeyChanged(TextGuardError):
    """A known contact re-appeared under a different identity key (TOFU)."""


# ── Directory service ────────────────────────────────────────────────


class RegistrationRejected(TextGuardError):
    """Directory refused a bundle (bad signature)."""


class UserNotFound(TextGuardError):
    """Directory has no record for that user id."""


# ── Simulation harness ───────────────────────────────────────────────


class SpecError(TextGuardError):
    """Scenario document is malformed."""
