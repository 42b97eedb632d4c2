"""textguard: user-held end-to-end encryption for typed text.

The package intercepts keyboard input below the application layer,
encrypts it under per-message forward-secret keys, and hands applications
only armored ciphertext tokens.  Decryption happens the same way, on the
recipient's machine, from a selection of displayed text.
"""

__version__ = "0.1.0"
