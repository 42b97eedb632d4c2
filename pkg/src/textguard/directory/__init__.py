"""Key directory: publishes prekey bundles and serves them to senders.

``DirectoryCore`` is the registry itself; ``service`` wraps it in an HTTP
API; ``client`` holds the two client flavors the daemon can be wired
with — in-process (tests, single host) and HTTP.
"""

from .client import HttpDirectory, InProcessDirectory, registration_payload
from .core import DirectoryCore, DirectoryRecord
from .service import create_app

__all__ = [
    "DirectoryCore",
    "DirectoryRecord",
    "HttpDirectory",
    "InProcessDirectory",
    "create_app",
    "registration_payload",
]
