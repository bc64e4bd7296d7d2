"""Zero-knowledge multi-factor authentication toolkit.

Fuses an SRAM-PUF token and a template-less facial biometric, keyed by a
password and per-session nonces, into 256-bit ephemeral keys agreed over
a two-message protocol with fragmented-hash reconciliation.
"""

from .biometric import LandmarkFrame, PersonModel, QuantParams
from .derivation import Nonce512
from .errors import (FormatError, FragmentStatus, InsufficientStableBits,
                     ProtocolStateError, ReconciliationFailure)
from .protocol import (ChallengeMessage, ExchangeResult, ResponseMessage,
                       ServerEnrollment, SessionParams, build_enrollment,
                       client_keygen, run_loopback, server_challenge,
                       server_enroll, server_verify)
from .puf import SramDeviceModel, power_cycle_read, synth_device
from .rbc import FragmentDigestSet, KeyBits, digest_fragments, reconcile
from .tables import (BinaryTable, MaskVector, TernaryTable, apply_mask,
                     mask_of, match_fraction, merge_xor, superimpose)

__version__ = "0.1.0"

__all__ = [
    "BinaryTable", "ChallengeMessage", "ExchangeResult", "FormatError",
    "FragmentDigestSet", "FragmentStatus", "InsufficientStableBits",
    "KeyBits", "LandmarkFrame", "MaskVector", "Nonce512", "PersonModel",
    "ProtocolStateError", "QuantParams", "ReconciliationFailure",
    "ResponseMessage", "ServerEnrollment", "SessionParams",
    "SramDeviceModel", "TernaryTable", "apply_mask", "build_enrollment",
    "client_keygen", "digest_fragments", "mask_of", "match_fraction",
    "merge_xor", "power_cycle_read", "reconcile", "run_loopback",
    "server_challenge", "server_enroll", "server_verify", "superimpose",
    "synth_device",
]
