"""Attribute-based read/write access control for published content."""

from .abe import (
    DEFAULT_BACKEND,
    AbeKeyring,
    AbePublicKey,
    AttributeSecretKey,
    ShamirX25519Backend,
    abe_keygen,
    abe_setup,
    rekey_lazy,
)
from .envelope import (
    SecureEnvelope,
    envelope_decrypt,
    envelope_encrypt,
    envelope_update,
    verify_write,
    write_verified,
)
from .policy import (
    AND,
    OR,
    Attribute,
    Leaf,
    PolicyTree,
    Threshold,
    attributes_of,
    decode_policy,
    encode_policy,
    k_of,
    parse_policy,
    policy_satisfied,
    render_policy,
)

__all__ = [
    "AND", "OR", "DEFAULT_BACKEND", "AbeKeyring", "AbePublicKey", "Attribute", "AttributeSecretKey",
    "Leaf", "PolicyTree", "SecureEnvelope", "ShamirX25519Backend", "Threshold", "abe_keygen",
    "abe_setup", "attributes_of", "decode_policy", "encode_policy", "envelope_decrypt",
    "envelope_encrypt", "envelope_update", "k_of", "parse_policy", "policy_satisfied",
    "rekey_lazy", "render_policy", "verify_write", "write_verified",
]
