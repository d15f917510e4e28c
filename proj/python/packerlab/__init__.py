"""Packer identification testing toolkit: PE parsing, entropy and rule
detectors, PEiD-style signature matching, label normalization, mock
packer/unpacker pairs and synthetic corpus generation."""

from ._core import (  # noqa: F401
    BuildSpec,
    PackerlabError,
    PeImage,
    SectionInfo,
    SectionSpec,
    Signature,
    SignatureDb,
    bintropy_decide,
    block_entropies,
    build_minimal_pe,
    canonical_families,
    canonicalize_label,
    evaluate_rule,
    f1_from_percent,
    generate_corpus,
    generic_mock_unpack,
    match_signatures,
    metrics_from_counts,
    mock_families,
    mock_pack,
    mock_unpack,
    parse_pe,
    parse_signature_db,
    reminder_decide,
    rule_catalog,
    scope_profiles,
    serialize_signature_db,
    sha256_hex,
    shannon_entropy,
    signature_predict,
    wholefile_entropy_decide,
)

__all__ = [
    "BuildSpec",
    "PackerlabError",
    "PeImage",
    "SectionInfo",
    "SectionSpec",
    "Signature",
    "SignatureDb",
    "bintropy_decide",
    "block_entropies",
    "build_minimal_pe",
    "canonical_families",
    "canonicalize_label",
    "evaluate_rule",
    "f1_from_percent",
    "generate_corpus",
    "generic_mock_unpack",
    "match_signatures",
    "metrics_from_counts",
    "mock_families",
    "mock_pack",
    "mock_unpack",
    "parse_pe",
    "parse_signature_db",
    "reminder_decide",
    "rule_catalog",
    "scope_profiles",
    "serialize_signature_db",
    "sha256_hex",
    "shannon_entropy",
    "signature_predict",
    "wholefile_entropy_decide",
]
