"""Smoke tests for the packerlab python module."""

import collections
import json
import math

import pytest

import packerlab as pl


def make_spec():
    spec = pl.BuildSpec()
    spec.arch = "PE64"
    spec.sections = [
        pl.SectionSpec(".text", content=b"\x90" * 512, executable=True),
        pl.SectionSpec(".data", content=b"a" * 256, writable=True),
    ]
    spec.entry_section = 0
    spec.import_host_section = 1
    spec.add_import("KERNEL32.dll", ["ExitProcess", "CreateFileW"])
    return spec


def py_entropy(data: bytes) -> float:
    if not data:
        return 0.0
    counts = collections.Counter(data)
    n = len(data)
    return -sum(c / n * math.log2(c / n) for c in counts.values())


def test_entropy_fixed_points_and_oracle():
    assert pl.shannon_entropy(b"\x00" * 256) == pytest.approx(0.0)
    assert pl.shannon_entropy(bytes(range(256))) == pytest.approx(8.0)
    data = bytes((i * 37 + 11) % 251 for i in range(4096))
    assert pl.shannon_entropy(data) == pytest.approx(py_entropy(data), abs=1e-9)
    blocks = pl.block_entropies(data, block_size=256)
    assert len(blocks) == 16


def test_build_and_parse_round_trip():
    blob = pl.build_minimal_pe(make_spec())
    img = pl.parse_pe(blob)
    assert img.arch == "PE64"
    assert [s.name for s in img.sections] == [".text", ".data"]
    assert img.sections[0].executable
    assert img.imports == [("KERNEL32.dll", 2)]
    assert img.overlay is None
    assert pl.build_minimal_pe(make_spec()) == blob  # deterministic


def test_parse_rejects_non_pe():
    with pytest.raises(pl.PackerlabError):
        pl.parse_pe(b"not a pe file at all")


def test_detectors():
    img = pl.parse_pe(pl.build_minimal_pe(make_spec()))
    verdict = pl.wholefile_entropy_decide(img)
    assert verdict["packed"] is False
    assert "wholefile_entropy" in verdict["evidence"]
    bintropy = pl.bintropy_decide(img, mode="m0/m1")
    assert bintropy["packed"] is False
    reminder = pl.reminder_decide(img)
    assert reminder["packed"] is False


def test_signature_db_and_matching():
    db, skipped, diags = pl.parse_signature_db(
        "[UPX test]\nsignature = 90 90 ?? 90\nep_only = true\n"
    )
    assert len(db) == 1 and skipped == 0
    assert db.entries[0].pattern == "90 90 ?? 90"

    img = pl.parse_pe(pl.build_minimal_pe(make_spec()))
    matches = pl.match_signatures(db, img, scopes=["ENTRY_POINT"])
    assert matches and matches[0]["scope"] == "ENTRY_POINT"
    assert pl.signature_predict(db, img, profile="readpe") == "UPX test"

    text = pl.serialize_signature_db(db)
    again, _, _ = pl.parse_signature_db(text)
    assert pl.serialize_signature_db(again) == text


def test_canonicalize_labels():
    fam, version, raw = pl.canonicalize_label("ASPack v2.11d")
    assert (fam, version) == ("ASPack", "2.11d")
    fam, version, _ = pl.canonicalize_label("UPX compressed Win32 Executable")
    assert (fam, version) == ("UPX", None)
    fam, _, _ = pl.canonicalize_label("never heard of it")
    assert fam == "UNKNOWN"
    assert "MOCKX" in pl.canonical_families()


def test_metrics():
    assert pl.f1_from_percent(46.3, 53.7) == pytest.approx(49.7, abs=0.05)
    m = pl.metrics_from_counts(9, 1, 1, 9)
    assert m["recall"] == pytest.approx(90.0)
    assert m["counts"]["tp"] == 9


def test_mock_pack_unpack_round_trip():
    base = pl.build_minimal_pe(make_spec())
    packed = pl.mock_pack(base, "MOCKX", seed=7)
    assert pl.parse_pe(packed).sections[0].name == "MCKX0"
    assert pl.mock_unpack(packed, "MOCKX") == base
    assert pl.generic_mock_unpack(packed) == base
    with pytest.raises(pl.PackerlabError):
        pl.mock_unpack(packed, "MOCKR")


def test_rules():
    img = pl.parse_pe(pl.build_minimal_pe(make_spec()))
    verdict = pl.evaluate_rule("PyPackerDetect", "low_imports", img)
    assert verdict["fired"] is True
    names = {(r["tool"], r["name"]) for r in pl.rule_catalog()}
    assert ("qu1cksc0pe", "HasOverlay") in names
    assert len(names) >= 15


def test_generate_corpus(tmp_path):
    manifest = pl.generate_corpus(
        {"MOCKX": 2, "MOCKR": 1}, unpacked=1, seed=5, out_dir=str(tmp_path / "corpus")
    )
    assert len(manifest["samples"]) == 4
    labels = collections.Counter(manifest["samples"].values())
    assert labels == {"MOCKX": 2, "MOCKR": 1, "NOT_PACKED": 1}
    on_disk = json.loads((tmp_path / "corpus" / "manifest.json").read_text())
    assert on_disk["samples"] == manifest["samples"]
