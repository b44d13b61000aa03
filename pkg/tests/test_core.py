import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backbone_cdn.core import (
    FNV64_OFFSET_BASIS,
    CacheConfig,
    FileId,
    FileMeta,
    GeoPoint,
    ParseError,
    ValidationError,
    content_version,
    content_version_for,
    fnv1a_64,
    gen_content_byte,
    gen_content_range,
    parse_deployment,
    serialize_deployment,
)

from helpers import deployment_doc


def scalar_content_byte(seed: int, i: int) -> int:
    # independent reference for the generator formula
    return ((seed % 4294967296) * 31 + i * 131) % 256


class TestContentGeneration:
    def test_all_terms_zero(self):
        assert gen_content_byte(0, 0) == 0

    def test_index_term(self):
        assert gen_content_byte(0, 2) == 6  # 262 mod 256

    def test_reference_value(self):
        # hand evaluation: (7*31 + 1000*131) mod 256 = 131217 mod 256 = 145
        assert scalar_content_byte(7, 1000) == 145
        assert gen_content_byte(7, 1000) == 145

    def test_pure(self):
        assert [gen_content_byte(9, i) for i in range(64)] == [
            gen_content_byte(9, i) for i in range(64)
        ]

    @given(
        seed=st.integers(min_value=0, max_value=(1 << 64) - 1),
        offset=st.integers(min_value=0, max_value=5000),
        length=st.integers(min_value=0, max_value=1200),
    )
    def test_range_matches_scalar_formula(self, seed, offset, length):
        expected = bytes(scalar_content_byte(seed, i) for i in range(offset, offset + length))
        assert gen_content_range(seed, offset, length) == expected

    def test_range_rejects_negatives(self):
        with pytest.raises(ValueError):
            gen_content_range(1, -1, 4)


class TestContentVersion:
    def test_empty_is_offset_basis(self):
        assert content_version_for(123, 0) == FNV64_OFFSET_BASIS == 14695981039346656037

    def test_single_zero_byte(self):
        # one FNV-1a round computed independently:
        # (basis ^ 0x00) * prime mod 2^64; implementation cross-checked
        # against the canonical vectors for "a" and "foobar" below
        assert content_version_for(0, 1) == 12638153115695167455

    def test_canonical_fnv_vectors(self):
        assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a_64(b"foobar") == 0x85944171F73967E8

    def test_chunking_invariance(self):
        # chunked hashing in content_version_for must equal one-shot hashing
        seed, size = 42, (1 << 20) + 37
        assert content_version_for(seed, size) == fnv1a_64(gen_content_range(seed, 0, size))

    def test_deterministic_across_recomputation(self):
        a = content_version_for(7, 5000)
        content_version_for.cache_clear()
        assert content_version_for(7, 5000) == a

    def test_meta_version_property(self):
        meta = FileMeta(FileId("/ns/f"), 10, 99)
        assert meta.version == content_version(meta)
        assert meta.version == fnv1a_64(gen_content_range(99, 0, 10))


class TestFileId:
    def test_namespace_is_first_component(self):
        assert FileId("/nova/data/f1").namespace == "nova"

    @pytest.mark.parametrize(
        "path",
        ["relative/x", "/single", "/a//b", "/a/./b", "/a/../b", "/a/b c", "/a/", ""],
    )
    def test_rejects_bad_paths(self, path):
        with pytest.raises(ValidationError):
            FileId(path)

    def test_accepts_deep_paths(self):
        FileId("/igwn/frames/O3/seg-001.gwf")


class TestGeoPoint:
    def test_ranges(self):
        GeoPoint(90.0, 180.0)
        GeoPoint(-90.0, -179.9)
        with pytest.raises(ValidationError):
            GeoPoint(123.0, 0.0)
        with pytest.raises(ValidationError):
            GeoPoint(0.0, -180.0)
        with pytest.raises(ValidationError):
            GeoPoint(0.0, 180.1)


class TestCacheConfig:
    def test_block_size_power_of_two(self):
        with pytest.raises(ValidationError):
            CacheConfig(capacity_bytes=1 << 20, block_size=1500)
        with pytest.raises(ValidationError):
            CacheConfig(capacity_bytes=1 << 20, block_size=512)

    def test_watermark_order(self):
        with pytest.raises(ValidationError):
            CacheConfig(capacity_bytes=1 << 20, high_watermark=0.5, low_watermark=0.6)

    def test_ttl_requires_ttl_ms(self):
        with pytest.raises(ValidationError):
            CacheConfig(capacity_bytes=1 << 20, mode="ttl")
        CacheConfig(capacity_bytes=1 << 20, mode="ttl", ttl_ms=300_000)


class TestParseDeployment:
    def test_minimal_document(self):
        cfg = parse_deployment(json.dumps(deployment_doc()))
        assert len(cfg.nodes) == 4
        assert cfg.root_redirector == "root"
        assert cfg.cache_configs["cache1"].block_size == 1024

    def test_parent_cycle_names_the_cycle(self):
        doc = {
            "nodes": [
                {"id": "A", "role": "redirector", "lat": 0, "lon": 0, "parent": "B"},
                {"id": "B", "role": "redirector", "lat": 0, "lon": 0, "parent": "A"},
                {"id": "R", "role": "redirector", "lat": 0, "lon": 0},
            ],
            "caches": {},
            "catalog": [],
        }
        with pytest.raises(ValidationError, match="cycle.*A.*B|cycle.*B.*A"):
            parse_deployment(json.dumps(doc))

    def test_out_of_range_latitude(self):
        doc = deployment_doc()
        doc["nodes"][2]["lat"] = 123
        with pytest.raises(ValidationError, match="latitude"):
            parse_deployment(json.dumps(doc))

    def test_missing_geo(self):
        doc = deployment_doc()
        del doc["nodes"][3]["lat"]
        with pytest.raises(ValidationError, match="GeoPoint"):
            parse_deployment(json.dumps(doc))

    def test_duplicate_node_id(self):
        doc = deployment_doc()
        doc["nodes"].append(dict(doc["nodes"][2]))
        with pytest.raises(ValidationError, match="duplicate"):
            parse_deployment(json.dumps(doc))

    def test_unknown_field_rejected(self):
        doc = deployment_doc()
        doc["nodes"][0]["color"] = "red"
        with pytest.raises(ParseError, match="unknown"):
            parse_deployment(json.dumps(doc))
        doc = deployment_doc()
        doc["extra"] = 1
        with pytest.raises(ParseError, match="unknown"):
            parse_deployment(json.dumps(doc))

    def test_two_roots_rejected(self):
        doc = deployment_doc()
        doc["nodes"].append({"id": "root2", "role": "redirector", "lat": 1, "lon": 1})
        with pytest.raises(ValidationError, match="exactly one root"):
            parse_deployment(json.dumps(doc))

    def test_origin_without_parent_rejected(self):
        doc = deployment_doc()
        del doc["nodes"][0]["parent"]
        with pytest.raises(ValidationError, match="origin"):
            parse_deployment(json.dumps(doc))

    def test_cache_without_config_rejected(self):
        doc = deployment_doc()
        doc["caches"] = {}
        with pytest.raises(ValidationError, match="without configuration"):
            parse_deployment(json.dumps(doc))

    def test_catalog_duplicate_path(self):
        doc = deployment_doc(
            catalog=[
                {"path": "/ns/f", "size": 10, "seed": 1, "origin": "origin1"},
                {"path": "/ns/f", "size": 20, "seed": 2, "origin": "origin1"},
            ]
        )
        with pytest.raises(ValidationError, match="duplicate catalog"):
            parse_deployment(json.dumps(doc))

    def test_catalog_origin_must_be_origin_node(self):
        doc = deployment_doc(catalog=[{"path": "/ns/f", "size": 10, "seed": 1, "origin": "root"}])
        with pytest.raises(ValidationError, match="origin"):
            parse_deployment(json.dumps(doc))

    def test_malformed_json_is_parse_error(self):
        with pytest.raises(ParseError):
            parse_deployment("{nope")


_names = st.lists(
    st.text(alphabet="abcdefgh", min_size=1, max_size=4), min_size=1, max_size=8, unique=True
)


@st.composite
def deployments(draw):
    cache_names = draw(_names)
    client_names = [f"cl.{n}" for n in draw(_names)]
    coord = st.floats(min_value=-89.0, max_value=89.0, allow_nan=False)
    caches = [(f"ca.{n}", draw(coord), draw(coord)) for n in cache_names]
    clients = [(n, draw(coord), draw(coord)) for n in client_names]
    catalog = [
        {"path": f"/ns/f{i}", "size": draw(st.integers(0, 10_000)), "seed": draw(st.integers(0, 2**64 - 1)), "origin": "origin1"}
        for i in range(draw(st.integers(0, 4)))
    ]
    block = draw(st.sampled_from([1024, 4096]))
    return deployment_doc(
        caches=caches,
        clients=clients,
        catalog=catalog,
        block_size=block,
        capacity_bytes=block * draw(st.integers(4, 64)),
    )


class TestRoundTrip:
    @given(doc=deployments())
    @settings(max_examples=40)
    def test_parse_serialize_is_identity(self, doc):
        cfg = parse_deployment(json.dumps(doc))
        assert parse_deployment(serialize_deployment(cfg)) == cfg
