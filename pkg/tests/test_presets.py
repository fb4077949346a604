"""Named method presets: the element table, adjusted variants, serialization,
and config hashing."""

import pytest

from protoed import ConfigError, MethodConfig, PRESETS, config_hash, method_preset


# The full element table, frozen: (source, aggregation, distance, transfer,
# crf, cl_mode, tau). Any drift in a preset is a behavior change and must
# show up here.
EXPECTED = {
    "fine-tuning": ("none", None, "S", "I", "none", "none", None),
    "protonet": ("mentions", "feature", "EU", "I", "none", "none", None),
    "protonet-adj": ("mentions", "feature", "SEU", "N", "none", "none", 0.2),
    "l-tapnet-cdt": ("both", "feature", "SS", "DN", "cdt", "none", 0.2),
    "l-tapnet-cdt-adj": ("both", "feature", "SEU", "N", "cdt", "none", 0.2),
    "pa-crf": ("mentions", "feature", "S", "N", "pa", "none", None),
    "container": ("mentions", "score", "KL", "R", "cdt", "inbatch", None),
    "container-adj": ("mentions", "score", "SS", "N", "cdt", "inbatch", 0.2),
    "fsls": ("label", None, "S", "I", "none", "none", None),
    "fsls-adj": ("label", None, "SS", "N", "none", "none", 0.2),
    "unified-baseline": ("both", "score+loss", "SS", "N", "none", "auto", 0.2),
}


class TestPresetTable:
    def test_exactly_these_presets_exist(self):
        assert set(PRESETS) == set(EXPECTED)

    @pytest.mark.parametrize("name", sorted(EXPECTED))
    def test_element_row(self, name):
        cfg = method_preset(name)
        assert cfg.name == name
        row = (
            cfg.prototype_source,
            cfg.aggregation,
            cfg.distance,
            cfg.transfer,
            cfg.crf,
            cfg.cl_mode,
            cfg.tau,
        )
        assert row == EXPECTED[name]

    def test_adjusted_keeps_other_elements(self):
        base = method_preset("container")
        adj = method_preset("container-adj")
        assert adj.crf == base.crf == "cdt"
        assert adj.cl_mode == base.cl_mode == "inbatch"
        assert adj.prototype_source == base.prototype_source
        assert adj.aggregation == base.aggregation

    def test_unknown_name_lists_presets(self):
        with pytest.raises(ConfigError, match="protonet.*unified-baseline"):
            method_preset("bert")


class TestMethodConfig:
    def test_round_trip_through_dict(self):
        for name in EXPECTED:
            cfg = method_preset(name)
            assert MethodConfig.from_dict(cfg.to_dict()) == cfg

    def test_missing_aggregation_serializes_as_dash(self):
        d = method_preset("fsls").to_dict()
        assert d["aggregation"] == "-"

    def test_from_dict_defaults(self):
        cfg = MethodConfig.from_dict(
            {"name": "x", "prototype_source": "label", "aggregation": "-",
             "distance": "S", "transfer": "I"}
        )
        assert cfg.crf == "none" and cfg.cl_mode == "none" and cfg.tau is None

    def test_adjusted_builder(self):
        adj = method_preset("protonet").adjusted("SEU", "N")
        assert adj.name == "protonet-adj"
        assert (adj.distance, adj.transfer, adj.tau) == ("SEU", "N", 0.2)
        unscaled = method_preset("protonet").adjusted("EU", "N")
        assert unscaled.tau is None

    def test_estimator_kwargs_fill_defaults(self):
        kwargs = method_preset("fsls").estimator_kwargs()
        assert kwargs["aggregation"] == "feature"  # placeholder for a no-mention method
        assert kwargs["tau"] == 0.2
        kwargs = method_preset("l-tapnet-cdt").estimator_kwargs()
        assert kwargs == {
            "prototype_source": "both",
            "aggregation": "feature",
            "distance": "SS",
            "transfer": "DN",
            "tau": 0.2,
            "crf": "cdt",
            "cl_mode": "none",
        }

    def test_scaled_distance_requires_tau(self):
        with pytest.raises(ConfigError):
            MethodConfig("x", "mentions", "feature", "SS", "N")
        with pytest.raises(ConfigError):
            MethodConfig("x", "mentions", "feature", "EU", "N", tau=0.2)

    def test_cl_requires_mentions(self):
        with pytest.raises(ConfigError):
            MethodConfig("x", "label", None, "S", "I", cl_mode="inbatch")

    def test_mention_source_requires_aggregation(self):
        with pytest.raises(ConfigError):
            MethodConfig("x", "mentions", None, "S", "I")

    def test_unknown_elements_rejected(self):
        with pytest.raises(ConfigError):
            MethodConfig("x", "tokens", "feature", "S", "I")
        with pytest.raises(ConfigError):
            MethodConfig("x", "mentions", "maxpool", "S", "I")
        with pytest.raises(ConfigError):
            MethodConfig("x", "mentions", "feature", "S", "I", crf="semi")
        with pytest.raises(ConfigError):
            MethodConfig("x", "mentions", "feature", "S", "I", cl_mode="simclr")


class TestConfigHash:
    def test_stable_and_key_order_independent(self):
        a = config_hash({"b": 1, "a": [1, 2]})
        b = config_hash({"a": [1, 2], "b": 1})
        assert a == b
        assert len(a) == 12
        assert a == config_hash({"b": 1, "a": [1, 2]})

    def test_value_changes_hash(self):
        assert config_hash({"a": 1}) != config_hash({"a": 2})

    def test_handles_non_json_values(self):
        # Falls back to str() for exotic values instead of failing.
        config_hash({"path": object()})
