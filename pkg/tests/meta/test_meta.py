import copy
import unittest
from unittest.mock import patch

from bimm import config, loader, validator
from bimm.errors import ConfigError

BUNDLED = ("config_schema.json", "run_manifest_schema.json")


class MetaSchemaTests(unittest.TestCase):
    def setUp(self):
        self.config_schema = loader.load_schema("config_schema.json")
        self.meta_schema = loader.load_schema("schema_meta.json")

    # ------------------------------------------------------------------ #
    # Happy path                                                         #
    # ------------------------------------------------------------------ #
    def test_bundled_schemas_are_valid_against_meta_schema(self):
        for name in BUNDLED:
            with self.subTest(schema=name):
                validator.validate(loader.load_schema(name), schema=self.meta_schema)

    def test_presets_satisfy_config_schema(self):
        for name in loader.PRESETS:
            with self.subTest(preset=name):
                raw = validator.inject_defaults(loader.load_preset(name), schema=self.config_schema)
                validator.validate(raw, schema=self.config_schema)

    def test_every_config_leaf_has_a_default(self):
        def leaves(schema, prefix=""):
            for name, spec in schema["fields"].items():
                if "fields" in spec:
                    yield from leaves(spec, f"{prefix}{name}.")
                else:
                    yield f"{prefix}{name}", spec

        missing = [name for name, spec in leaves(self.config_schema) if "default" not in spec]
        self.assertEqual(missing, [])

    # ------------------------------------------------------------------ #
    # Negative paths                                                     #
    # ------------------------------------------------------------------ #
    def test_missing_required_key_fails_meta_validation(self):
        bad = copy.deepcopy(self.config_schema)
        bad.pop("title")
        with patch.object(config.loader, "load_schema", side_effect=lambda n: bad if n == config.SCHEMA_NAME else self.meta_schema):
            with self.assertRaisesRegex(ConfigError, "schema_meta"):
                config.load_config_schema()

    def test_bad_type_for_top_level_key_fails(self):
        bad = copy.deepcopy(self.config_schema)
        bad["version"] = 1.2  # Should be a string
        with self.assertRaises(validator.SchemaError):
            validator.validate(bad, schema=self.meta_schema)

    def test_field_names_are_snake_case(self):
        bad = copy.deepcopy(self.config_schema)
        bad["fields"]["Seed"] = bad["fields"].pop("seed")
        with self.assertRaisesRegex(validator.SchemaError, "propertyNamesPattern"):
            validator.validate(bad, schema=self.meta_schema)

    def test_empty_fields_rejected(self):
        bad = copy.deepcopy(self.config_schema)
        bad["fields"] = {}
        with self.assertRaisesRegex(validator.SchemaError, "minProperties"):
            validator.validate(bad, schema=self.meta_schema)


if __name__ == "__main__":
    unittest.main()
