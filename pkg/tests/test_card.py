import unittest

from bimm.card import to_markdown_card, to_markdown_table


class CardTests(unittest.TestCase):
    def test_to_markdown_card_basic(self):
        data = {
            "command": "pretrain-joint",
            "taps":    [1, 2, 3],
            "results": {"L_V": 0.25, "shared": True},
        }
        md = to_markdown_card(data)
        self.assertIn("## Command", md)
        self.assertIn("pretrain-joint", md)
        self.assertIn("- 1", md)                  # list item
        self.assertIn("- **L_V**: 0.25", md)      # nested mapping rendered
        self.assertIn("- **shared**: true", md)

    def test_to_markdown_card_with_empty_values(self):
        data = {
            "command":    "gradcheck",
            "empty_list": [],
            "empty_dict": {},
            "none_value": None,
        }
        md = to_markdown_card(data)
        self.assertIn("## Empty List", md)
        self.assertIn("## Empty Dict", md)
        self.assertIn("## None Value\nnull", md)

    def test_to_markdown_card_with_nested_structures(self):
        data = {
            "taps": [
                {"tap": 1, "kind": "gabor"},
                {"tap": 3, "kind": "motion"},
            ],
        }
        md = to_markdown_card(data)
        # nested objects in a list are stringified
        self.assertIn("- {'tap': 1, 'kind': 'gabor'}", md)
        self.assertIn("- {'tap': 3, 'kind': 'motion'}", md)

    def test_to_markdown_card_empty_input(self):
        self.assertEqual(to_markdown_card({}).strip(), "")

    def test_to_markdown_card_heading_level(self):
        md = to_markdown_card({"Test": "Value"}, heading_level=4)
        self.assertIn("#### Test", md)

    def test_to_markdown_card_nested_list_flattening(self):
        md = to_markdown_card({"shape": [[64, 128], [64]]})
        self.assertIn("- 64, 128", md)
        self.assertIn("- 64", md)

    def test_float_formatting(self):
        md = to_markdown_card({"acc": 0.123456789, "loss": float("nan")})
        self.assertIn("0.123457", md)
        self.assertIn("nan", md)


class TableTests(unittest.TestCase):
    def test_rows_and_columns(self):
        rows = [{"value": "0.5", "test_acc": 0.75}, {"value": "0.9", "test_acc": None}]
        md = to_markdown_table(rows).splitlines()
        self.assertEqual(md[0], "| value | test_acc |")
        self.assertEqual(md[1], "| --- | --- |")
        self.assertEqual(md[2], "| 0.5 | 0.75 |")
        self.assertEqual(md[3], "| 0.9 | null |")

    def test_explicit_columns_and_pipes(self):
        md = to_markdown_table([{"a": "x|y", "b": 1}], columns=["b", "a"])
        self.assertIn("| 1 | x\\|y |", md)

    def test_empty(self):
        self.assertEqual(to_markdown_table([]), "")
