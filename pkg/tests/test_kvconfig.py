"""Parser/formatter checks for the text config format."""
import pytest

from trafficdiff.kvconfig import (
    EnumSymbol,
    ParseError,
    all_of,
    first,
    format_text,
    parse_text,
)


class TestParse:
    def test_scalars(self):
        msg = parse_text('a: 3 b: -2.5 c: "hi" d: SYMBOL e: 1e-3')
        assert msg["a"] == [3]
        assert isinstance(msg["a"][0], int)
        assert msg["b"] == [-2.5]
        assert msg["c"] == ["hi"]
        assert msg["d"] == ["SYMBOL"]
        assert isinstance(msg["d"][0], EnumSymbol)
        assert msg["e"] == [1e-3]
        assert isinstance(msg["e"][0], float)

    def test_nested_messages(self):
        msg = parse_text("outer { inner { x: 1 } y: 2 }")
        assert msg["outer"][0]["inner"][0]["x"] == [1]
        assert msg["outer"][0]["y"] == [2]

    def test_colon_before_brace_allowed(self):
        assert parse_text("m: { x: 1 }") == parse_text("m { x: 1 }")

    def test_repeated_fields_collect_in_order(self):
        msg = parse_text("p { v: 1 } p { v: 2 } p { v: 3 }")
        assert [first(p, "v") for p in msg["p"]] == [1, 2, 3]

    def test_comments_and_whitespace(self):
        msg = parse_text("# leading\na: 1  # trailing\n\n  b: 2\n")
        assert msg == {"a": [1], "b": [2]}

    def test_string_escapes(self):
        msg = parse_text(r'name: "say \"hi\" \\ there"')
        assert msg["name"][0] == 'say "hi" \\ there'

    def test_empty_input_and_empty_message(self):
        assert parse_text("") == {}
        assert parse_text("m { }") == {"m": [{}]}


class TestParseErrors:
    @pytest.mark.parametrize(
        "text",
        [
            "a: 1 }",            # unmatched close
            "m { a: 1",          # missing close
            "a:",                # missing value
            "a",                 # dangling field
            "a = 1",             # bad character
            "a: $",              # bad character in value position
            ": 3",               # value without a name
            "a: 1 2",            # stray token
        ],
    )
    def test_malformed(self, text):
        with pytest.raises(ParseError):
            parse_text(text)


class TestFormat:
    def test_canonical_output(self):
        msg = {
            "agent": [{"type": ["car"], "id": [4]}],
            "kind": [EnumSymbol("RANGE")],
            "scale": [2.5],
        }
        out = format_text(msg)
        assert out == (
            "agent {\n"
            '  type: "car"\n'
            "  id: 4\n"
            "}\n"
            "kind: RANGE\n"
            "scale: 2.5\n"
        )

    def test_round_trip(self):
        text = (
            'agent { type: "car" control_point { time_step: 0 x: 12.0 } }\n'
            "hard_constraint { kind: NON_COLLISION }\n"
        )
        msg = parse_text(text)
        again = parse_text(format_text(msg))
        assert again == msg
        # canonical form is a fixed point
        assert format_text(again) == format_text(msg)

    def test_bool_and_escape_formatting(self):
        assert format_text({"on": [True], "off": [False]}) == "on: true\noff: false\n"
        txt = format_text({"s": ['a"b\\c']})
        assert parse_text(txt)["s"][0] == 'a"b\\c'

    def test_unformattable_value(self):
        with pytest.raises(TypeError):
            format_text({"x": [object()]})


class TestAccessors:
    def test_first_and_all_of(self):
        msg = parse_text("v: 1 v: 2")
        assert first(msg, "v") == 1
        assert first(msg, "missing") is None
        assert first(msg, "missing", 7) == 7
        assert all_of(msg, "v") == [1, 2]
        assert all_of(msg, "missing") == []
