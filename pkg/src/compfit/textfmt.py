"""Versioned structured-text dialect for maps, manifests and fit results.

Layout: a magic+version first line, `key = value` header lines, then
repeated `[entry]` blocks of `key = value` lines. Blank lines separate
sections; `#` starts a comment line. Parsing is strict: unknown keys,
duplicate keys and malformed lines are rejected with their line number.
Floats serialise with 17 significant digits so round-trips are exact.
"""


class ParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def fmt_float(v):
    return f"{float(v):.17g}"


def dump_blocks(path, magic, header, entries):
    """Write header dict + entry dicts; values are str/int/float."""
    def render(v):
        if isinstance(v, float):
            return fmt_float(v)
        return str(v)

    lines = [magic]
    for k, v in header.items():
        lines.append(f"{k} = {render(v)}")
    for entry in entries:
        lines.append("")
        lines.append("[entry]")
        for k, v in entry.items():
            lines.append(f"{k} = {render(v)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_blocks(path, magic, header_keys, entry_keys):
    """Parse a file written by dump_blocks.

    header_keys/entry_keys map key -> converter; every key is required
    unless the converter is wrapped in `optional`. Returns
    (header dict, list of entry dicts).
    """
    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0].strip() != magic:
        raise ParseError(path, 1, f"expected header {magic!r}")

    header = {}
    entries = []
    current = header
    keyspec = header_keys
    for lineno, line in enumerate(raw[1:], start=2):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if text == "[entry]":
            current = {}
            entries.append(current)
            keyspec = entry_keys
            continue
        if "=" not in text:
            raise ParseError(path, lineno, f"malformed line {text!r}")
        key, _, value = text.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in keyspec:
            raise ParseError(path, lineno, f"unknown field {key!r}")
        if key in current:
            raise ParseError(path, lineno, f"duplicate field {key!r}")
        try:
            current[key] = keyspec[key](value)
        except ParseError:
            raise
        except Exception as exc:
            raise ParseError(path, lineno, f"bad value for {key!r}: {exc}") from exc

    def check(block, spec, what, lineno):
        missing = [k for k in spec if k not in block and not getattr(spec[k], "optional", False)]
        if missing:
            raise ParseError(path, lineno, f"{what} missing fields: {', '.join(missing)}")

    check(header, header_keys, "header", len(raw))
    for e in entries:
        check(e, entry_keys, "[entry]", len(raw))
    return header, entries


def optional(conv, default=None):
    """Mark an entry key as optional with a default."""

    def wrapped(v):
        return conv(v)

    wrapped.optional = True
    wrapped.default = default
    return wrapped
