"""Vocabulary and integer/array tokenizers.

Mathematical objects travel through the system as sequences of token
strings.  Plain integers are written positionally (sign token, then
digits in a configurable base, most significant first) or symbolically
(one token per value from a finite range).  Integer arrays are written
as dimension-prefix tokens followed by their row-major elements.

Parsers take (seq, spec, pos) and return (value, next_pos) so that
several objects can be read back-to-back from one sequence: a sign or
dimension token unambiguously starts a new object.
"""

from .errors import MalformedSequence, OutOfRange, UnknownId, UnknownToken

PAD_TOKEN = "<pad>"
SEQ_TOKEN = "<s>"  # marks both start and end of output sequences
UNK_TOKEN = "<unk>"

SIGN_TOKENS = ["+", "-"]
SEPARATOR_TOKENS = ["<sep>", "(", ")"]
SPECIAL_TOKENS = ["<SPECIAL_%d>" % i for i in range(10)]


def _is_digit_token(tok, base):
    """True if tok is a canonical base-`base` digit token ("0".."base-1")."""
    if not (tok.isascii() and tok.isdigit()):
        return False
    if str(int(tok)) != tok:  # "01" is not a token, only "1" is
        return False
    return int(tok) < base


class PositionalIntSpec:
    """Integers as sign + digits in a given base, most significant first."""

    def __init__(self, base):
        if base < 2:
            raise OutOfRange("positional base must be >= 2, got %s" % base)
        self.base = base

    def vocabulary_tokens(self):
        return SIGN_TOKENS + [str(d) for d in range(self.base)]


class SymbolicIntSpec:
    """Integers from [min, max] as single tokens prefix + decimal value."""

    def __init__(self, min_value, max_value, prefix=""):
        if min_value > max_value:
            raise OutOfRange(
                "symbolic range requires min <= max, got [%s, %s]"
                % (min_value, max_value)
            )
        self.min = min_value
        self.max = max_value
        self.prefix = prefix

    def vocabulary_tokens(self):
        return [self.prefix + str(v) for v in range(self.min, self.max + 1)]


class NumberArraySpec:
    """Integer vectors/matrices: dimension tokens, then row-major elements.

    code selects the element encoding: "positional" (alias "pos_int")
    or "symbolic"; element_spec must be the matching spec object.
    """

    def __init__(self, max_dim, dim_prefix, tensor_dim, code, element_spec):
        if max_dim < 1:
            raise OutOfRange("max_dim must be >= 1, got %s" % max_dim)
        if tensor_dim not in (1, 2):
            raise OutOfRange("tensor_dim must be 1 or 2, got %s" % tensor_dim)
        if code == "pos_int":
            code = "positional"
        if code not in ("positional", "symbolic"):
            raise OutOfRange("unknown element code %r" % (code,))
        self.max_dim = max_dim
        self.dim_prefix = dim_prefix
        self.tensor_dim = tensor_dim
        self.code = code
        self.element_spec = element_spec

    def vocabulary_tokens(self):
        dims = [self.dim_prefix + str(d) for d in range(1, self.max_dim + 1)]
        return dims + self.element_spec.vocabulary_tokens()


def encode_positional_int(v, spec):
    """Encode an integer as [sign, digit, digit, ...], MSB first."""
    sign = "+" if v >= 0 else "-"
    v = abs(v)
    digits = []
    while True:
        v, r = divmod(v, spec.base)
        digits.append(str(r))
        if v == 0:
            break
    return [sign] + digits[::-1]


def parse_positional_int(seq, spec, pos=0):
    """Read one positional integer starting at pos; return (value, next_pos).

    Consumes the sign and the longest run of digit tokens after it.
    Rejects empty digit runs and multi-digit runs starting with "0",
    so parsing is a strict inverse of encode_positional_int.
    """
    if pos >= len(seq):
        raise MalformedSequence("expected sign token, found end of sequence")
    sign_tok = seq[pos]
    if sign_tok not in ("+", "-"):
        raise MalformedSequence("expected sign token, found %r" % (sign_tok,))
    pos += 1
    start = pos
    while pos < len(seq) and _is_digit_token(seq[pos], spec.base):
        pos += 1
    if pos == start:
        raise MalformedSequence("sign token not followed by any digit")
    if pos - start > 1 and seq[start] == "0":
        raise MalformedSequence("leading zero in multi-digit integer")
    value = 0
    for tok in seq[start:pos]:
        value = value * spec.base + int(tok)
    if sign_tok == "-":
        value = -value
    return value, pos


def encode_symbolic_int(v, spec):
    """Encode an in-range integer as the single token prefix + decimal."""
    if not spec.min <= v <= spec.max:
        raise OutOfRange(
            "%s outside symbolic range [%s, %s]" % (v, spec.min, spec.max)
        )
    return [spec.prefix + str(v)]


def parse_symbolic_int(seq, spec, pos=0):
    """Read one symbolic integer token at pos; return (value, next_pos)."""
    if pos >= len(seq):
        raise MalformedSequence("expected symbolic token, found end of sequence")
    tok = seq[pos]
    if not tok.startswith(spec.prefix):
        raise MalformedSequence("token %r lacks prefix %r" % (tok, spec.prefix))
    body = tok[len(spec.prefix):]
    try:
        value = int(body)
    except ValueError:
        raise MalformedSequence("token %r is not a symbolic integer" % (tok,))
    if str(value) != body:  # reject "+3", "03" and other non-canonical forms
        raise MalformedSequence("token %r is not canonical" % (tok,))
    if not spec.min <= value <= spec.max:
        raise MalformedSequence(
            "%s outside symbolic range [%s, %s]" % (value, spec.min, spec.max)
        )
    return value, pos + 1


def _encode_element(v, spec):
    if spec.code == "positional":
        return encode_positional_int(v, spec.element_spec)
    return encode_symbolic_int(v, spec.element_spec)


def _parse_element(seq, spec, pos):
    if spec.code == "positional":
        return parse_positional_int(seq, spec.element_spec, pos)
    return parse_symbolic_int(seq, spec.element_spec, pos)


def encode_number_array(a, spec):
    """Encode a vector (tensor_dim 1) or matrix (tensor_dim 2) of integers."""
    if spec.tensor_dim == 1:
        rows = [list(a)]
        dims = [len(rows[0])]
    else:
        rows = [list(r) for r in a]
        dims = [len(rows), len(rows[0]) if rows else 0]
        if any(len(r) != dims[1] for r in rows):
            raise OutOfRange("ragged matrix rows")
    for d in dims:
        if not 1 <= d <= spec.max_dim:
            raise OutOfRange("dimension %s outside [1, %s]" % (d, spec.max_dim))
    out = [spec.dim_prefix + str(d) for d in dims]
    for row in rows:
        for v in row:
            out.extend(_encode_element(v, spec))
    return out


def parse_number_array(seq, spec, pos=0):
    """Read one encoded array starting at pos; return (array, next_pos).

    Returns a list for tensor_dim 1, a list of row lists for tensor_dim 2.
    """
    dims = []
    for _ in range(spec.tensor_dim):
        if pos >= len(seq):
            raise MalformedSequence("expected dimension token, found end")
        tok = seq[pos]
        body = tok[len(spec.dim_prefix):] if tok.startswith(spec.dim_prefix) else ""
        if not (body.isascii() and body.isdigit() and str(int(body)) == body):
            raise MalformedSequence("unknown dimension token %r" % (tok,))
        d = int(body)
        if not 1 <= d <= spec.max_dim:
            raise MalformedSequence(
                "dimension %s outside [1, %s]" % (d, spec.max_dim)
            )
        dims.append(d)
        pos += 1
    n_elements = 1
    for d in dims:
        n_elements *= d
    values = []
    for _ in range(n_elements):
        try:
            v, pos = _parse_element(seq, spec, pos)
        except MalformedSequence:
            raise MalformedSequence(
                "array declares %s elements but fewer parse" % n_elements
            )
        values.append(v)
    if spec.tensor_dim == 1:
        return values, pos
    cols = dims[1]
    matrix = [values[i * cols:(i + 1) * cols] for i in range(dims[0])]
    return matrix, pos


class Vocabulary:
    """Ordered token list with a token <-> id bijection."""

    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise OutOfRange("duplicate tokens in vocabulary")
        self.pad_id = self.index[PAD_TOKEN]
        self.seq_id = self.index[SEQ_TOKEN]
        self.unk_id = self.index[UNK_TOKEN]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token):
        try:
            return self.index[token]
        except KeyError:
            raise UnknownToken("token %r not in vocabulary" % (token,))

    def token(self, token_id):
        if not 0 <= token_id < len(self.tokens):
            raise UnknownId("id %s not in vocabulary" % (token_id,))
        return self.tokens[token_id]


def build_vocabulary(input_spec, output_spec, base):
    """Assemble the global vocabulary in a fixed deterministic order.

    Order: structural tokens, signs, separators, specials, digits
    0..base-1, then any further tokens declared by the input and output
    specs (each spec lists its tokens in ascending order; duplicates
    keep their first position).
    """
    tokens = [PAD_TOKEN, SEQ_TOKEN, UNK_TOKEN]
    tokens += SIGN_TOKENS + SEPARATOR_TOKENS + SPECIAL_TOKENS
    tokens += [str(d) for d in range(base)]
    for spec in (input_spec, output_spec):
        if spec is not None:
            tokens += spec.vocabulary_tokens()
    seen = set()
    ordered = []
    for tok in tokens:
        if tok not in seen:
            seen.add(tok)
            ordered.append(tok)
    return Vocabulary(ordered)


def tokens_to_ids(seq, vocabulary):
    """Map token strings to integer ids; UnknownToken on any miss."""
    return [vocabulary.id(t) for t in seq]


def ids_to_tokens(ids, vocabulary):
    """Map integer ids back to token strings; UnknownId on any miss."""
    return [vocabulary.token(int(i)) for i in ids]
