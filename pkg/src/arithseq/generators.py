"""Problem generators, exact solvers and prediction verifiers.

Each supported operation is a task object that knows how to sample a
(problem, solution) pair from an RngStream, encode both sides to token
sequences, parse a predicted sequence back into an object, verify a
prediction, and assign an evaluation class for per-class accuracies.

Solvers use exact integer arithmetic throughout: Euclid for gcd,
lowest-terms fractions, and fraction-free (Bareiss) elimination for
matrix rank.  No floating point, no tolerance parameters.
"""

from .errors import ConfigError, DegenerateInput, MalformedSequence
from .rng import RngStream, init_rng  # noqa: F401  (re-exported)
from .vocab import (
    NumberArraySpec,
    PositionalIntSpec,
    encode_number_array,
    encode_positional_int,
    parse_number_array,
    parse_positional_int,
)

MAX_GENERATE_RETRIES = 1000


class TaskSpec:
    """Parameters shared by all operations.

    Operand bounds default to [1, 10^6]; modular tasks reduce modulo 67
    unless told otherwise; matrices default to 4 x 4 with entries in
    [-max_int, max_int].
    """

    def __init__(self, operation, min_int=1, max_int=10**6, modulo=67,
                 base=1000, dim1=4, dim2=4, max_class=100,
                 n_eval_metrics=0, n_error_metrics=0):
        if min_int > max_int:
            raise ConfigError("min_int must be <= max_int")
        if modulo < 2:
            raise ConfigError("modulo must be >= 2")
        if dim1 < 1 or dim2 < 1:
            raise ConfigError("matrix dimensions must be >= 1")
        self.operation = operation
        self.min_int = min_int
        self.max_int = max_int
        self.modulo = modulo
        self.base = base
        self.dim1 = dim1
        self.dim2 = dim2
        self.max_class = max_class
        self.n_eval_metrics = n_eval_metrics
        self.n_error_metrics = n_error_metrics


class Fraction:
    """An exact fraction num/den; den is never zero."""

    def __init__(self, num, den):
        if den == 0:
            raise DegenerateInput("zero denominator")
        self.num = int(num)
        self.den = int(den)

    def __eq__(self, other):
        return (isinstance(other, Fraction)
                and self.num == other.num and self.den == other.den)

    def __hash__(self):
        return hash((self.num, self.den))

    def __repr__(self):
        return "Fraction(%d, %d)" % (self.num, self.den)


class IntMatrix:
    """A rows x cols integer matrix stored row-major."""

    def __init__(self, rows, cols, entries):
        entries = [int(e) for e in entries]
        if rows < 1 or cols < 1:
            raise DegenerateInput("matrix dimensions must be >= 1")
        if len(entries) != rows * cols:
            raise DegenerateInput("expected %d entries, got %d"
                                  % (rows * cols, len(entries)))
        self.rows = rows
        self.cols = cols
        self.entries = entries

    def row_lists(self):
        c = self.cols
        return [self.entries[i * c:(i + 1) * c] for i in range(self.rows)]

    def __eq__(self, other):
        return (isinstance(other, IntMatrix) and self.rows == other.rows
                and self.cols == other.cols and self.entries == other.entries)

    def __repr__(self):
        return "IntMatrix(%d, %d, %r)" % (self.rows, self.cols, self.entries)


def solve_gcd(a, b):
    """Greatest common divisor of |a| and |b| by the Euclidean algorithm."""
    a, b = abs(int(a)), abs(int(b))
    if a == 0 and b == 0:
        raise DegenerateInput("gcd(0, 0) is undefined")
    while b != 0:
        a, b = b, a % b
    return a


def solve_modular(op, a, b, m):
    """(a op b) mod m with the canonical nonnegative residue."""
    if m < 2:
        raise DegenerateInput("modulus must be >= 2")
    if op == "add":
        return ((a % m) + (b % m)) % m
    if op == "mul":
        return ((a % m) * (b % m)) % m
    raise DegenerateInput("unknown modular operation %r" % (op,))


def _lowest_terms(num, den):
    if den == 0:
        raise DegenerateInput("zero denominator")
    if den < 0:
        num, den = -num, -den
    if num == 0:
        return Fraction(0, 1)
    g = solve_gcd(num, den)
    return Fraction(num // g, den // g)


def solve_fraction(op, f1, f2=None):
    """Exact fraction operations.

    add/product/simplify return a lowest-terms Fraction with positive
    denominator; compare returns 1 if f1 > f2 else 0; determinant
    returns a*d - b*c for f1 = a/b, f2 = c/d; round returns floor(a/b)
    and requires a > b > 0.
    """
    if f1.den == 0 or (f2 is not None and f2.den == 0):
        raise DegenerateInput("zero denominator")
    if op == "add":
        return _lowest_terms(f1.num * f2.den + f2.num * f1.den,
                             f1.den * f2.den)
    if op == "product":
        return _lowest_terms(f1.num * f2.num, f1.den * f2.den)
    if op == "simplify":
        return _lowest_terms(f1.num, f1.den)
    if op == "compare":
        lhs = f1.num * abs(f2.den) * (1 if f1.den > 0 else -1)
        rhs = f2.num * abs(f1.den) * (1 if f2.den > 0 else -1)
        return 1 if lhs > rhs else 0
    if op == "determinant":
        return f1.num * f2.den - f1.den * f2.num
    if op == "round":
        a, b = f1.num, f1.den
        if not a > b > 0:
            raise DegenerateInput("round requires a > b > 0")
        return a // b
    raise DegenerateInput("unknown fraction operation %r" % (op,))


def solve_matrix_rank(matrix):
    """Exact rank by fraction-free Gaussian elimination (Bareiss).

    All arithmetic stays in the integers; the division in the update
    rule is exact, so the result carries no floating-point tolerance.
    """
    rows = [list(r) for r in matrix.row_lists()]
    n_rows, n_cols = matrix.rows, matrix.cols
    rank = 0
    prev_pivot = 1
    for col in range(n_cols):
        pivot_row = None
        for r in range(rank, n_rows):
            if rows[r][col] != 0:
                pivot_row = r
                break
        if pivot_row is None:
            continue
        rows[rank], rows[pivot_row] = rows[pivot_row], rows[rank]
        pivot = rows[rank][col]
        for r in range(rank + 1, n_rows):
            factor = rows[r][col]
            for c in range(col + 1, n_cols):
                rows[r][c] = (pivot * rows[r][c] - factor * rows[rank][c]) // prev_pivot
            rows[r][col] = 0
        prev_pivot = pivot
        rank += 1
        if rank == n_rows:
            break
    return rank


def _parse_int_list(tokens, spec, count):
    """Parse exactly count positional ints consuming the whole sequence."""
    values = []
    pos = 0
    for _ in range(count):
        v, pos = parse_positional_int(tokens, spec, pos)
        values.append(v)
    if pos != len(tokens):
        raise MalformedSequence("trailing tokens after expected object")
    return values


class Task:
    """Base class: holds the TaskSpec and the token spec for integers."""

    def __init__(self, spec):
        self.spec = spec
        self.int_spec = PositionalIntSpec(spec.base)

    # vocabulary construction hooks; most tasks only use plain integers
    def input_spec(self):
        return self.int_spec

    def output_spec(self):
        return self.int_spec

    def sample(self, rng, split="train"):
        raise NotImplementedError

    def encode_input(self, problem):
        raise NotImplementedError

    def encode_output(self, solution):
        raise NotImplementedError

    def parse_output(self, tokens):
        raise NotImplementedError

    def evaluate(self, problem, solution, predicted):
        """Base verdict plus optional eval/error metric lists.

        Solutions of the built-in tasks have unique encodings, so a
        non-perfect but well-formed prediction is correct only if it
        decodes to the very same object (which cannot happen here);
        object equality implements that contract directly.
        """
        base = 1 if predicted == solution else 0
        evals = [self._eval_metric(i, solution, predicted)
                 for i in range(self.spec.n_eval_metrics)]
        errors = [self._error_metric(i, solution, predicted)
                  for i in range(self.spec.n_error_metrics)]
        return base, evals, errors

    def _first_int(self, obj):
        if isinstance(obj, Fraction):
            return obj.num
        if isinstance(obj, IntMatrix):
            return obj.entries[0] if obj.entries else 0
        if isinstance(obj, (list, tuple)):
            return self._first_int(obj[0]) if len(obj) else 0
        return int(obj)

    def _eval_metric(self, i, solution, predicted):
        # metric 0: closeness of the leading integer within 10%
        if i == 0:
            t = self._first_int(solution)
            p = self._first_int(predicted)
            return 1.0 if abs(p - t) <= 0.1 * max(1, abs(t)) else 0.0
        return 0.0

    def _error_metric(self, i, solution, predicted):
        # metric 0: sign mismatch of the leading integer
        if i == 0:
            t = self._first_int(solution)
            p = self._first_int(predicted)
            return 1.0 if (t >= 0) != (p >= 0) else 0.0
        return 0.0

    def code_class(self, problem, solution):
        return None


class GcdTask(Task):
    operation = "gcd"

    def sample(self, rng, split="train"):
        a = int(rng.integers(self.spec.min_int, self.spec.max_int + 1))
        b = int(rng.integers(self.spec.min_int, self.spec.max_int + 1))
        if a == 0 and b == 0:
            return None
        return (a, b), solve_gcd(a, b)

    def encode_input(self, problem):
        a, b = problem
        return (encode_positional_int(a, self.int_spec)
                + encode_positional_int(b, self.int_spec))

    def encode_output(self, solution):
        return encode_positional_int(solution, self.int_spec)

    def parse_output(self, tokens):
        return _parse_int_list(tokens, self.int_spec, 1)[0]

    def code_class(self, problem, solution):
        return min(int(solution), self.spec.max_class)


class ModularTask(Task):
    def __init__(self, spec, op):
        super().__init__(spec)
        self.op = op
        self.operation = "modular_" + op

    def sample(self, rng, split="train"):
        a = int(rng.integers(self.spec.min_int, self.spec.max_int + 1))
        b = int(rng.integers(self.spec.min_int, self.spec.max_int + 1))
        return (a, b), solve_modular(self.op, a, b, self.spec.modulo)

    def encode_input(self, problem):
        a, b = problem
        return (encode_positional_int(a, self.int_spec)
                + encode_positional_int(b, self.int_spec))

    def encode_output(self, solution):
        return encode_positional_int(solution, self.int_spec)

    def parse_output(self, tokens):
        return _parse_int_list(tokens, self.int_spec, 1)[0]

    def code_class(self, problem, solution):
        result = int(solution)
        return result if result <= self.spec.max_class else None


class FractionTask(Task):
    """The six fraction operations, selected by op."""

    TWO_OPERAND = ("add", "product", "compare", "determinant")

    def __init__(self, spec, op):
        super().__init__(spec)
        self.op = op
        self.operation = "fraction_" + op
        self.low = max(1, spec.min_int)

    def _draw(self, rng):
        return int(rng.integers(self.low, self.spec.max_int + 1))

    def sample(self, rng, split="train"):
        a, b = self._draw(rng), self._draw(rng)
        if self.op == "round" and a <= b:
            return None
        f1 = Fraction(a, b)
        if self.op in self.TWO_OPERAND:
            f2 = Fraction(self._draw(rng), self._draw(rng))
            return (f1, f2), solve_fraction(self.op, f1, f2)
        return (f1,), solve_fraction(self.op, f1)

    def encode_input(self, problem):
        tokens = []
        for f in problem:
            tokens += encode_positional_int(f.num, self.int_spec)
            tokens += encode_positional_int(f.den, self.int_spec)
        return tokens

    def encode_output(self, solution):
        if isinstance(solution, Fraction):
            return (encode_positional_int(solution.num, self.int_spec)
                    + encode_positional_int(solution.den, self.int_spec))
        return encode_positional_int(solution, self.int_spec)

    def parse_output(self, tokens):
        if self.op in ("add", "product", "simplify"):
            num, den = _parse_int_list(tokens, self.int_spec, 2)
            if den == 0:
                raise MalformedSequence("fraction with zero denominator")
            return Fraction(num, den)
        return _parse_int_list(tokens, self.int_spec, 1)[0]

    def code_class(self, problem, solution):
        if self.op == "compare":
            return int(solution)
        return None


class MatrixRankTask(Task):
    operation = "matrix_rank"

    def __init__(self, spec):
        super().__init__(spec)
        max_dim = max(spec.dim1, spec.dim2)
        self.array_spec = NumberArraySpec(
            max_dim=max(max_dim, 1), dim_prefix="V", tensor_dim=2,
            code="positional", element_spec=self.int_spec)

    def input_spec(self):
        return self.array_spec

    def sample(self, rng, split="train"):
        n = self.spec.dim1 * self.spec.dim2
        entries = [int(rng.integers(-self.spec.max_int, self.spec.max_int + 1))
                   for _ in range(n)]
        matrix = IntMatrix(self.spec.dim1, self.spec.dim2, entries)
        return matrix, solve_matrix_rank(matrix)

    def encode_input(self, problem):
        return encode_number_array(problem.row_lists(), self.array_spec)

    def encode_output(self, solution):
        return encode_positional_int(solution, self.int_spec)

    def parse_output(self, tokens):
        return _parse_int_list(tokens, self.int_spec, 1)[0]

    def code_class(self, problem, solution):
        return min(int(solution), self.spec.max_class)


class DataTask(Task):
    """File-backed training: sequences are compared as-is.

    There is no sampler and no object-level parser; any prediction made
    of vocabulary tokens is well-formed, and verification is exact
    sequence comparison against the reference output.
    """

    operation = "data"

    def sample(self, rng, split="train"):
        raise ConfigError("the data operation has no generator; "
                          "provide --train_data/--eval_data files")

    def encode_input(self, problem):
        return list(problem)

    def encode_output(self, solution):
        return list(solution)

    def parse_output(self, tokens):
        if not tokens:
            raise MalformedSequence("empty prediction")
        return list(tokens)

    def evaluate(self, problem, solution, predicted):
        base = 1 if list(predicted) == list(solution) else 0
        evals = [0.0] * self.spec.n_eval_metrics
        errors = [0.0] * self.spec.n_error_metrics
        return base, evals, errors

    def code_class(self, problem, solution):
        # single small integer outputs (with or without sign) get a class
        tokens = list(solution)
        value = None
        if len(tokens) == 1 and tokens[0].isascii() and tokens[0].isdigit():
            value = int(tokens[0])
        else:
            try:
                v, pos = parse_positional_int(tokens, self.int_spec, 0)
                if pos == len(tokens):
                    value = v
            except MalformedSequence:
                value = None
        if value is None or not 0 <= value <= self.spec.max_class:
            return None
        return value


OPERATIONS = (
    "gcd", "modular_add", "modular_mul",
    "fraction_add", "fraction_product", "fraction_simplify",
    "fraction_compare", "fraction_determinant", "fraction_round",
    "matrix_rank", "data",
)


def make_task(spec):
    """Instantiate the task object for spec.operation."""
    op = spec.operation
    if op == "gcd":
        return GcdTask(spec)
    if op in ("modular_add", "modular_mul"):
        return ModularTask(spec, op[len("modular_"):])
    if op.startswith("fraction_"):
        sub = op[len("fraction_"):]
        if sub in ("add", "product", "simplify", "compare",
                   "determinant", "round"):
            return FractionTask(spec, sub)
    if op == "matrix_rank":
        return MatrixRankTask(spec)
    if op == "data":
        return DataTask(spec)
    raise ConfigError("unknown operation %r (choose from %s)"
                      % (op, ", ".join(OPERATIONS)))


def generate(task, rng, split="train"):
    """Draw one valid (problem, solution) pair, retrying failed draws."""
    for _ in range(MAX_GENERATE_RETRIES):
        try:
            pair = task.sample(rng, split)
        except DegenerateInput:
            continue
        if pair is not None:
            return pair
    raise RuntimeError("generator failed %d consecutive draws for %s"
                       % (MAX_GENERATE_RETRIES, task.operation))
