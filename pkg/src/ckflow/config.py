"""Flat dotted-key run configuration files.

A run file is plain text, one `key = value` per line, `#` comments, blank
lines ignored.  Values are numbers, bare strings, or `[a, b, c]` lists of
numbers.  Every key is validated against the registry below before any
computation starts; unknown or duplicate keys are rejected so committed
run files stay reproducible.
"""

from .errors import ConfigError

# key -> (kind, default, choices-or-None); kind in
# {choice, float, int, vec3, auto_float}
REGISTRY = {
    "geometry": ("choice", "euclidean",
                 ("euclidean", "paper_example", "poincare_ball")),
    "poincare_ball.radius": ("float", 1.0, None),
    "rotation.axis": ("vec3", (1.0, 0.0, 0.0), None),
    "rotation.omega": ("float", 0.0, None),
    "schedule.t0": ("auto_float", "auto", None),
    "schedule.margin": ("float", 0.1, None),
    "seed.kind": ("choice", "sphere", ("sphere", "ellipsoid", "twisted")),
    "seed.radius": ("float", 1.0, None),
    "seed.semiaxes": ("vec3", (1.3, 1.0, 1.0), None),
    "seed.twist": ("float", 0.0, None),
    "seed.level": ("int", 4, None),
    "flow.backend": ("choice", "lagrangian", ("lagrangian", "leaf_graph")),
    "flow.cfl": ("float", 0.25, None),
    "flow.t_end": ("float", 20.0, None),
    "flow.speed_tol": ("float", 1e-2, None),
    "flow.leaf_tol": ("float", 1e-2, None),
    "flow.smooth_every": ("int", 10, None),
    "flow.max_steps": ("int", 500000, None),
    "output.frame_every": ("int", 0, None),
    "sampling.seed": ("int", 0, None),
}


def _parse_scalar(text, where):
    low = text.lower()
    try:
        if "." in low or "e" in low or "inf" in low or "nan" in low:
            return float(text)
        return int(text)
    except ValueError:
        return text  # bare string


def _parse_value(text, where):
    text = text.strip()
    if not text:
        raise ConfigError(f"{where}: empty value")
    if text.startswith("["):
        if not text.endswith("]"):
            raise ConfigError(f"{where}: unterminated list {text!r}")
        items = [s.strip() for s in text[1:-1].split(",") if s.strip()]
        vals = []
        for s in items:
            v = _parse_scalar(s, where)
            if isinstance(v, str):
                raise ConfigError(f"{where}: non-numeric list entry {s!r}")
            vals.append(float(v))
        return vals
    return _parse_scalar(text, where)


def _check(key, value, where):
    kind, _, choices = REGISTRY[key]
    if kind == "choice":
        if not isinstance(value, str) or value not in choices:
            raise ConfigError(
                f"{where}: {key} must be one of {', '.join(choices)}; "
                f"got {value!r}"
            )
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: {key} must be a number, got {value!r}")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: {key} must be an integer, got {value!r}")
        return int(value)
    if kind == "vec3":
        if not isinstance(value, list) or len(value) != 3:
            raise ConfigError(
                f"{where}: {key} must be a 3-component list, got {value!r}"
            )
        return tuple(float(v) for v in value)
    if kind == "auto_float":
        if value == "auto":
            return "auto"
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(
                f"{where}: {key} must be 'auto' or a number, got {value!r}"
            )
        return float(value)
    raise AssertionError(kind)


def parse_config(text, name="<config>"):
    """Parse config text into a fully defaulted, validated key->value dict."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{name}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        if key not in REGISTRY:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        values[key] = _check(key, _parse_value(rhs, where), where)
    out = {k: spec[1] for k, spec in REGISTRY.items()}
    out.update(values)
    return out


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text, name=str(path))
