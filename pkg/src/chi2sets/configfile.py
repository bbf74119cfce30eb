"""Plain-text experiment configuration files.

Schema (UTF-8): one ``key = value`` pair per line; ``#`` starts a comment;
blank lines are ignored.  Values are scalars, tokens, or comma-separated
lists.  Recognized keys:

    n, p, r, base_seed        integers
    rho, sigma0, alpha        reals
    J, S0, n_grid, p_grid     comma-separated 1-based integers
    signal_range              two comma-separated reals "lo, hi"
    lambda_sweep              comma-separated positive reals
    lambda_srl_rule           "theory:3x" or a decimal literal
    lambda_msrl_rule          "cv", "sweep", or a decimal literal

Unknown keys and duplicate keys are errors; n, p, J, r, base_seed are
required.  The digest of a config is the SHA-256 of its canonical form
(sorted ``key=value`` lines with all whitespace inside values removed), so it
is recomputable from the file alone, independent of comments and spacing.
"""

from __future__ import annotations

import hashlib

from .errors import InvalidInputError
from .simulate import ExperimentConfig

_INT_KEYS = ("n", "p", "r", "base_seed")
_REAL_KEYS = ("rho", "sigma0", "alpha")
_INT_LIST_KEYS = ("J", "S0", "n_grid", "p_grid")
_REAL_LIST_KEYS = ("signal_range", "lambda_sweep")
_TOKEN_KEYS = ("lambda_srl_rule", "lambda_msrl_rule")
KNOWN_KEYS = frozenset(_INT_KEYS + _REAL_KEYS + _INT_LIST_KEYS + _REAL_LIST_KEYS + _TOKEN_KEYS)
REQUIRED_KEYS = ("n", "p", "J", "r", "base_seed")


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key/value pairs from config text, with line-numbered diagnostics."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"config line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise InvalidInputError(f"config line {lineno}: empty key")
        if key not in KNOWN_KEYS:
            raise InvalidInputError(
                f"config line {lineno}: unknown key {key!r} (known: {', '.join(sorted(KNOWN_KEYS))})"
            )
        if key in pairs:
            raise InvalidInputError(f"config line {lineno}: duplicate key {key!r}")
        if not value:
            raise InvalidInputError(f"config line {lineno}: key {key!r} has no value")
        pairs[key] = value
    return pairs


def config_digest(text: str) -> str:
    """SHA-256 digest of the canonicalized key=value pairs."""
    pairs = parse_config_text(text)
    canonical = "\n".join(
        f"{key}={''.join(pairs[key].split())}" for key in sorted(pairs)
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise InvalidInputError(f"config key {key!r}: expected an integer, got {value!r}") from None


def _parse_real(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise InvalidInputError(f"config key {key!r}: expected a real number, got {value!r}") from None


def _parse_list(key: str, value: str, conv) -> tuple:
    items = [tok.strip() for tok in value.split(",")]
    if any(not tok for tok in items):
        raise InvalidInputError(f"config key {key!r}: empty element in list {value!r}")
    return tuple(conv(key, tok) for tok in items)


def experiment_from_pairs(pairs: dict[str, str]) -> ExperimentConfig:
    """Typed ExperimentConfig from raw pairs (validation via the dataclass)."""
    missing = [key for key in REQUIRED_KEYS if key not in pairs]
    if missing:
        raise InvalidInputError(f"config is missing required keys: {', '.join(missing)}")
    kwargs: dict = {}
    for key, value in pairs.items():
        if key in _INT_KEYS:
            kwargs[key] = _parse_int(key, value)
        elif key in _REAL_KEYS:
            kwargs[key] = _parse_real(key, value)
        elif key in _INT_LIST_KEYS:
            kwargs[key] = _parse_list(key, value, _parse_int)
        elif key in _REAL_LIST_KEYS:
            kwargs[key] = _parse_list(key, value, _parse_real)
        else:
            kwargs[key] = value
    signal = kwargs.get("signal_range")
    if signal is not None:
        if len(signal) != 2:
            raise InvalidInputError("config key 'signal_range': expected exactly two reals 'lo, hi'")
        kwargs["signal_range"] = (float(signal[0]), float(signal[1]))
    return ExperimentConfig(**kwargs)


def load_experiment_config(path: str) -> tuple[ExperimentConfig, str]:
    """Read a config file; returns the typed config and its digest."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config file {path!r}: {exc}") from exc
    pairs = parse_config_text(text)
    return experiment_from_pairs(pairs), config_digest(text)
