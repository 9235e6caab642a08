"""Scenario files: an INI-style description of one closed-loop experiment.

Example::

    [scenario]
    plant = example31
    gain = -3 -5 -3
    lyapunov = example31-preset
    h = 0.1

    [signals]
    v2 = sinusoid 1 1 1.5707963267948966

    [history]
    x1 = pwl -0.1:0 0:1
    x2 = constant 1

Signal specs: ``zero``, ``constant c``, ``sinusoid A omega phase``,
``pwl t:v ...``, ``pwc t:v ...``, ``table t:v ...`` or ``table @file.csv``,
``sign i`` (sign of state component i).
"""

import configparser
import csv
import io
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import gains
from .delayop import estimator_constants, example31_constants
from .errors import ConfigurationError
from .simcore import (
    SAMPLING_MODES,
    History,
    Signal,
    chain_plant,
    example31_plant,
    example32_plant,
)

_SIGNAL_WORDS = {
    "zero": "zero",
    "constant": "constant",
    "sinusoid": "sinusoid",
    "pwl": "piecewise-linear",
    "pwc": "piecewise-constant",
    "table": "table",
    "sign": "state-sign",
}
_SIGNAL_NAMES = {v: k for k, v in _SIGNAL_WORDS.items()}


def _num(text):
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(f"not a number: {text!r}") from None


def _pairs(tokens):
    times, values = [], []
    for tok in tokens:
        t, sep, v = tok.partition(":")
        if not sep:
            raise ConfigurationError(f"breakpoint {tok!r} must look like time:value")
        times.append(_num(t))
        values.append(_num(v))
    return times, values


def _read_table(path, base):
    path = Path(path)
    if not path.is_absolute() and base is not None:
        path = Path(base) / path
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise ConfigurationError(f"cannot read table {path}: {exc}") from None
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    return [float(r[0]) for r in rows], [float(r[1]) for r in rows]


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_signal(text, base=None):
    tokens = text.split()
    if not tokens:
        raise ConfigurationError("empty signal specification")
    word, args = tokens[0].lower(), tokens[1:]
    if word not in _SIGNAL_WORDS:
        raise ConfigurationError(f"unknown signal kind {word!r}")
    kind = _SIGNAL_WORDS[word]
    if kind == "zero":
        return Signal.zero()
    if kind == "constant":
        return Signal.constant(_num(args[0]))
    if kind == "sinusoid":
        if len(args) not in (2, 3):
            raise ConfigurationError("sinusoid needs amplitude, omega and optional phase")
        return Signal.sinusoid(*map(_num, args))
    if kind == "state-sign":
        return Signal.state_sign(int(_num(args[0])))
    if kind == "table" and len(args) == 1 and args[0].startswith("@"):
        return Signal.table(*_read_table(args[0][1:], base))
    return Signal(kind, tuple(tuple(seq) for seq in _pairs(args)))


def format_signal(sig):
    word, p = _SIGNAL_NAMES[sig.kind], sig.params
    if sig.kind == "zero":
        return word
    if sig.kind in ("piecewise-linear", "piecewise-constant", "table"):
        return " ".join([word] + [f"{t!r}:{v!r}" for t, v in zip(*p)])
    if sig.kind == "state-sign":
        return f"{word} {p[0]}"
    return " ".join([word] + [repr(x) for x in p])


@dataclass
class Scenario:
    name: str = "custom"
    plant: str = "chain"
    n: int = 3
    alpha: float = 1.0
    beta: float = 1.0
    gain: Optional[tuple] = None  # None means default_gain
    lyapunov: object = "auto"  # "auto", "example31-preset" or an n x n tuple
    mu: Optional[float] = None
    constants: str = "generic"  # "generic" or "example31"
    h: object = 0.1  # float or "certify"
    t_end: float = 10.0
    dt_div: int = 32
    sampling: str = "hold"
    v: tuple = ()
    e: Signal = field(default_factory=Signal.zero)
    d: tuple = ()
    history: tuple = ()
    z0: tuple = ()
    gamma: Optional[float] = None
    lhyp: Optional[float] = None
    cz: Optional[float] = None
    r: float = 1.0

    def __post_init__(self):
        if self.plant not in ("example31", "example32", "chain"):
            raise ConfigurationError(f"unknown plant {self.plant!r}")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigurationError(f"unknown sampling mode {self.sampling!r}")
        n = self.n
        if not self.v:
            self.v = (Signal.zero(),) * n
        if not self.history:
            self.history = (Signal.zero(),) * n
        if len(self.v) != n or len(self.history) != n:
            raise ConfigurationError(f"need {n} v-signals and {n} history components")
        if self.plant == "example32":
            if not self.d:
                self.d = (Signal.zero(), Signal.zero())
            if len(self.d) != 2:
                raise ConfigurationError("example32 needs two disturbance signals d1, d2")
            if not self.z0:
                self.z0 = (0.0,)
        if self.gain is not None and len(self.gain) != n:
            raise ConfigurationError(f"gain must have {n} entries")
        if not (isinstance(self.h, float) or self.h == "certify"):
            raise ConfigurationError("h must be a number or 'certify'")

    # -- construction of the numerical objects -------------------------------

    @property
    def is_cascade(self):
        return self.plant == "example32"

    def make_plant(self):
        if self.plant == "example31":
            return example31_plant()
        if self.plant == "example32":
            return example32_plant()
        return chain_plant(self.n, self.alpha, self.beta)

    @property
    def k(self):
        return tuple(self.gain) if self.gain is not None else gains.default_gain(self.n)

    def gain_certificate(self):
        if self.lyapunov == "example31-preset":
            if self.n != 3 or self.k != gains.EXAMPLE31_K:
                raise ConfigurationError("example31-preset needs n=3 and k=(-3,-5,-3)")
            return gains.example31_certificate(presets=True)
        if self.lyapunov == "auto":
            lyap, rate = gains.design_lyapunov(self.k, self.alpha, self.beta)
            mu = 0.5 * rate if self.mu is None else self.mu
            return gains.verify_gain(self.n, self.k, self.alpha, self.beta, lyap, mu)
        if self.mu is None:
            raise ConfigurationError("an explicit Lyapunov matrix needs mu")
        return gains.verify_gain(self.n, self.k, self.alpha, self.beta, np.array(self.lyapunov), self.mu)

    def estimator_constants(self):
        if self.constants == "example31":
            return example31_constants()
        return estimator_constants(self.n)

    def resolve_h(self):
        if self.h == "certify":
            return gains.max_certified_step(self.gain_certificate(), self.estimator_constants())
        return self.h

    def make_history(self):
        return History(tuple(self.history))

    # -- text form -------------------------------------------------------------

    def to_text(self):
        cfg = configparser.ConfigParser(interpolation=None)
        cfg.optionxform = str
        lyap = self.lyapunov
        if not isinstance(lyap, str):
            # ';' starts an inline comment, so rows are separated by '|'
            lyap = " | ".join(" ".join(repr(float(x)) for x in row) for row in lyap)
        cfg["scenario"] = {
            "name": self.name,
            "plant": self.plant,
            "n": str(self.n),
            "alpha": repr(self.alpha),
            "beta": repr(self.beta),
            "gain": "default" if self.gain is None else " ".join(repr(float(x)) for x in self.gain),
            "lyapunov": lyap,
            "constants": self.constants,
            "h": self.h if isinstance(self.h, str) else repr(self.h),
            "t_end": repr(self.t_end),
            "dt_div": str(self.dt_div),
            "sampling": self.sampling,
        }
        if self.mu is not None:
            cfg["scenario"]["mu"] = repr(self.mu)
        sig = {f"v{i + 1}": format_signal(s) for i, s in enumerate(self.v)}
        sig["e"] = format_signal(self.e)
        sig.update({f"d{i + 1}": format_signal(s) for i, s in enumerate(self.d)})
        cfg["signals"] = sig
        cfg["history"] = {f"x{i + 1}": format_signal(s) for i, s in enumerate(self.history)}
        if self.is_cascade:
            casc = {"z0": " ".join(repr(float(z)) for z in self.z0), "r": repr(self.r)}
            for key in ("gamma", "lhyp", "cz"):
                if getattr(self, key) is not None:
                    casc[key] = repr(getattr(self, key))
            cfg["cascade"] = casc
        buf = io.StringIO()
        cfg.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text, base=None):
        cfg = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        cfg.optionxform = str
        try:
            cfg.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed scenario: {exc}") from None
        if "scenario" not in cfg:
            raise ConfigurationError("scenario file lacks a [scenario] section")
        sc = cfg["scenario"]
        plant = sc.get("plant", "chain")
        n = int(sc.get("n", "3"))
        kw = {"name": sc.get("name", plant), "plant": plant, "n": n}
        for key in ("alpha", "beta", "t_end"):
            if key in sc:
                kw[key] = _num(sc[key])
        if "mu" in sc:
            kw["mu"] = _num(sc["mu"])
        if "dt_div" in sc:
            kw["dt_div"] = int(sc["dt_div"])
        for key in ("constants", "sampling"):
            if key in sc:
                kw[key] = sc[key]
        gain = sc.get("gain", "default").strip()
        kw["gain"] = None if gain == "default" else tuple(_num(x) for x in gain.split())
        lyap = sc.get("lyapunov", "auto").strip()
        if lyap in ("auto", "example31-preset"):
            kw["lyapunov"] = lyap
        else:
            kw["lyapunov"] = tuple(tuple(_num(x) for x in row.split()) for row in lyap.split("|"))
        h = sc.get("h", "0.1").strip()
        kw["h"] = h if h == "certify" else _num(h)

        sig = cfg["signals"] if "signals" in cfg else {}
        kw["v"] = tuple(parse_signal(sig.get(f"v{i + 1}", "zero"), base) for i in range(n))
        kw["e"] = parse_signal(sig.get("e", "zero"), base)
        if plant == "example32":
            kw["d"] = tuple(parse_signal(sig.get(f"d{i + 1}", "zero"), base) for i in range(2))
        hist = cfg["history"] if "history" in cfg else {}
        kw["history"] = tuple(parse_signal(hist.get(f"x{i + 1}", "zero"), base) for i in range(n))
        if "cascade" in cfg:
            cs = cfg["cascade"]
            kw["z0"] = tuple(_num(z) for z in cs.get("z0", "0").split())
            kw["r"] = _num(cs.get("r", "1"))
            for key in ("gamma", "lhyp", "cz"):
                if key in cs:
                    kw[key] = _num(cs[key])
        return cls(**kw)

    def replace(self, **changes):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return type(self)(**kw)


EXAMPLE31_TEXT = """\
[scenario]
name = example31
plant = example31
n = 3
gain = -3 -5 -3
lyapunov = example31-preset
constants = example31
h = 0.1
t_end = 10
dt_div = 32
sampling = hold

[signals]
v1 = zero
v2 = zero
v3 = zero
e = zero

[history]
x1 = pwl -0.1:0 0:1
x2 = constant 1
x3 = constant 1
"""

EXAMPLE31_FORCED_TEXT = EXAMPLE31_TEXT.replace("name = example31", "name = example31-forced").replace(
    "v2 = zero\nv3 = zero", f"v2 = sinusoid 1 1 {math.pi / 2!r}\nv3 = sinusoid 1.5 1 0"
).replace("t_end = 10", "t_end = 40")

EXAMPLE32_TEXT = """\
[scenario]
name = example32
plant = example32
n = 3
gain = -3 -5 -3
lyapunov = example31-preset
constants = example31
h = 0.1
t_end = 15
dt_div = 32
sampling = hold

[signals]
v1 = zero
v2 = zero
v3 = zero
e = zero
d1 = sign 2
d2 = constant 1

[history]
x1 = pwl -0.1:0 0:1
x2 = constant 1
x3 = constant 1

[cascade]
z0 = 2
r = 1
gamma = 0.5
lhyp = 2
cz = 0.5
"""

BUILTIN = {
    "example31": EXAMPLE31_TEXT,
    "example31-forced": EXAMPLE31_FORCED_TEXT,
    "example32": EXAMPLE32_TEXT,
}


def load_scenario(name_or_path):
    """Load a built-in scenario by name, ``chain(n)``, or a scenario file."""
    if name_or_path in BUILTIN:
        return Scenario.from_text(BUILTIN[name_or_path])
    if name_or_path.startswith("chain(") and name_or_path.endswith(")"):
        n = int(name_or_path[6:-1])
        x0 = (Signal.constant(1.0),) + (Signal.zero(),) * (n - 1)
        return Scenario(name=name_or_path, plant="chain", n=n, history=x0)
    path = Path(name_or_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario {name_or_path}: {exc}") from None
    return Scenario.from_text(text, base=path.parent)
