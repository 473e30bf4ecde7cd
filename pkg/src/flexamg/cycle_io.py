"""Text and Graphviz forms of flexible cycle programs.

The text form has one instruction per line::

    # l_top=7 l_std=3
    relax L7 gsf l1 cf
    relax L7 gsf weighted lex wi=1.1 wo=0.9
    restrict L7
    vsolve L3
    cgc L7 alpha=1.15

Levels name the level the instruction acts on; ``cgc`` names the level that
receives the correction.
"""
from __future__ import annotations

import re

from .cycle import CoarseCorrection, FlexProgram, Relax, Restrict, StdVSolve
from .smoothers import SmootherSpec

__all__ = ["DslError", "format_program", "parse_program", "program_to_dot"]


class DslError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


_KIND = {"jacobi": "Jacobi", "gsf": "GSF", "gsb": "GSB", "gss": "GSS"}
_KIND_OUT = {v: k for k, v in _KIND.items()}
_HEADER = re.compile(r"#\s*l_top=(\d+)\s+l_std=(\d+)")


def _num(x: float) -> str:
    return repr(float(x))


def _format_relax(ins: Relax) -> str:
    s = ins.spec
    words = [f"relax L{ins.level}", _KIND_OUT[s.kind], s.variant, s.ordering.lower()]
    if s.variant == "weighted":
        if s.kind == "Jacobi":
            words.append(f"w={_num(s.omega)}")
        else:
            words += [f"wi={_num(s.omega_i)}", f"wo={_num(s.omega_o)}"]
    return " ".join(words)


def format_program(prog: FlexProgram) -> str:
    lines = [f"# l_top={prog.l_top} l_std={prog.l_std}"]
    for ins in prog.instrs:
        if isinstance(ins, Relax):
            lines.append(_format_relax(ins))
        elif isinstance(ins, Restrict):
            lines.append(f"restrict L{ins.level}")
        elif isinstance(ins, CoarseCorrection):
            lines.append(f"cgc L{ins.level} alpha={_num(ins.alpha)}")
        else:
            lines.append(f"vsolve L{ins.level}")
    return "\n".join(lines) + "\n"


def _level(tok: str, lineno: int) -> int:
    if not re.fullmatch(r"L\d+", tok):
        raise DslError(lineno, f"expected a level like L5, got {tok!r}")
    return int(tok[1:])


def _options(tokens, lineno: int) -> dict:
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep:
            raise DslError(lineno, f"expected key=value, got {tok!r}")
        try:
            out[key] = float(val)
        except ValueError:
            raise DslError(lineno, f"bad number in {tok!r}") from None
    return out


def parse_program(text: str) -> FlexProgram:
    """Inverse of :func:`format_program`; structural validity is not checked here."""
    instrs = []
    header = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER.match(line)
            if m:
                header = (int(m.group(1)), int(m.group(2)))
            continue
        tok = line.split()
        op = tok[0].lower()
        if op == "relax":
            if len(tok) < 5 or tok[2].lower() not in _KIND:
                raise DslError(lineno, "relax needs: relax L<l> <gsf|gsb|gss|jacobi> <l1|weighted> <lex|cf>")
            kind, variant, order = _KIND[tok[2].lower()], tok[3].lower(), tok[4].upper()
            order = "lex" if order == "LEX" else order
            opts = _options(tok[5:], lineno)
            unknown = set(opts) - {"w", "wi", "wo"}
            if unknown:
                raise DslError(lineno, f"unknown relax options {sorted(unknown)}")
            try:
                spec = SmootherSpec(kind, variant, order, omega=opts.get("w", 1.0),
                                    omega_i=opts.get("wi", 1.0), omega_o=opts.get("wo", 1.0))
            except ValueError as exc:
                raise DslError(lineno, str(exc)) from None
            instrs.append(Relax(_level(tok[1], lineno), spec))
        elif op == "restrict" and len(tok) == 2:
            instrs.append(Restrict(_level(tok[1], lineno)))
        elif op == "vsolve" and len(tok) == 2:
            instrs.append(StdVSolve(_level(tok[1], lineno)))
        elif op == "cgc" and len(tok) in (2, 3):
            opts = _options(tok[2:], lineno)
            if set(opts) - {"alpha"}:
                raise DslError(lineno, "cgc accepts only alpha=")
            instrs.append(CoarseCorrection(_level(tok[1], lineno), opts.get("alpha", 1.0)))
        else:
            raise DslError(lineno, f"cannot parse {line!r}")
    if header is None:
        if not instrs:
            raise DslError(0, "empty program without a '# l_top=.. l_std=..' header")
        levels = [i.level for i in instrs]
        stds = [i.level for i in instrs if isinstance(i, StdVSolve)]
        header = (max(levels), stds[0] if stds else min(levels))
    return FlexProgram(tuple(instrs), *header)


_COLORS = {"Jacobi": "lightblue", "GSF": "palegreen", "GSB": "khaki", "GSS": "plum"}


def program_to_dot(prog: FlexProgram, name: str = "cycle") -> str:
    """Cycle shape as a left-to-right path; node height encodes the level."""
    lines = [f'digraph "{name}" {{', "  rankdir=LR;", "  node [style=filled, fontsize=10];"]
    nodes = []
    level = prog.l_top
    lines.append(f'  n0 [label="L{level}", shape=circle, fillcolor=white];')
    nodes.append("n0")
    for k, ins in enumerate(prog.instrs, 1):
        nid = f"n{k}"
        if isinstance(ins, Relax):
            label = f"{ins.spec.kind}\\n{ins.spec.variant} {ins.spec.ordering}\\nL{ins.level}"
            attrs = f'shape=box, fillcolor={_COLORS[ins.spec.kind]}'
        elif isinstance(ins, Restrict):
            level -= 1
            label, attrs = f"R\\nL{level}", "shape=invtriangle, fillcolor=white"
        elif isinstance(ins, CoarseCorrection):
            level += 1
            label, attrs = f"P a={ins.alpha:g}\\nL{level}", "shape=triangle, fillcolor=white"
        else:
            label, attrs = f"V-cycle\\nL{ins.level}", "shape=doublecircle, fillcolor=grey80"
        lines.append(f'  {nid} [label="{label}", {attrs}, group=L{level}];')
        nodes.append(nid)
    for a, b in zip(nodes, nodes[1:]):
        lines.append(f"  {a} -> {b};")
    lines.append("}")
    return "\n".join(lines) + "\n"
