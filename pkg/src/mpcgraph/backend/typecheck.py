"""Post-hoc checker for lowered program pairs."""

from __future__ import annotations

from .program import OPCODES, PartyProgram


def _check_one(prog: PartyProgram) -> list[str]:
    errs: list[str] = []
    types = {}
    where = f"party {prog.party}"
    for k, ins in enumerate(prog.instrs):
        loc = f"{where} instr {k} ({ins.op}, site {ins.site})"
        if ins.op not in OPCODES:
            errs.append(f"{loc}: unknown opcode")
            continue
        missing = [a for a in ins.args if a not in types]
        if missing:
            errs.append(f"{loc}: undefined register(s) {missing}")
            continue
        arg_t = [types[a] for a in ins.args]
        out_t = ins.type
        if ins.op in ("add", "sub"):
            if arg_t[0].scale != arg_t[1].scale:
                errs.append(f"{loc}: scale mismatch {arg_t[0].scale} vs {arg_t[1].scale}")
            if out_t.scale != arg_t[0].scale:
                errs.append(f"{loc}: scale mismatch between operands and result")
        elif ins.op in ("add_pub", "sub_pub", "pub_sub"):
            if arg_t[0].scale != arg_t[1].scale:
                errs.append(f"{loc}: scale mismatch {arg_t[0].scale} vs {arg_t[1].scale}")
            if prog.party != 0:
                errs.append(f"{loc}: public addend outside party 0")
        elif ins.op == "mul" and all(t.secret for t in arg_t):
            errs.append(f"{loc}: plain mul on two secrets")
        elif ins.op == "mul_pub" and all(t.secret for t in arg_t):
            errs.append(f"{loc}: plain mul on two secrets")
        elif ins.op == "mul_mpc":
            s_min = min(t.scale for t in arg_t)
            nxt = prog.instrs[k + 1] if k + 1 < len(prog.instrs) else None
            if nxt is None or nxt.op != "trunc" or nxt.args != (ins.out,) or nxt.attrs.get("s") != s_min:
                errs.append(f"{loc}: mul_mpc not followed by trunc({s_min})")
        elif ins.op == "ltz_mpc":
            if out_t.scale != 1:
                errs.append(f"{loc}: ltz output scale {out_t.scale} != 1")
        elif ins.op == "trunc":
            if out_t.scale * ins.attrs["s"] != arg_t[0].scale:
                errs.append(f"{loc}: trunc scale bookkeeping {arg_t[0].scale}/{ins.attrs['s']} != {out_t.scale}")
        elif ins.op == "encode":
            if ins.attrs["s_old"] != arg_t[0].scale or ins.attrs["s_new"] != out_t.scale:
                errs.append(f"{loc}: encode scale bookkeeping")
        if ins.op in ("add", "sub", "mul_mpc", "ltz_mpc", "max_kernel", "trunc", "encode") \
                and not all(t.secret for t in arg_t):
            errs.append(f"{loc}: expects secret operands")
        types[ins.out] = out_t
    return errs


def typecheck_lowered(p0: PartyProgram, p1: PartyProgram) -> list[str]:
    """Return rule violations; an empty list means both programs are well typed and aligned."""
    errs = _check_one(p0) + _check_one(p1)
    c0, c1 = p0.comm_points(), p1.comm_points()
    for (k0, a), (k1, b) in zip(c0, c1):
        if (a.op, a.node) != (b.op, b.node) or a.attrs != b.attrs or a.shape != b.shape:
            errs.append(f"communication mismatch: party 0 instr {k0} ({a.op}, node {a.node}) vs "
                        f"party 1 instr {k1} ({b.op}, node {b.node})")
            break
    if len(c0) != len(c1):
        errs.append(f"communication count mismatch: {len(c0)} vs {len(c1)}")
    for (k, a), b in zip(enumerate(p0.instrs), p1.instrs):
        if a.type != b.type:
            errs.append(f"type mismatch at instr {k}: {a.type} vs {b.type}")
            break
    return errs
