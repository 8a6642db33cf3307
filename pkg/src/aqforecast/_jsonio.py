"""JSON text with floats written at 17 significant digits (bit-exact round trip)."""
import json
import math


def dumps_17g(obj, indent: int = 2) -> str:
    # json with every float written at 17 significant digits
    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, float):
            if not math.isfinite(o):
                raise ValueError("non-finite value cannot be serialized")
            return f"{o:.17g}"
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple)):
            if all(isinstance(v, (int, float, str, bool)) or v is None for v in o):
                return "[" + ", ".join(enc(v, level) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        return json.dumps(o)
    return enc(obj, 0)
