from .emitter import DIALECTS, EmitError, emit_sql
from .parser import ParseError, UnsupportedFeature, parse_sql, tokenize

__all__ = ["DIALECTS", "EmitError", "ParseError", "UnsupportedFeature", "emit_sql",
           "parse_sql", "tokenize"]
