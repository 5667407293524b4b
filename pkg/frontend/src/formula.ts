// Client-side mirror of the verifier's formula grammar: enough to reject
// malformed answers before they hit the wire and to evaluate stay conditions
// on a sampling grid for the phase-plane overlay.
//
// atoms:        term (< | <= | = | >= | >) term
// connectives:  & binds tighter than |, -> loosest, ! prefix
// terms:        + - * with unary minus; identifiers may carry ' or ''

export type Env = Record<string, number>;

export type Term =
  | { kind: "var"; name: string }
  | { kind: "const"; value: number }
  | { kind: "neg"; arg: Term }
  | { kind: "bin"; op: "+" | "-" | "*"; left: Term; right: Term };

export type Formula =
  | { kind: "bool"; value: boolean }
  | { kind: "atom"; op: "<" | "<=" | "=" | ">=" | ">"; left: Term; right: Term }
  | { kind: "not"; arg: Formula }
  | { kind: "and"; args: Formula[] }
  | { kind: "or"; args: Formula[] }
  | { kind: "implies"; left: Formula; right: Formula };

export class FormulaParseError extends Error {
  constructor(message: string, readonly position: number) {
    super(`${message} (at column ${position + 1})`);
  }
}

type Token = { kind: "ident" | "number" | "op" | "eof"; text: string; pos: number };

function tokenize(text: string): Token[] {
  const out: Token[] = [];
  let i = 0;
  while (i < text.length) {
    const c = text[i];
    if (/\s/.test(c)) {
      i += 1;
      continue;
    }
    if (/[a-zA-Z_]/.test(c)) {
      let j = i + 1;
      while (j < text.length && /[a-zA-Z0-9_]/.test(text[j])) j += 1;
      let primes = 0;
      while (j < text.length && text[j] === "'" && primes < 2) {
        primes += 1;
        j += 1;
      }
      out.push({ kind: "ident", text: text.slice(i, j), pos: i });
      i = j;
      continue;
    }
    if (/[0-9]/.test(c) || (c === "." && /[0-9]/.test(text[i + 1] ?? ""))) {
      const m = /^[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?/.exec(text.slice(i));
      if (!m) throw new FormulaParseError("bad number", i);
      out.push({ kind: "number", text: m[0], pos: i });
      i += m[0].length;
      continue;
    }
    const two = text.slice(i, i + 2);
    if (two === "<=" || two === ">=" || two === "->") {
      out.push({ kind: "op", text: two, pos: i });
      i += 2;
      continue;
    }
    if ("<>=&|!+-*()".includes(c)) {
      out.push({ kind: "op", text: c, pos: i });
      i += 1;
      continue;
    }
    throw new FormulaParseError(`unexpected character '${c}'`, i);
  }
  out.push({ kind: "eof", text: "", pos: text.length });
  return out;
}

const CMP = ["<", "<=", "=", ">=", ">"] as const;

class Parser {
  private i = 0;
  constructor(private toks: Token[]) {}

  peek(): Token {
    return this.toks[this.i];
  }

  take(kind?: Token["kind"], text?: string): Token {
    const tok = this.toks[this.i];
    if ((kind && tok.kind !== kind) || (text !== undefined && tok.text !== text)) {
      throw new FormulaParseError(`expected ${text ?? kind}, got '${tok.text}'`, tok.pos);
    }
    this.i += 1;
    return tok;
  }

  formula(): Formula {
    const lhs = this.disjunction();
    if (this.peek().kind === "op" && this.peek().text === "->") {
      this.take();
      return { kind: "implies", left: lhs, right: this.formula() };
    }
    return lhs;
  }

  disjunction(): Formula {
    const parts = [this.conjunction()];
    while (this.peek().kind === "op" && this.peek().text === "|") {
      this.take();
      parts.push(this.conjunction());
    }
    return parts.length === 1 ? parts[0] : { kind: "or", args: parts };
  }

  conjunction(): Formula {
    const parts = [this.unary()];
    while (this.peek().kind === "op" && this.peek().text === "&") {
      this.take();
      parts.push(this.unary());
    }
    return parts.length === 1 ? parts[0] : { kind: "and", args: parts };
  }

  unary(): Formula {
    const tok = this.peek();
    if (tok.kind === "op" && tok.text === "!") {
      this.take();
      return { kind: "not", arg: this.unary() };
    }
    if (tok.kind === "ident" && (tok.text === "true" || tok.text === "false")) {
      this.take();
      return { kind: "bool", value: tok.text === "true" };
    }
    if (tok.kind === "op" && tok.text === "(") {
      const save = this.i;
      try {
        this.take();
        const inner = this.formula();
        this.take("op", ")");
        if (CMP.includes(this.peek().text as (typeof CMP)[number])) {
          throw new FormulaParseError("atom", this.peek().pos);
        }
        return inner;
      } catch (err) {
        if (!(err instanceof FormulaParseError)) throw err;
        this.i = save;
      }
    }
    return this.atom();
  }

  atom(): Formula {
    const left = this.term();
    const tok = this.peek();
    if (tok.kind !== "op" || !CMP.includes(tok.text as (typeof CMP)[number])) {
      throw new FormulaParseError(`expected comparison, got '${tok.text}'`, tok.pos);
    }
    this.take();
    const right = this.term();
    return { kind: "atom", op: tok.text as (typeof CMP)[number], left, right };
  }

  term(): Term {
    let t = this.product();
    while (this.peek().kind === "op" && (this.peek().text === "+" || this.peek().text === "-")) {
      const op = this.take().text as "+" | "-";
      t = { kind: "bin", op, left: t, right: this.product() };
    }
    return t;
  }

  product(): Term {
    let t = this.factor();
    while (this.peek().kind === "op" && this.peek().text === "*") {
      this.take();
      t = { kind: "bin", op: "*", left: t, right: this.factor() };
    }
    return t;
  }

  factor(): Term {
    const tok = this.peek();
    if (tok.kind === "op" && tok.text === "-") {
      this.take();
      const inner = this.factor();
      if (inner.kind === "const") return { kind: "const", value: -inner.value };
      return { kind: "neg", arg: inner };
    }
    if (tok.kind === "op" && tok.text === "(") {
      this.take();
      const t = this.term();
      this.take("op", ")");
      return t;
    }
    if (tok.kind === "number") {
      this.take();
      return { kind: "const", value: Number(tok.text) };
    }
    if (tok.kind === "ident") {
      this.take();
      return { kind: "var", name: tok.text };
    }
    throw new FormulaParseError(`expected term, got '${tok.text}'`, tok.pos);
  }

  finish<T>(value: T): T {
    const tok = this.peek();
    if (tok.kind !== "eof") {
      throw new FormulaParseError(`trailing input '${tok.text}'`, tok.pos);
    }
    return value;
  }
}

export function parseFormula(text: string): Formula {
  const p = new Parser(tokenize(text));
  return p.finish(p.formula());
}

export function evalTerm(t: Term, env: Env): number {
  switch (t.kind) {
    case "var": {
      const v = env[t.name];
      if (v === undefined) throw new Error(`no binding for ${t.name}`);
      return v;
    }
    case "const":
      return t.value;
    case "neg":
      return -evalTerm(t.arg, env);
    case "bin": {
      const a = evalTerm(t.left, env);
      const b = evalTerm(t.right, env);
      return t.op === "+" ? a + b : t.op === "-" ? a - b : a * b;
    }
  }
}

export function evalFormula(phi: Formula, env: Env): boolean {
  switch (phi.kind) {
    case "bool":
      return phi.value;
    case "atom": {
      const d = evalTerm(phi.left, env) - evalTerm(phi.right, env);
      switch (phi.op) {
        case "<":
          return d < 0;
        case "<=":
          return d <= 0;
        case "=":
          return d === 0;
        case ">=":
          return d >= 0;
        case ">":
          return d > 0;
      }
    }
    case "not":
      return !evalFormula(phi.arg, env);
    case "and":
      return phi.args.every((a) => evalFormula(a, env));
    case "or":
      return phi.args.some((a) => evalFormula(a, env));
    case "implies":
      return !evalFormula(phi.left, env) || evalFormula(phi.right, env);
  }
}

function fmtTerm(t: Term, prec: number): string {
  switch (t.kind) {
    case "var":
      return t.name;
    case "const":
      return String(t.value);
    case "neg":
      return `-${fmtTerm(t.arg, 3)}`;
    case "bin": {
      const level = t.op === "*" ? 2 : 1;
      const body = `${fmtTerm(t.left, level)} ${t.op} ${fmtTerm(t.right, level + 1)}`;
      return prec > level ? `(${body})` : body;
    }
  }
}

export function formatFormula(phi: Formula, prec = 0): string {
  switch (phi.kind) {
    case "bool":
      return phi.value ? "true" : "false";
    case "atom":
      return `${fmtTerm(phi.left, 1)} ${phi.op} ${fmtTerm(phi.right, 1)}`;
    case "not":
      return `!(${formatFormula(phi.arg, 0)})`;
    case "implies": {
      const body = `${formatFormula(phi.left, 1)} -> ${formatFormula(phi.right, 0)}`;
      return prec > 0 ? `(${body})` : body;
    }
    case "and": {
      const body = phi.args.map((a) => formatFormula(a, 2)).join(" & ");
      return prec >= 2 ? `(${body})` : body;
    }
    case "or": {
      const body = phi.args.map((a) => formatFormula(a, 2)).join(" | ");
      return prec >= 1 ? `(${body})` : body;
    }
  }
}
