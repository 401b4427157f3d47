use std::collections::HashSet;

use super::{Arg, AssemblyProgram, BinOp, Expr, Instruction, Opcode, ParseError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Eq,
    Op(char),
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    end_col: usize,
}

fn lex(src: &str, line: usize) -> Result<Lexer, ParseError> {
    let bytes: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |col: usize, msg: String| ParseError::SyntaxError {
        line,
        column: col + 1,
        msg,
    };
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            '=' => Tok::Eq,
            '+' | '-' | '*' | '/' => Tok::Op(c),
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == '.') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] == 'e' || bytes[j] == 'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == '+' || bytes[k] == '-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text: String = bytes[i..j].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| err(start, format!("invalid number {text:?}")))?;
                i = j - 1;
                Tok::Num(v)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == '_') {
                    j += 1;
                }
                let text: String = bytes[i..j].iter().collect();
                i = j - 1;
                Tok::Ident(text)
            }
            other => return Err(err(start, format!("unexpected character {other:?}"))),
        };
        toks.push((tok, start + 1));
        i += 1;
    }
    Ok(Lexer {
        toks,
        pos: 0,
        line,
        end_col: bytes.len() + 1,
    })
}

impl Lexer {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|&(_, c)| c).unwrap_or(self.end_col)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError::SyntaxError {
            line: self.line,
            column: self.col(),
            msg: msg.into(),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.prefix()?;
        loop {
            let (op, bp) = match self.peek() {
                Some(Tok::Op('+')) => (BinOp::Add, 1),
                Some(Tok::Op('-')) => (BinOp::Sub, 1),
                Some(Tok::Op('*')) => (BinOp::Mul, 3),
                Some(Tok::Op('/')) => (BinOp::Div, 3),
                _ => break,
            };
            if bp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(bp + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr, ParseError> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Op('-')) => {
                let inner = self.expr(5)?;
                Ok(match inner {
                    Expr::Num(v) => Expr::Num(-v),
                    e => Expr::Neg(Box::new(e)),
                })
            }
            Some(Tok::Op('+')) => self.expr(5),
            Some(Tok::LParen) => {
                let e = self.expr(0)?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if (name == "min" || name == "max") && self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let a = self.expr(0)?;
                    self.expect(Tok::Comma, "','")?;
                    let b = self.expr(0)?;
                    self.expect(Tok::RParen, "')'")?;
                    let op = if name == "min" { BinOp::Min } else { BinOp::Max };
                    return Ok(Expr::Bin(op, Box::new(a), Box::new(b)));
                }
                if self.peek() == Some(&Tok::LBracket) {
                    self.pos += 1;
                    let idx = match self.next() {
                        Some(Tok::Num(v)) if v >= 0.0 && v.fract() == 0.0 => v as usize,
                        _ => {
                            self.pos -= 1;
                            return Err(self.error("expected a non-negative integer index"));
                        }
                    };
                    self.expect(Tok::RBracket, "']'")?;
                    return Ok(Expr::Index(name, idx));
                }
                Ok(Expr::Name(name))
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.error("expected an expression"))
            }
        }
    }

    fn arg(&mut self, allow_part: bool) -> Result<Arg, ParseError> {
        if let Some(Tok::Ident(s)) = self.peek() {
            if s == "part" && matches!(self.toks.get(self.pos + 1), Some((Tok::Num(_), _))) {
                if !allow_part {
                    return Err(self.error("'part N' is only valid in PRIMITIVE and GENERATE3D"));
                }
                self.pos += 1;
                let Some(Tok::Num(v)) = self.next() else { unreachable!() };
                if v < 0.0 || v.fract() != 0.0 {
                    self.pos -= 1;
                    return Err(self.error("part index must be a non-negative integer"));
                }
                return Ok(Arg::Part(v as usize));
            }
        }
        if allow_part {
            return Err(self.error("expected 'part N'"));
        }
        Ok(Arg::Expr(self.expr(0)?))
    }
}

fn names_in(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::Num(_) => {}
        Expr::Name(n) | Expr::Index(n, _) => out.push(n.clone()),
        Expr::Neg(a) => names_in(a, out),
        Expr::Bin(_, a, b) => {
            names_in(a, out);
            names_in(b, out);
        }
    }
}

fn parse_line(src: &str, line: usize) -> Result<Option<Instruction>, ParseError> {
    let mut lx = lex(src, line)?;
    if lx.toks.is_empty() {
        return Ok(None);
    }
    let mut outputs = Vec::new();
    let first = lx.ident("a name or EXPORT")?;
    if first == "EXPORT" && lx.peek() == Some(&Tok::LParen) {
        lx.pos -= 1;
    } else {
        outputs.push(first);
        while lx.peek() == Some(&Tok::Comma) {
            lx.pos += 1;
            outputs.push(lx.ident("a name")?);
        }
        lx.expect(Tok::Eq, "'='")?;
    }
    let op_col = lx.col();
    let op_name = lx.ident("an opcode")?;
    let opcode = Opcode::from_name(&op_name).ok_or_else(|| ParseError::SyntaxError {
        line,
        column: op_col,
        msg: format!("unknown opcode {op_name:?}"),
    })?;
    let syntax = |msg: String| ParseError::SyntaxError {
        line,
        column: op_col,
        msg,
    };
    if outputs.len() != opcode.outputs() {
        return Err(syntax(format!(
            "{} binds {} name(s), got {}",
            opcode.name(),
            opcode.outputs(),
            outputs.len()
        )));
    }
    lx.expect(Tok::LParen, "'('")?;
    let mut args = Vec::new();
    if lx.peek() != Some(&Tok::RParen) {
        loop {
            args.push(lx.arg(opcode.takes_part())?);
            if lx.peek() == Some(&Tok::Comma) {
                lx.pos += 1;
            } else {
                break;
            }
        }
    }
    lx.expect(Tok::RParen, "')'")?;
    if lx.peek().is_some() {
        return Err(lx.error("unexpected trailing input"));
    }
    let (lo, hi) = opcode.arg_range();
    if args.len() < lo || args.len() > hi || (opcode == Opcode::Move && args.len() == 3) {
        return Err(syntax(format!(
            "{} takes {} argument(s), got {}",
            opcode.name(),
            if opcode == Opcode::Move {
                "2 or 4".to_string()
            } else if hi == usize::MAX {
                format!("at least {lo}")
            } else if lo == hi {
                lo.to_string()
            } else {
                format!("{lo} to {hi}")
            },
            args.len()
        )));
    }
    Ok(Some(Instruction {
        outputs,
        opcode,
        args,
        line,
    }))
}

/// Parse program source; checks bindings and the presence of an export.
pub fn parse_program(text: &str) -> Result<AssemblyProgram, ParseError> {
    let mut instructions = Vec::new();
    let mut bound: HashSet<String> = HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let code = raw.split('#').next().unwrap_or("");
        let Some(ins) = parse_line(code, line)? else { continue };
        let mut used = Vec::new();
        for a in &ins.args {
            if let Arg::Expr(e) = a {
                names_in(e, &mut used);
            }
        }
        if let Some(name) = used.into_iter().find(|n| !bound.contains(n)) {
            return Err(ParseError::ForwardReference { name, line });
        }
        for (k, o) in ins.outputs.iter().enumerate() {
            if bound.contains(o) || ins.outputs[..k].contains(o) {
                return Err(ParseError::DuplicateBinding {
                    name: o.clone(),
                    line,
                });
            }
        }
        bound.extend(ins.outputs.iter().cloned());
        instructions.push(ins);
    }
    if !instructions.iter().any(|i| i.opcode == Opcode::Export) {
        return Err(ParseError::NoExport);
    }
    Ok(AssemblyProgram { instructions })
}
