//! Parser and normalizer for the lasso-program DSL.
//!
//! Concrete syntax:
//!
//! ```text
//! # comments run to end of line
//! vars q, y;
//! stem: y = 1;
//! loop: q >= 0 && assign { q := q - y; y := y + 1; };
//! ```
//!
//! Keywords: `vars`, `stem:`, `loop:`, `assign`, `true`, `false`.
//! Operators: `&& || ! <= < >= > = !=`; terms are linear combinations
//! built from `+ - *` and rational literals `p` or `p/q`. A primed
//! variable `x'` refers to the post-state and may appear only in the loop.
//!
//! `normalize` rewrites a program into a disjunction of polyhedra: negation
//! normal form, negated atoms rewritten (`!(a <= b)` to `-b < -a`,
//! `!(a < b)` to `-b <= -a`, `a != b` to `a < b || a > b`, `true` to
//! `0 <= 0`, `false` to `0 <= -1`), then disjunctive normal form with each
//! disjunct split into non-strict and strict atom lists.

use std::collections::BTreeMap;

use num_traits::Zero;
use thiserror::Error;

use crate::linear::{LinAtom, Polyhedron, Relation, Valuation, Var};
use crate::rational::Rational;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("{line}:{col}: undeclared variable '{name}'")]
    Undeclared { line: u32, col: u32, name: String },
    #[error("{line}:{col}: primed variable '{name}'' not allowed in stem")]
    PrimedInStem { line: u32, col: u32, name: String },
    #[error("variable '{0}' assigned twice in one assign block")]
    DoubleAssignment(String),
    #[error("normal form too large: {0} disjuncts exceed cap {1}")]
    NormalFormTooLarge(usize, usize),
    #[error("assignment sugar must be desugared before normalization")]
    NotDesugared,
}

/// Reference to a declared variable, possibly primed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VarRef {
    pub index: usize,
    pub primed: bool,
}

/// A linear term, already combined at parse time.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Term {
    pub coeffs: BTreeMap<VarRef, Rational>,
    pub constant: Rational,
}

impl Term {
    fn constant(c: Rational) -> Term {
        Term {
            coeffs: BTreeMap::new(),
            constant: c,
        }
    }

    fn var(r: VarRef) -> Term {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(r, Rational::from_integer(1.into()));
        Term {
            coeffs,
            constant: Rational::zero(),
        }
    }

    fn add(mut self, other: &Term, sign: i64) -> Term {
        let s = Rational::from_integer(sign.into());
        for (v, c) in &other.coeffs {
            let e = self.coeffs.entry(*v).or_insert_with(Rational::zero);
            *e += c * &s;
            if e.is_zero() {
                self.coeffs.remove(v);
            }
        }
        self.constant += &other.constant * &s;
        self
    }

    fn scaled(mut self, factor: &Rational) -> Term {
        self.coeffs = self
            .coeffs
            .into_iter()
            .map(|(v, c)| (v, c * factor))
            .filter(|(_, c)| !c.is_zero())
            .collect();
        self.constant *= factor;
        self
    }

    fn eval(&self, env: &BTreeMap<VarRef, Rational>) -> Rational {
        let mut acc = self.constant.clone();
        for (v, c) in &self.coeffs {
            acc += c * env.get(v).expect("total environment");
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
    Ne,
}

/// Formula tree of the DSL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    True,
    False,
    Cmp(Term, CmpOp, Term),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    /// `assign { v := e; ... }` sugar; removed by `desugar_assignments`.
    Assign(Vec<(usize, Term)>),
}

/// Parsed program: declared variables plus stem and loop formula trees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramAst {
    pub vars: Vec<String>,
    pub stem: Formula,
    pub loop_: Formula,
}

/// Normal form: disjunctions of polyhedra. The stem ranges over
/// `Var(0..n)`, the loop over `Var(0..2n)` with `Var(n + i)` the primed
/// copy of variable `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LassoProgram {
    pub var_names: Vec<String>,
    pub stem: Vec<Polyhedron>,
    pub loop_: Vec<Polyhedron>,
}

impl LassoProgram {
    pub fn n(&self) -> usize {
        self.var_names.len()
    }

    pub fn var(&self, index: usize) -> Var {
        Var(index as u32)
    }

    pub fn primed(&self, index: usize) -> Var {
        Var((self.n() + index) as u32)
    }

    pub fn name(&self, v: Var) -> String {
        let n = self.n();
        let i = v.0 as usize;
        if i < n {
            self.var_names[i].clone()
        } else {
            format!("{}'", self.var_names[i - n])
        }
    }

    /// Display order used throughout reports: primed variables first, then
    /// unprimed, each in declaration order.
    pub fn display_order(&self) -> Vec<Var> {
        let n = self.n();
        (0..n)
            .map(|i| Var((n + i) as u32))
            .chain((0..n).map(|i| Var(i as u32)))
            .collect()
    }

    pub fn stem_contains(&self, v: &Valuation) -> bool {
        self.stem
            .iter()
            .any(|p| crate::linear::polyhedron_contains(p, v).unwrap_or(false))
    }

    pub fn loop_contains(&self, pre: &Valuation, post: &Valuation) -> bool {
        let mut z = pre.clone();
        for (var, val) in post {
            z.insert(Var(var.0 + self.n() as u32), val.clone());
        }
        self.loop_
            .iter()
            .any(|p| crate::linear::polyhedron_contains(p, &z).unwrap_or(false))
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Primed(String),
    Number(String),
    Kw(&'static str),
    Op(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct SpannedTok {
    tok: Tok,
    line: u32,
    col: u32,
}

const KEYWORDS: [&str; 6] = ["vars", "stem", "loop", "assign", "true", "false"];

fn lex(text: &str) -> Result<Vec<SpannedTok>, ParseError> {
    let mut toks = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let mut chars = text.chars().peekable();
    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }
    loop {
        let (l, c) = (line, col);
        let Some(&ch) = chars.peek() else {
            toks.push(SpannedTok { tok: Tok::Eof, line: l, col: c });
            break;
        };
        if ch.is_whitespace() {
            bump!();
            continue;
        }
        if ch == '#' {
            while let Some(&c2) = chars.peek() {
                if c2 == '\n' {
                    break;
                }
                bump!();
            }
            continue;
        }
        if ch.is_ascii_alphabetic() || ch == '_' {
            let mut s = String::new();
            while let Some(&c2) = chars.peek() {
                if c2.is_ascii_alphanumeric() || c2 == '_' {
                    s.push(c2);
                    bump!();
                } else {
                    break;
                }
            }
            let tok = if chars.peek() == Some(&'\'') {
                bump!();
                Tok::Primed(s)
            } else if let Some(kw) = KEYWORDS.iter().find(|k| **k == s) {
                Tok::Kw(kw)
            } else {
                Tok::Ident(s)
            };
            toks.push(SpannedTok { tok, line: l, col: c });
            continue;
        }
        if ch.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&c2) = chars.peek() {
                if c2.is_ascii_digit() {
                    s.push(c2);
                    bump!();
                } else {
                    break;
                }
            }
            toks.push(SpannedTok { tok: Tok::Number(s), line: l, col: c });
            continue;
        }
        let two: Option<&'static str> = {
            let mut it = chars.clone();
            let a = it.next();
            let b = it.next();
            match (a, b) {
                (Some('&'), Some('&')) => Some("&&"),
                (Some('|'), Some('|')) => Some("||"),
                (Some('<'), Some('=')) => Some("<="),
                (Some('>'), Some('=')) => Some(">="),
                (Some('!'), Some('=')) => Some("!="),
                (Some(':'), Some('=')) => Some(":="),
                _ => None,
            }
        };
        if let Some(op) = two {
            bump!();
            bump!();
            toks.push(SpannedTok { tok: Tok::Op(op), line: l, col: c });
            continue;
        }
        let one: Option<&'static str> = match ch {
            '<' => Some("<"),
            '>' => Some(">"),
            '=' => Some("="),
            '!' => Some("!"),
            '+' => Some("+"),
            '-' => Some("-"),
            '*' => Some("*"),
            '/' => Some("/"),
            '(' => Some("("),
            ')' => Some(")"),
            '{' => Some("{"),
            '}' => Some("}"),
            ',' => Some(","),
            ';' => Some(";"),
            ':' => Some(":"),
            _ => None,
        };
        match one {
            Some(op) => {
                bump!();
                toks.push(SpannedTok { tok: Tok::Op(op), line: l, col: c });
            }
            None => {
                return Err(ParseError::Syntax {
                    line: l,
                    col: c,
                    msg: format!("unexpected character '{ch}'"),
                })
            }
        }
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<SpannedTok>,
    pos: usize,
    vars: Vec<String>,
}

impl Parser {
    fn peek(&self) -> &SpannedTok {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> SpannedTok {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let t = self.peek();
        Err(ParseError::Syntax {
            line: t.line,
            col: t.col,
            msg: msg.into(),
        })
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ParseError> {
        match &self.peek().tok {
            Tok::Op(o) if *o == op => {
                self.next();
                Ok(())
            }
            other => self.err(format!("expected '{op}', found {other:?}")),
        }
    }

    fn lookup(&self, name: &str, primed: bool, line: u32, col: u32) -> Result<VarRef, ParseError> {
        match self.vars.iter().position(|v| v == name) {
            Some(index) => Ok(VarRef { index, primed }),
            None => Err(ParseError::Undeclared {
                line,
                col,
                name: name.to_string(),
            }),
        }
    }

    fn parse_number(&mut self) -> Result<Rational, ParseError> {
        let t = self.next();
        let Tok::Number(n) = t.tok else {
            return Err(ParseError::Syntax {
                line: t.line,
                col: t.col,
                msg: "expected number".into(),
            });
        };
        let numer: num_bigint::BigInt = n.parse().unwrap();
        if let Tok::Op("/") = self.peek().tok {
            self.next();
            let t2 = self.next();
            let Tok::Number(d) = t2.tok else {
                return Err(ParseError::Syntax {
                    line: t2.line,
                    col: t2.col,
                    msg: "expected denominator".into(),
                });
            };
            let denom: num_bigint::BigInt = d.parse().unwrap();
            if denom.is_zero() {
                return Err(ParseError::Syntax {
                    line: t2.line,
                    col: t2.col,
                    msg: "zero denominator".into(),
                });
            }
            Ok(Rational::new(numer, denom))
        } else {
            Ok(Rational::from_integer(numer))
        }
    }

    /// product := number ['*'] varref | number | varref
    fn parse_product(&mut self) -> Result<Term, ParseError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Number(_) => {
                let k = self.parse_number()?;
                if let Tok::Op("*") = self.peek().tok {
                    self.next();
                    let t2 = self.next();
                    let (name, primed) = match t2.tok {
                        Tok::Ident(s) => (s, false),
                        Tok::Primed(s) => (s, true),
                        _ => {
                            return Err(ParseError::Syntax {
                                line: t2.line,
                                col: t2.col,
                                msg: "expected variable after '*'".into(),
                            })
                        }
                    };
                    let r = self.lookup(&name, primed, t2.line, t2.col)?;
                    return Ok(Term::var(r).scaled(&k));
                }
                // juxtaposition: `2y`
                match self.peek().tok.clone() {
                    Tok::Ident(s) => {
                        let SpannedTok { line, col, .. } = self.next();
                        let r = self.lookup(&s, false, line, col)?;
                        Ok(Term::var(r).scaled(&k))
                    }
                    Tok::Primed(s) => {
                        let SpannedTok { line, col, .. } = self.next();
                        let r = self.lookup(&s, true, line, col)?;
                        Ok(Term::var(r).scaled(&k))
                    }
                    _ => Ok(Term::constant(k)),
                }
            }
            Tok::Ident(s) => {
                let s = s.clone();
                self.next();
                let r = self.lookup(&s, false, t.line, t.col)?;
                Ok(Term::var(r))
            }
            Tok::Primed(s) => {
                let s = s.clone();
                self.next();
                let r = self.lookup(&s, true, t.line, t.col)?;
                Ok(Term::var(r))
            }
            other => Err(ParseError::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("expected term, found {other:?}"),
            }),
        }
    }

    fn parse_term(&mut self) -> Result<Term, ParseError> {
        let mut sign = 1i64;
        if let Tok::Op("-") = self.peek().tok {
            self.next();
            sign = -1;
        }
        let first = self.parse_product()?;
        let mut acc = Term::default().add(&first, sign);
        loop {
            let s = match self.peek().tok {
                Tok::Op("+") => 1,
                Tok::Op("-") => -1,
                _ => break,
            };
            self.next();
            let p = self.parse_product()?;
            acc = acc.add(&p, s);
        }
        Ok(acc)
    }

    fn parse_assign_block(&mut self) -> Result<Formula, ParseError> {
        self.expect_op("{")?;
        let mut parts = Vec::new();
        loop {
            if let Tok::Op("}") = self.peek().tok {
                self.next();
                break;
            }
            let t = self.next();
            let name = match t.tok {
                Tok::Ident(s) => s,
                other => {
                    return Err(ParseError::Syntax {
                        line: t.line,
                        col: t.col,
                        msg: format!("expected assignment target, found {other:?}"),
                    })
                }
            };
            let target = self.lookup(&name, false, t.line, t.col)?;
            self.expect_op(":=")?;
            let rhs = self.parse_term()?;
            self.expect_op(";")?;
            parts.push((target.index, rhs));
        }
        Ok(Formula::Assign(parts))
    }

    /// unary := '!' unary | '(' formula ')' | 'true' | 'false'
    ///        | 'assign' block | comparison
    fn parse_unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek().tok.clone() {
            Tok::Op("!") => {
                self.next();
                Ok(Formula::Not(Box::new(self.parse_unary()?)))
            }
            Tok::Op("(") => {
                self.next();
                let f = self.parse_formula()?;
                self.expect_op(")")?;
                Ok(f)
            }
            Tok::Kw("true") => {
                self.next();
                Ok(Formula::True)
            }
            Tok::Kw("false") => {
                self.next();
                Ok(Formula::False)
            }
            Tok::Kw("assign") => {
                self.next();
                self.parse_assign_block()
            }
            _ => {
                let lhs = self.parse_term()?;
                let t = self.next();
                let op = match t.tok {
                    Tok::Op("<=") => CmpOp::Le,
                    Tok::Op("<") => CmpOp::Lt,
                    Tok::Op(">=") => CmpOp::Ge,
                    Tok::Op(">") => CmpOp::Gt,
                    Tok::Op("=") => CmpOp::Eq,
                    Tok::Op("!=") => CmpOp::Ne,
                    other => {
                        return Err(ParseError::Syntax {
                            line: t.line,
                            col: t.col,
                            msg: format!("expected comparison operator, found {other:?}"),
                        })
                    }
                };
                let rhs = self.parse_term()?;
                Ok(Formula::Cmp(lhs, op, rhs))
            }
        }
    }

    fn parse_conj(&mut self) -> Result<Formula, ParseError> {
        let mut parts = vec![self.parse_unary()?];
        while let Tok::Op("&&") = self.peek().tok {
            self.next();
            parts.push(self.parse_unary()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::And(parts)
        })
    }

    fn parse_formula(&mut self) -> Result<Formula, ParseError> {
        let mut parts = vec![self.parse_conj()?];
        while let Tok::Op("||") = self.peek().tok {
            self.next();
            parts.push(self.parse_conj()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::Or(parts)
        })
    }
}

fn check_no_primed(f: &Formula, vars: &[String]) -> Result<(), ParseError> {
    match f {
        Formula::True | Formula::False => Ok(()),
        Formula::Not(g) => check_no_primed(g, vars),
        Formula::And(gs) | Formula::Or(gs) => gs.iter().try_for_each(|g| check_no_primed(g, vars)),
        Formula::Assign(_) => Err(ParseError::PrimedInStem {
            line: 0,
            col: 0,
            name: "assign".into(),
        }),
        Formula::Cmp(a, _, b) => {
            for term in [a, b] {
                if let Some((r, _)) = term.coeffs.iter().find(|(r, _)| r.primed) {
                    return Err(ParseError::PrimedInStem {
                        line: 0,
                        col: 0,
                        name: vars[r.index].clone(),
                    });
                }
            }
            Ok(())
        }
    }
}

/// Parses the DSL into an AST. Rational literals are parsed exactly.
pub fn parse_program(text: &str) -> Result<ProgramAst, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        vars: Vec::new(),
    };
    let mut stem: Option<Formula> = None;
    let mut loop_: Option<Formula> = None;
    loop {
        match p.peek().tok.clone() {
            Tok::Eof => break,
            Tok::Kw("vars") => {
                p.next();
                if !p.vars.is_empty() {
                    return p.err("duplicate vars declaration");
                }
                loop {
                    let t = p.next();
                    match t.tok {
                        Tok::Ident(s) => {
                            if p.vars.contains(&s) {
                                return Err(ParseError::Syntax {
                                    line: t.line,
                                    col: t.col,
                                    msg: format!("variable '{s}' declared twice"),
                                });
                            }
                            p.vars.push(s);
                        }
                        other => {
                            return Err(ParseError::Syntax {
                                line: t.line,
                                col: t.col,
                                msg: format!("expected variable name, found {other:?}"),
                            })
                        }
                    }
                    match p.peek().tok {
                        Tok::Op(",") => {
                            p.next();
                        }
                        _ => break,
                    }
                }
                p.expect_op(";")?;
            }
            Tok::Kw(section @ ("stem" | "loop")) => {
                p.next();
                p.expect_op(":")?;
                let f = p.parse_formula()?;
                p.expect_op(";")?;
                let slot = if section == "stem" { &mut stem } else { &mut loop_ };
                if slot.is_some() {
                    return p.err(format!("duplicate {section} section"));
                }
                *slot = Some(f);
            }
            other => return p.err(format!("expected section, found {other:?}")),
        }
    }
    let stem = stem.ok_or_else(|| ParseError::Syntax {
        line: 0,
        col: 0,
        msg: "missing stem section".into(),
    })?;
    let loop_ = loop_.ok_or_else(|| ParseError::Syntax {
        line: 0,
        col: 0,
        msg: "missing loop section".into(),
    })?;
    check_no_primed(&stem, &p.vars)?;
    Ok(ProgramAst {
        vars: p.vars,
        stem,
        loop_,
    })
}

// ---------------------------------------------------------------------------
// Desugaring

fn desugar_formula(f: &Formula, nvars: usize) -> Result<Formula, ParseError> {
    Ok(match f {
        Formula::Assign(parts) => {
            let mut assigned = vec![false; nvars];
            let mut conj = Vec::new();
            for (target, rhs) in parts {
                if assigned[*target] {
                    return Err(ParseError::DoubleAssignment(format!("#{target}")));
                }
                assigned[*target] = true;
                conj.push(Formula::Cmp(
                    Term::var(VarRef {
                        index: *target,
                        primed: true,
                    }),
                    CmpOp::Eq,
                    rhs.clone(),
                ));
            }
            // frame condition: untouched variables keep their value
            for (i, was) in assigned.iter().enumerate() {
                if !was {
                    conj.push(Formula::Cmp(
                        Term::var(VarRef {
                            index: i,
                            primed: true,
                        }),
                        CmpOp::Eq,
                        Term::var(VarRef {
                            index: i,
                            primed: false,
                        }),
                    ));
                }
            }
            Formula::And(conj)
        }
        Formula::Not(g) => Formula::Not(Box::new(desugar_formula(g, nvars)?)),
        Formula::And(gs) => Formula::And(
            gs.iter()
                .map(|g| desugar_formula(g, nvars))
                .collect::<Result<_, _>>()?,
        ),
        Formula::Or(gs) => Formula::Or(
            gs.iter()
                .map(|g| desugar_formula(g, nvars))
                .collect::<Result<_, _>>()?,
        ),
        other => other.clone(),
    })
}

/// Expands every `assign` block into primed equalities plus frame
/// conditions for unassigned variables.
pub fn desugar_assignments(ast: &ProgramAst) -> Result<ProgramAst, ParseError> {
    let n = ast.vars.len();
    // Report double assignments with the variable's name.
    fn name_errors(e: ParseError, vars: &[String]) -> ParseError {
        match e {
            ParseError::DoubleAssignment(s) => {
                if let Some(ix) = s.strip_prefix('#').and_then(|t| t.parse::<usize>().ok()) {
                    ParseError::DoubleAssignment(vars[ix].clone())
                } else {
                    ParseError::DoubleAssignment(s)
                }
            }
            other => other,
        }
    }
    Ok(ProgramAst {
        vars: ast.vars.clone(),
        stem: desugar_formula(&ast.stem, n).map_err(|e| name_errors(e, &ast.vars))?,
        loop_: desugar_formula(&ast.loop_, n).map_err(|e| name_errors(e, &ast.vars))?,
    })
}

// ---------------------------------------------------------------------------
// Normalization

/// Default cap on the number of DNF disjuncts per section.
pub const DEFAULT_DNF_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Nnf {
    Atoms(Vec<LinAtom>),
    Or(Vec<Nnf>),
    And(Vec<Nnf>),
}

fn var_of(r: &VarRef, n: usize) -> Var {
    Var((r.index + if r.primed { n } else { 0 }) as u32)
}

/// Rewrites `lhs op rhs` (under an optional negation) into atoms in the
/// canonical `coeffs . x (<=|<) constant` form. Ground comparisons fold to
/// `0 <= 0` / `0 <= -1`.
fn atom_nnf(lhs: &Term, op: CmpOp, rhs: &Term, negated: bool, n: usize) -> Nnf {
    let op = if negated {
        match op {
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Ge => CmpOp::Lt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
        }
    } else {
        op
    };
    let diff = lhs.clone().add(rhs, -1); // lhs - rhs
    let to_atom = |t: &Term, rel: Relation| {
        LinAtom::new(
            t.coeffs.iter().map(|(r, c)| (var_of(r, n), c.clone())),
            -t.constant.clone(),
            rel,
        )
    };
    let fold = |truth: bool| {
        Nnf::Atoms(vec![if truth {
            LinAtom::new([], Rational::zero(), Relation::Le)
        } else {
            LinAtom::new([], -Rational::from_integer(1.into()), Relation::Le)
        }])
    };
    let neg = diff.clone().scaled(&-Rational::from_integer(1.into()));
    if diff.coeffs.is_empty() {
        // constant comparison folds at parse/normalize time
        let c = &diff.constant;
        let truth = match op {
            CmpOp::Le => c <= &Rational::zero(),
            CmpOp::Lt => c < &Rational::zero(),
            CmpOp::Ge => c >= &Rational::zero(),
            CmpOp::Gt => c > &Rational::zero(),
            CmpOp::Eq => c.is_zero(),
            CmpOp::Ne => !c.is_zero(),
        };
        return fold(truth);
    }
    match op {
        CmpOp::Le => Nnf::Atoms(vec![to_atom(&diff, Relation::Le)]),
        CmpOp::Lt => Nnf::Atoms(vec![to_atom(&diff, Relation::Lt)]),
        CmpOp::Ge => Nnf::Atoms(vec![to_atom(&neg, Relation::Le)]),
        CmpOp::Gt => Nnf::Atoms(vec![to_atom(&neg, Relation::Lt)]),
        CmpOp::Eq => Nnf::Atoms(vec![to_atom(&diff, Relation::Le), to_atom(&neg, Relation::Le)]),
        // a != b becomes a < b or a > b
        CmpOp::Ne => Nnf::Or(vec![
            Nnf::Atoms(vec![to_atom(&diff, Relation::Lt)]),
            Nnf::Atoms(vec![to_atom(&neg, Relation::Lt)]),
        ]),
    }
}

fn to_nnf(f: &Formula, negated: bool, n: usize) -> Result<Nnf, ParseError> {
    Ok(match f {
        Formula::True | Formula::False => {
            let truth = matches!(f, Formula::True) != negated;
            if truth {
                Nnf::Atoms(vec![LinAtom::new([], Rational::zero(), Relation::Le)])
            } else {
                Nnf::Atoms(vec![LinAtom::new(
                    [],
                    -Rational::from_integer(1.into()),
                    Relation::Le,
                )])
            }
        }
        Formula::Not(g) => to_nnf(g, !negated, n)?,
        Formula::And(gs) => {
            let parts = gs
                .iter()
                .map(|g| to_nnf(g, negated, n))
                .collect::<Result<Vec<_>, _>>()?;
            if negated {
                Nnf::Or(parts)
            } else {
                Nnf::And(parts)
            }
        }
        Formula::Or(gs) => {
            let parts = gs
                .iter()
                .map(|g| to_nnf(g, negated, n))
                .collect::<Result<Vec<_>, _>>()?;
            if negated {
                Nnf::And(parts)
            } else {
                Nnf::Or(parts)
            }
        }
        Formula::Cmp(a, op, b) => atom_nnf(a, *op, b, negated, n),
        Formula::Assign(_) => return Err(ParseError::NotDesugared),
    })
}

fn dnf(f: &Nnf, cap: usize) -> Result<Vec<Vec<LinAtom>>, ParseError> {
    let out = match f {
        Nnf::Atoms(atoms) => vec![atoms.clone()],
        Nnf::Or(parts) => {
            let mut out = Vec::new();
            for p in parts {
                out.extend(dnf(p, cap)?);
                if out.len() > cap {
                    return Err(ParseError::NormalFormTooLarge(out.len(), cap));
                }
            }
            out
        }
        Nnf::And(parts) => {
            let mut out: Vec<Vec<LinAtom>> = vec![Vec::new()];
            for p in parts {
                let rhs = dnf(p, cap)?;
                let mut next = Vec::with_capacity(out.len() * rhs.len());
                for l in &out {
                    for r in &rhs {
                        let mut c = l.clone();
                        c.extend(r.iter().cloned());
                        next.push(c);
                    }
                }
                if next.len() > cap {
                    return Err(ParseError::NormalFormTooLarge(next.len(), cap));
                }
                out = next;
            }
            out
        }
    };
    Ok(out)
}

/// Normalizes a desugared AST into the stem/loop disjunctive normal form.
pub fn normalize(ast: &ProgramAst) -> Result<LassoProgram, ParseError> {
    normalize_with_cap(ast, DEFAULT_DNF_CAP)
}

pub fn normalize_with_cap(ast: &ProgramAst, cap: usize) -> Result<LassoProgram, ParseError> {
    let n = ast.vars.len();
    let stem_vars: Vec<Var> = (0..n).map(|i| Var(i as u32)).collect();
    let loop_vars: Vec<Var> = (0..2 * n).map(|i| Var(i as u32)).collect();
    let stem = dnf(&to_nnf(&ast.stem, false, n)?, cap)?
        .into_iter()
        .map(|atoms| Polyhedron::from_atoms(stem_vars.clone(), atoms))
        .collect();
    let loop_ = dnf(&to_nnf(&ast.loop_, false, n)?, cap)?
        .into_iter()
        .map(|atoms| Polyhedron::from_atoms(loop_vars.clone(), atoms))
        .collect();
    Ok(LassoProgram {
        var_names: ast.vars.clone(),
        stem,
        loop_,
    })
}

/// Truth value of an AST formula under pre/post valuations indexed by
/// `VarRef`. Used by the semantics-preservation tests.
pub fn eval_formula(f: &Formula, env: &BTreeMap<VarRef, Rational>) -> bool {
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Not(g) => !eval_formula(g, env),
        Formula::And(gs) => gs.iter().all(|g| eval_formula(g, env)),
        Formula::Or(gs) => gs.iter().any(|g| eval_formula(g, env)),
        Formula::Cmp(a, op, b) => {
            let l = a.eval(env);
            let r = b.eval(env);
            match op {
                CmpOp::Le => l <= r,
                CmpOp::Lt => l < r,
                CmpOp::Ge => l >= r,
                CmpOp::Gt => l > r,
                CmpOp::Eq => l == r,
                CmpOp::Ne => l != r,
            }
        }
        Formula::Assign(_) => panic!("eval_formula on sugared AST"),
    }
}

/// Conjunctive means: no disjunctions, negations only at atoms.
pub fn is_conjunctive(f: &Formula) -> bool {
    match f {
        Formula::True | Formula::False | Formula::Cmp(..) | Formula::Assign(_) => true,
        Formula::Not(g) => matches!(**g, Formula::Cmp(..) | Formula::True | Formula::False),
        Formula::And(gs) => gs.iter().all(is_conjunctive),
        Formula::Or(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::fmt_atom;
    use crate::rational::int;

    pub const P_Y_GE_1: &str = "vars q, y;\nstem: y = 1;\nloop: q >= 0 && assign { q := q - y; y := y + 1; };\n";

    fn atoms_of(p: &Polyhedron, prog: &LassoProgram) -> Vec<String> {
        let order = prog.display_order();
        p.nonstrict
            .iter()
            .chain(p.strict.iter())
            .map(|a| fmt_atom(a, &order, |v| prog.name(v)))
            .collect()
    }

    #[test]
    fn running_example_normal_form() {
        let ast = parse_program(P_Y_GE_1).unwrap();
        let ast = desugar_assignments(&ast).unwrap();
        let prog = normalize(&ast).unwrap();
        assert_eq!(prog.stem.len(), 1);
        assert_eq!(prog.loop_.len(), 1);
        assert_eq!(atoms_of(&prog.stem[0], &prog), vec!["y <= 1", "-y <= -1"]);
        assert_eq!(
            atoms_of(&prog.loop_[0], &prog),
            vec![
                "-q <= 0",
                "q' - q + y <= 0",
                "-q' + q - y <= 0",
                "y' - y <= 1",
                "-y' + y <= -1",
            ]
        );
    }

    #[test]
    fn trivial_sections() {
        let ast = parse_program("vars x; stem: true; loop: false;").unwrap();
        assert_eq!(ast.stem, Formula::True);
        assert_eq!(ast.loop_, Formula::False);
        let prog = normalize(&ast).unwrap();
        assert_eq!(prog.stem.len(), 1);
        assert_eq!(prog.stem[0].nonstrict, vec![LinAtom::new([], int(0), Relation::Le)]);
        assert_eq!(prog.loop_[0].nonstrict, vec![LinAtom::new([], int(-1), Relation::Le)]);
    }

    #[test]
    fn primed_in_stem_rejected() {
        let e = parse_program("vars x; stem: x' = 0; loop: true;").unwrap_err();
        assert!(matches!(e, ParseError::PrimedInStem { .. }));
    }

    #[test]
    fn undeclared_rejected() {
        let e = parse_program("vars x; stem: y = 0; loop: true;").unwrap_err();
        assert!(matches!(e, ParseError::Undeclared { .. }));
    }

    #[test]
    fn syntax_error_position() {
        let e = parse_program("vars x;\nstem: x = ;\nloop: true;").unwrap_err();
        match e {
            ParseError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn desugar_frame_condition() {
        let ast = parse_program("vars q, y; stem: true; loop: assign { q := q - y; };").unwrap();
        let ast = desugar_assignments(&ast).unwrap();
        let prog = normalize(&ast).unwrap();
        // q' = q - y plus the frame condition y' = y
        assert_eq!(
            atoms_of(&prog.loop_[0], &prog),
            vec!["q' - q + y <= 0", "-q' + q - y <= 0", "y' - y <= 0", "-y' + y <= 0"]
        );
    }

    #[test]
    fn desugar_double_assignment() {
        let ast = parse_program("vars q; stem: true; loop: assign { q := 1; q := 2; };").unwrap();
        let e = desugar_assignments(&ast).unwrap_err();
        assert_eq!(e, ParseError::DoubleAssignment("q".into()));
    }

    #[test]
    fn disequality_splits() {
        let ast = parse_program("vars x, y; stem: true; loop: x != y;").unwrap();
        let prog = normalize(&ast).unwrap();
        assert_eq!(prog.loop_.len(), 2);
        assert_eq!(atoms_of(&prog.loop_[0], &prog), vec!["x - y < 0"]);
        assert_eq!(atoms_of(&prog.loop_[1], &prog), vec!["-x + y < 0"]);
    }

    #[test]
    fn negation_rewrites() {
        let ast = parse_program("vars x; stem: true; loop: !(x <= 1) && !(x < 3);").unwrap();
        let prog = normalize(&ast).unwrap();
        assert_eq!(prog.loop_.len(), 1);
        // !(x <= 1) gives -x < -1 (strict), !(x < 3) gives -x <= -3
        assert_eq!(atoms_of(&prog.loop_[0], &prog), vec!["-x <= -3", "-x < -1"]);
    }

    #[test]
    fn constant_comparison_folds() {
        let ast = parse_program("vars x; stem: 1 < 2; loop: 2 = 3;").unwrap();
        let prog = normalize(&ast).unwrap();
        assert_eq!(prog.stem[0].nonstrict[0].ground_truth(), Some(true));
        assert_eq!(prog.loop_[0].nonstrict[0].ground_truth(), Some(false));
    }

    #[test]
    fn dnf_cap_enforced() {
        // (a||b) repeated: 2^7 = 128 > 64 disjuncts
        let clause = "(x = 0 || x = 1)";
        let formula = vec![clause; 7].join(" && ");
        let text = format!("vars x; stem: true; loop: {formula};");
        let ast = parse_program(&text).unwrap();
        let e = normalize(&ast).unwrap_err();
        assert!(matches!(e, ParseError::NormalFormTooLarge(..)));
    }

    #[test]
    fn rational_literals() {
        let ast = parse_program("vars x; stem: 2*x = 1/2; loop: true;").unwrap();
        let prog = normalize(&ast).unwrap();
        let a = &prog.stem[0].nonstrict[0];
        // 2x <= 1/2 normalizes to 4x <= 1
        assert_eq!(a.normalized().constant, int(1));
    }
}
