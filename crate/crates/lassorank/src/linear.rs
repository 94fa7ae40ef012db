//! Linear atoms, polyhedra and valuations over exact rationals.
//!
//! A `LinAtom` is a single inequality `coeffs . x (<=|<) constant`; a
//! `Polyhedron` is a conjunction of such atoms split into non-strict and
//! strict parts. Equalities are represented as two opposing `<=` atoms at
//! construction time, so the rest of the crate only ever deals with the
//! two relations `<=` and `<`.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::rational::{fmt_rational, Rational};

/// Opaque variable identifier. Program variables and solver variables live
/// in separate spaces; an id is only meaningful relative to a varspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub u32);

/// Maps a variable to its value. Must be total on the varspace it is
/// evaluated against.
pub type Valuation = BTreeMap<Var, Rational>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoreError {
    #[error("unbound variable v{0}")]
    UnboundVariable(u32),
}

/// Relation of a linear atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    /// Non-strict: `coeffs . x <= constant`
    Le,
    /// Strict: `coeffs . x < constant`
    Lt,
}

/// A linear inequality `coeffs . x (rel) constant` in exact rationals.
///
/// Zero coefficients are never stored. The degenerate atom with no
/// coefficients is legal; its truth is decided by the constant alone.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinAtom {
    pub coeffs: BTreeMap<Var, Rational>,
    pub constant: Rational,
    pub relation: Relation,
}

impl LinAtom {
    pub fn new(
        coeffs: impl IntoIterator<Item = (Var, Rational)>,
        constant: Rational,
        relation: Relation,
    ) -> Self {
        let coeffs = coeffs
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .collect::<BTreeMap<_, _>>();
        LinAtom {
            coeffs,
            constant,
            relation,
        }
    }

    pub fn is_ground(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Truth of a ground (coefficient-free) atom.
    pub fn ground_truth(&self) -> Option<bool> {
        if !self.is_ground() {
            return None;
        }
        Some(match self.relation {
            Relation::Le => Rational::zero() <= self.constant,
            Relation::Lt => Rational::zero() < self.constant,
        })
    }

    /// Scales both sides by a positive factor; the relation is unchanged.
    pub fn scaled(&self, factor: &Rational) -> LinAtom {
        debug_assert!(factor.is_positive());
        LinAtom {
            coeffs: self
                .coeffs
                .iter()
                .map(|(v, c)| (*v, c * factor))
                .collect(),
            constant: &self.constant * factor,
            relation: self.relation,
        }
    }

    /// Canonical form: integer coefficients with overall gcd 1. Used for
    /// de-duplication and printing; semantics are unchanged.
    pub fn normalized(&self) -> LinAtom {
        if self.is_ground() {
            let constant = if self.constant.is_zero() {
                Rational::zero()
            } else if self.constant.is_positive() {
                Rational::one()
            } else {
                -Rational::one()
            };
            return LinAtom {
                coeffs: BTreeMap::new(),
                constant,
                relation: self.relation,
            };
        }
        let mut lcm = BigInt::one();
        for c in self.coeffs.values().chain(std::iter::once(&self.constant)) {
            lcm = lcm.lcm(c.denom());
        }
        let scale_up = Rational::from_integer(lcm);
        let mut gcd = BigInt::zero();
        let ints: Vec<(Var, BigInt)> = self
            .coeffs
            .iter()
            .map(|(v, c)| (*v, (c * &scale_up).to_integer()))
            .collect();
        let konst = (&self.constant * &scale_up).to_integer();
        for (_, c) in &ints {
            gcd = gcd.gcd(c);
        }
        if !konst.is_zero() {
            gcd = gcd.gcd(&konst);
        }
        if gcd.is_zero() {
            gcd = BigInt::one();
        }
        LinAtom {
            coeffs: ints
                .into_iter()
                .map(|(v, c)| (v, Rational::from_integer(c / &gcd)))
                .collect(),
            constant: Rational::from_integer(konst / &gcd),
            relation: self.relation,
        }
    }

    /// Left-hand side value under a valuation.
    pub fn lhs_value(&self, v: &Valuation) -> Result<Rational, CoreError> {
        let mut acc = Rational::zero();
        for (var, c) in &self.coeffs {
            let val = v.get(var).ok_or(CoreError::UnboundVariable(var.0))?;
            acc += c * val;
        }
        Ok(acc)
    }
}

/// Evaluates a linear atom under a valuation in exact arithmetic.
pub fn eval_atom(atom: &LinAtom, v: &Valuation) -> Result<bool, CoreError> {
    let lhs = atom.lhs_value(v)?;
    Ok(match atom.relation {
        Relation::Le => lhs <= atom.constant,
        Relation::Lt => lhs < atom.constant,
    })
}

/// A conjunction of linear atoms over an ordered variable list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polyhedron {
    pub nonstrict: Vec<LinAtom>,
    pub strict: Vec<LinAtom>,
    pub varspace: Vec<Var>,
}

impl Polyhedron {
    pub fn new(varspace: Vec<Var>) -> Self {
        Polyhedron {
            nonstrict: Vec::new(),
            strict: Vec::new(),
            varspace,
        }
    }

    pub fn push(&mut self, atom: LinAtom) {
        debug_assert!(atom.coeffs.keys().all(|v| self.varspace.contains(v)));
        match atom.relation {
            Relation::Le => self.nonstrict.push(atom),
            Relation::Lt => self.strict.push(atom),
        }
    }

    pub fn from_atoms(varspace: Vec<Var>, atoms: impl IntoIterator<Item = LinAtom>) -> Self {
        let mut p = Polyhedron::new(varspace);
        for a in atoms {
            p.push(a);
        }
        p
    }

    pub fn atoms(&self) -> impl Iterator<Item = &LinAtom> {
        self.nonstrict.iter().chain(self.strict.iter())
    }

    pub fn len(&self) -> usize {
        self.nonstrict.len() + self.strict.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Conjunctive membership test: every atom must hold.
pub fn polyhedron_contains(p: &Polyhedron, v: &Valuation) -> Result<bool, CoreError> {
    for atom in p.atoms() {
        if !eval_atom(atom, v)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Pretty-printer for atoms using caller-supplied variable names and a
/// caller-supplied display order of variables.
pub fn fmt_atom(atom: &LinAtom, order: &[Var], name: impl Fn(Var) -> String) -> String {
    let a = atom.normalized();
    let mut out = String::new();
    let mut first = true;
    for v in order {
        let Some(c) = a.coeffs.get(v) else { continue };
        let abs = c.abs();
        let term = if abs.is_one() {
            name(*v)
        } else {
            format!("{}*{}", fmt_rational(&abs), name(*v))
        };
        if first {
            if c.is_negative() {
                out.push('-');
            }
            out.push_str(&term);
            first = false;
        } else {
            out.push_str(if c.is_negative() { " - " } else { " + " });
            out.push_str(&term);
        }
    }
    if first {
        out.push('0');
    }
    out.push_str(match a.relation {
        Relation::Le => " <= ",
        Relation::Lt => " < ",
    });
    out.push_str(&fmt_rational(&a.constant));
    out
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Le => write!(f, "<="),
            Relation::Lt => write!(f, "<"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, rat};

    fn val(pairs: &[(u32, i64)]) -> Valuation {
        pairs.iter().map(|(v, n)| (Var(*v), int(*n))).collect()
    }

    #[test]
    fn eval_boundary() {
        // x <= 1 at x = 1 holds; x < 1 at x = 1 does not.
        let le = LinAtom::new([(Var(0), int(1))], int(1), Relation::Le);
        let lt = LinAtom::new([(Var(0), int(1))], int(1), Relation::Lt);
        let v = val(&[(0, 1)]);
        assert_eq!(eval_atom(&le, &v), Ok(true));
        assert_eq!(eval_atom(&lt, &v), Ok(false));
    }

    #[test]
    fn eval_hand_arithmetic() {
        // 2x - 3y <= 0 at (3, 2): 6 - 6 <= 0.
        let a = LinAtom::new([(Var(0), int(2)), (Var(1), int(-3))], int(0), Relation::Le);
        assert_eq!(eval_atom(&a, &val(&[(0, 3), (1, 2)])), Ok(true));
    }

    #[test]
    fn eval_unbound() {
        let a = LinAtom::new([(Var(0), int(1))], int(0), Relation::Le);
        assert_eq!(eval_atom(&a, &val(&[(1, 0)])), Err(CoreError::UnboundVariable(0)));
    }

    #[test]
    fn contains_point() {
        let p = Polyhedron::from_atoms(
            vec![Var(0)],
            [
                LinAtom::new([(Var(0), int(1))], int(1), Relation::Le),
                LinAtom::new([(Var(0), int(-1))], int(-1), Relation::Le),
            ],
        );
        assert_eq!(polyhedron_contains(&p, &val(&[(0, 1)])), Ok(true));
        assert_eq!(polyhedron_contains(&p, &val(&[(0, 2)])), Ok(false));
    }

    #[test]
    fn zero_coefficients_dropped() {
        let a = LinAtom::new([(Var(0), int(0)), (Var(1), int(2))], int(4), Relation::Le);
        assert_eq!(a.coeffs.len(), 1);
        let n = a.normalized();
        assert_eq!(n.coeffs.get(&Var(1)), Some(&int(1)));
        assert_eq!(n.constant, int(2));
    }

    #[test]
    fn normalized_clears_denominators() {
        let a = LinAtom::new([(Var(0), rat(1, 2)), (Var(1), rat(-1, 3))], rat(5, 6), Relation::Lt);
        let n = a.normalized();
        assert_eq!(n.coeffs.get(&Var(0)), Some(&int(3)));
        assert_eq!(n.coeffs.get(&Var(1)), Some(&int(-2)));
        assert_eq!(n.constant, int(5));
    }

    #[test]
    fn fmt_atom_order() {
        let a = LinAtom::new(
            [(Var(0), int(-1)), (Var(1), int(1)), (Var(2), int(1))],
            int(0),
            Relation::Le,
        );
        let names = ["q", "y", "q'"];
        let s = fmt_atom(&a, &[Var(2), Var(0), Var(1)], |v| names[v.0 as usize].to_string());
        assert_eq!(s, "q' - q + y <= 0");
    }
}
