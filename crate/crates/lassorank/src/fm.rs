//! Fourier-Motzkin elimination and feasibility over exact rationals.
//!
//! Strictness rule: a combined atom is strict iff at least one parent is
//! strict. This keeps the projection exact over the rationals, so
//! feasibility of the projection is equivalent to feasibility of the
//! original system.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};

use crate::linear::{polyhedron_contains, LinAtom, Polyhedron, Relation, Valuation, Var};
use crate::rational::{int, Rational};

/// Result of a feasibility query. A `Sat` witness always re-checks against
/// the input polyhedron.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Feasibility {
    Sat(Valuation),
    Unsat,
}

impl Feasibility {
    pub fn is_sat(&self) -> bool {
        matches!(self, Feasibility::Sat(_))
    }
}

/// De-duplicates atoms and keeps only the tightest bound per coefficient
/// vector. Returns `None` if a ground atom is unsatisfiable.
pub(crate) fn simplify_atoms(atoms: Vec<LinAtom>) -> Option<Vec<LinAtom>> {
    simplify(atoms)
}

/// Projects `var` out of a bare atom list (no simplification).
pub(crate) fn eliminate_atoms(atoms: &[LinAtom], var: Var) -> Vec<LinAtom> {
    eliminate_from_atoms(atoms, var)
}

fn simplify(atoms: Vec<LinAtom>) -> Option<Vec<LinAtom>> {
    // key: coefficient vector; value: tightest (constant, relation)
    let mut best: BTreeMap<Vec<(Var, Rational)>, (Rational, Relation)> = BTreeMap::new();
    for atom in atoms {
        let a = atom.normalized();
        if let Some(truth) = a.ground_truth() {
            if truth {
                continue;
            }
            return None;
        }
        let key: Vec<(Var, Rational)> = a.coeffs.iter().map(|(v, c)| (*v, c.clone())).collect();
        match best.get_mut(&key) {
            None => {
                best.insert(key, (a.constant, a.relation));
            }
            Some((c, rel)) => {
                let tighter = a.constant < *c
                    || (a.constant == *c && a.relation == Relation::Lt && *rel == Relation::Le);
                if tighter {
                    *c = a.constant;
                    *rel = a.relation;
                }
            }
        }
    }
    Some(
        best.into_iter()
            .map(|(coeffs, (constant, relation))| LinAtom {
                coeffs: coeffs.into_iter().collect(),
                constant,
                relation,
            })
            .collect(),
    )
}

fn eliminate_from_atoms(atoms: &[LinAtom], var: Var) -> Vec<LinAtom> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut rest = Vec::new();
    for a in atoms {
        match a.coeffs.get(&var) {
            Some(c) if c.is_positive() => pos.push(a),
            Some(_) => neg.push(a),
            None => rest.push(a.clone()),
        }
    }
    for p in &pos {
        let cp = p.coeffs.get(&var).unwrap().clone();
        for n in &neg {
            let cn = n.coeffs.get(&var).unwrap().clone();
            // (-cn) * p + cp * n eliminates var; both multipliers positive.
            let mp = -&cn;
            let mut coeffs: BTreeMap<Var, Rational> = BTreeMap::new();
            for (v, c) in &p.coeffs {
                *coeffs.entry(*v).or_insert_with(Rational::zero) += c * &mp;
            }
            for (v, c) in &n.coeffs {
                *coeffs.entry(*v).or_insert_with(Rational::zero) += c * &cp;
            }
            coeffs.remove(&var);
            let relation = if p.relation == Relation::Lt || n.relation == Relation::Lt {
                Relation::Lt
            } else {
                Relation::Le
            };
            rest.push(LinAtom::new(
                coeffs,
                &p.constant * &mp + &n.constant * &cp,
                relation,
            ));
        }
    }
    rest
}

/// Projects `p` onto `varspace \ {var}`. A valuation satisfies the result
/// iff it extends to a satisfying valuation of `p`.
pub fn fm_eliminate(p: &Polyhedron, var: Var) -> Polyhedron {
    debug_assert!(p.varspace.contains(&var));
    let atoms: Vec<LinAtom> = p.atoms().cloned().collect();
    let out = eliminate_from_atoms(&atoms, var);
    let out = simplify(out).unwrap_or_else(|| {
        vec![LinAtom::new(
            [],
            int(-1),
            Relation::Le,
        )]
    });
    let varspace = p.varspace.iter().copied().filter(|v| *v != var).collect();
    Polyhedron::from_atoms(varspace, out)
}

/// Greedy elimination order: pick the variable minimizing the number of
/// pos/neg combinations it produces.
fn pick_var(atoms: &[LinAtom], remaining: &[Var]) -> Option<Var> {
    let mut best: Option<(i64, Var)> = None;
    for v in remaining {
        let mut pos = 0i64;
        let mut neg = 0i64;
        for a in atoms {
            match a.coeffs.get(v) {
                Some(c) if c.is_positive() => pos += 1,
                Some(_) => neg += 1,
                None => {}
            }
        }
        let score = pos * neg - (pos + neg);
        match best {
            None => best = Some((score, *v)),
            Some((s, _)) if score < s => best = Some((score, *v)),
            _ => {}
        }
    }
    best.map(|(_, v)| v)
}

/// One bound on a single variable, derived from an atom where every other
/// variable already has a value.
struct Bounds {
    lower: Option<(Rational, bool)>, // (value, closed)
    upper: Option<(Rational, bool)>,
}

fn bounds_for(var: Var, atoms: &[LinAtom], assigned: &Valuation) -> Bounds {
    let mut b = Bounds {
        lower: None,
        upper: None,
    };
    for a in atoms {
        let Some(c) = a.coeffs.get(&var) else { continue };
        let mut rest = a.constant.clone();
        for (v, cv) in &a.coeffs {
            if *v == var {
                continue;
            }
            rest -= cv * assigned.get(v).expect("back-substitution order");
        }
        let bound = &rest / c;
        let closed = a.relation == Relation::Le;
        if c.is_positive() {
            // var <= bound
            let tighter = match &b.upper {
                None => true,
                Some((u, uc)) => bound < *u || (bound == *u && *uc && !closed),
            };
            if tighter {
                b.upper = Some((bound, closed));
            }
        } else {
            // var >= bound
            let tighter = match &b.lower {
                None => true,
                Some((l, lc)) => bound > *l || (bound == *l && *lc && !closed),
            };
            if tighter {
                b.lower = Some((bound, closed));
            }
        }
    }
    b
}

/// Picks a deterministic value inside an interval, preferring small
/// integers.
fn pick_value(b: &Bounds) -> Rational {
    match (&b.lower, &b.upper) {
        (None, None) => Rational::zero(),
        (Some((l, closed)), None) => {
            if *closed {
                l.clone()
            } else {
                l.floor() + Rational::one()
            }
        }
        (None, Some((u, closed))) => {
            if *closed {
                u.clone()
            } else {
                u.ceil() - Rational::one()
            }
        }
        (Some((l, lc)), Some((u, uc))) => {
            if l == u {
                return l.clone();
            }
            // Smallest admissible integer, else the midpoint.
            let z = if *lc { l.ceil() } else { l.floor() + Rational::one() };
            let fits = z > *l || (*lc && z == *l);
            let fits = fits && (z < *u || (*uc && z == *u));
            if fits {
                z
            } else {
                (l + u) / int(2)
            }
        }
    }
}

/// Strategy for choosing witness coordinates during back-substitution.
pub enum ValuePick<'a> {
    /// Small deterministic values.
    Simple,
    /// Pushes each coordinate towards a seeded random side of its interval,
    /// approximating a vertex in a random objective direction.
    Randomized(&'a mut dyn FnMut() -> bool),
}

fn pick_value_with(b: &Bounds, pick: &mut ValuePick) -> Rational {
    match pick {
        ValuePick::Simple => pick_value(b),
        ValuePick::Randomized(coin) => match (&b.lower, &b.upper) {
            (Some((l, lc)), Some((u, uc))) if l != u => {
                let towards_lower = coin();
                if towards_lower && *lc {
                    l.clone()
                } else if !towards_lower && *uc {
                    u.clone()
                } else {
                    pick_value(b)
                }
            }
            _ => pick_value(b),
        },
    }
}

/// Decides feasibility by eliminating every variable, then back-substitutes
/// a witness. The witness is total on `p.varspace`.
pub fn fm_feasible(p: &Polyhedron) -> Feasibility {
    fm_feasible_with(p, &mut ValuePick::Simple)
}

pub fn fm_feasible_with(p: &Polyhedron, pick: &mut ValuePick) -> Feasibility {
    fm_feasible_impl(p, pick, usize::MAX).expect("unbounded run always decides")
}

/// Budgeted variant for optional pruning checks: gives up with `None`
/// once an elimination stage holds more than `max_atoms` atoms.
pub fn fm_feasible_bounded(p: &Polyhedron, max_atoms: usize) -> Option<Feasibility> {
    fm_feasible_impl(p, &mut ValuePick::Simple, max_atoms)
}

fn fm_feasible_impl(
    p: &Polyhedron,
    pick: &mut ValuePick,
    max_atoms: usize,
) -> Option<Feasibility> {
    let Some(mut atoms) = simplify(p.atoms().cloned().collect()) else {
        return Some(Feasibility::Unsat);
    };
    let mut remaining: Vec<Var> = p.varspace.clone();
    let mut ladder: Vec<(Var, Vec<LinAtom>)> = Vec::new();
    while !remaining.is_empty() {
        if atoms.len() > max_atoms {
            return None;
        }
        let mentioned: Vec<Var> = remaining
            .iter()
            .copied()
            .filter(|v| atoms.iter().any(|a| a.coeffs.contains_key(v)))
            .collect();
        if mentioned.is_empty() {
            break;
        }
        let var = pick_var(&atoms, &mentioned).unwrap();
        ladder.push((var, atoms.clone()));
        remaining.retain(|v| *v != var);
        match simplify(eliminate_from_atoms(&atoms, var)) {
            Some(next) => atoms = next,
            None => return Some(Feasibility::Unsat),
        }
    }
    // All remaining atoms are ground and satisfiable (simplify drops true
    // ground atoms and reports false ones), so a witness exists.
    let mut witness: Valuation = remaining.iter().map(|v| (*v, Rational::zero())).collect();
    for (var, atoms) in ladder.into_iter().rev() {
        let b = bounds_for(var, &atoms, &witness);
        witness.insert(var, pick_value_with(&b, pick));
    }
    debug_assert_eq!(polyhedron_contains(p, &witness), Ok(true));
    Some(Feasibility::Sat(witness))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::Relation::{Le, Lt};

    fn atom(coeffs: &[(u32, i64)], constant: i64, rel: Relation) -> LinAtom {
        LinAtom::new(
            coeffs.iter().map(|(v, c)| (Var(*v), int(*c))),
            int(constant),
            rel,
        )
    }

    #[test]
    fn eliminate_bounded_pair() {
        // y <= x and -y <= -1 project to -x <= -1.
        let p = Polyhedron::from_atoms(
            vec![Var(0), Var(1)],
            [atom(&[(1, 1), (0, -1)], 0, Le), atom(&[(1, -1)], -1, Le)],
        );
        let q = fm_eliminate(&p, Var(1));
        assert_eq!(q.varspace, vec![Var(0)]);
        assert_eq!(q.nonstrict, vec![atom(&[(0, -1)], -1, Le)]);
        assert!(q.strict.is_empty());
    }

    #[test]
    fn eliminate_unbounded() {
        // x < 1 projects to the trivially feasible empty system.
        let p = Polyhedron::from_atoms(vec![Var(0)], [atom(&[(0, 1)], 1, Lt)]);
        let q = fm_eliminate(&p, Var(0));
        assert!(q.is_empty());
    }

    #[test]
    fn eliminate_strict_parent() {
        // y <= x and -y < -1: strict parent makes the child strict.
        let p = Polyhedron::from_atoms(
            vec![Var(0), Var(1)],
            [atom(&[(1, 1), (0, -1)], 0, Le), atom(&[(1, -1)], -1, Lt)],
        );
        let q = fm_eliminate(&p, Var(1));
        assert!(q.nonstrict.is_empty());
        assert_eq!(q.strict, vec![atom(&[(0, -1)], -1, Lt)]);
    }

    #[test]
    fn feasible_point() {
        let p = Polyhedron::from_atoms(
            vec![Var(0)],
            [atom(&[(0, 1)], 1, Le), atom(&[(0, -1)], -1, Le)],
        );
        match fm_feasible(&p) {
            Feasibility::Sat(v) => assert_eq!(v.get(&Var(0)), Some(&int(1))),
            Feasibility::Unsat => panic!("expected sat"),
        }
    }

    #[test]
    fn infeasible_strict() {
        // x < 0 and -x < 0 has no rational point.
        let p = Polyhedron::from_atoms(
            vec![Var(0)],
            [atom(&[(0, 1)], 0, Lt), atom(&[(0, -1)], 0, Lt)],
        );
        assert_eq!(fm_feasible(&p), Feasibility::Unsat);
    }

    #[test]
    fn witness_rechecks() {
        let p = Polyhedron::from_atoms(
            vec![Var(0), Var(1)],
            [atom(&[(0, 1), (1, -1)], 0, Le), atom(&[(1, 1)], 3, Lt)],
        );
        match fm_feasible(&p) {
            Feasibility::Sat(v) => assert_eq!(polyhedron_contains(&p, &v), Ok(true)),
            Feasibility::Unsat => panic!("expected sat"),
        }
    }

    #[test]
    fn boundary_strict_vs_nonstrict() {
        // x <= 1 and -x <= -1 and x < 1 is infeasible.
        let p = Polyhedron::from_atoms(
            vec![Var(0)],
            [
                atom(&[(0, 1)], 1, Le),
                atom(&[(0, -1)], -1, Le),
                atom(&[(0, 1)], 1, Lt),
            ],
        );
        assert_eq!(fm_feasible(&p), Feasibility::Unsat);
    }

    #[test]
    fn equality_chain() {
        // x = y, y = 3, x <= z, z < 10.
        let p = Polyhedron::from_atoms(
            vec![Var(0), Var(1), Var(2)],
            [
                atom(&[(0, 1), (1, -1)], 0, Le),
                atom(&[(0, -1), (1, 1)], 0, Le),
                atom(&[(1, 1)], 3, Le),
                atom(&[(1, -1)], -3, Le),
                atom(&[(0, 1), (2, -1)], 0, Le),
                atom(&[(2, 1)], 10, Lt),
            ],
        );
        match fm_feasible(&p) {
            Feasibility::Sat(v) => {
                assert_eq!(v.get(&Var(0)), Some(&int(3)));
                assert_eq!(v.get(&Var(1)), Some(&int(3)));
                assert_eq!(polyhedron_contains(&p, &v), Ok(true));
            }
            Feasibility::Unsat => panic!("expected sat"),
        }
    }
}
