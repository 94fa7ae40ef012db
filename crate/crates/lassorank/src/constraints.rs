//! Constraint construction: turns (program, template, invariant slots)
//! into an existential system of linear and bilinear atoms over solver
//! variables, via Motzkin transposition of each universally quantified
//! implication.
//!
//! Internally an invariant slot is a pair of solver variables `(s, t)`
//! read as `s . x >= t` (or `> t` for strict slots); supporting invariants
//! are reported in the `s . x + t' >= 0` form with `t' = -t`. Under this
//! convention the initiation and consecution subsystems come out as
//!
//! ```text
//! lam.B + mu.B' + xi*s       = 0,  lam.b + mu.b' + xi*t      <= 0,
//!   (lam.b < 0  or  xi + sum mu > 0)
//! lam.A + mu.A' + chi2*(0,s) - chi1*(s,0) = 0,
//!   lam.c + mu.c' + (chi2 - chi1)*t <= 0,
//!   (lam.c - chi1*t < 0  or  chi2 + sum mu > 0)
//! ```
//!
//! The template implication is transposed the same way, with one
//! multiplier per invariant slot and one per template atom occurrence;
//! its final disjunction separates the multipliers of negated strict
//! atoms from the constants of negated non-strict ones.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::linear::{LinAtom, Polyhedron, Relation, Var};
use crate::parse::LassoProgram;
use crate::rational::{fmt_rational, Rational};
use crate::templates::{Coloring, Color, Template, TemplateRel};

/// Role of a solver variable; indices make the derived name deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRole {
    /// Invariant coefficient `s[var]` of a replicated invariant copy.
    InvCoeff { copy: usize, var: usize },
    /// Invariant threshold `t` of a copy.
    InvConst { copy: usize },
    /// Coefficient of an affine function symbol.
    FuncCoeff { func: usize, var: usize },
    /// Constant of an affine function symbol.
    FuncConst { func: usize },
    /// Scalar template variable (e.g. a step size).
    Scalar { index: usize },
    /// Multiplier of a non-strict stem/loop row.
    Lambda { subsystem: usize, row: usize },
    /// Multiplier of a strict stem/loop row.
    Mu { subsystem: usize, row: usize },
    /// Multiplier of the negated invariant in an initiation subsystem.
    Xi { subsystem: usize },
    /// Multiplier of the invariant premise in a consecution subsystem.
    Chi1 { subsystem: usize },
    /// Multiplier of the negated post-state invariant in a consecution.
    Chi2 { subsystem: usize },
    /// Multiplier of an invariant premise in a template implication.
    TiXi { subsystem: usize, slot: usize },
    /// Multiplier of a negated template atom occurrence.
    Zeta { subsystem: usize, conjunct: usize, position: usize },
}

impl VarRole {
    pub fn name(&self) -> String {
        match self {
            VarRole::InvCoeff { copy, var } => format!("v_s_{copy}_{var}"),
            VarRole::InvConst { copy } => format!("v_t_{copy}"),
            VarRole::FuncCoeff { func, var } => format!("v_fc_{func}_{var}"),
            VarRole::FuncConst { func } => format!("v_fk_{func}"),
            VarRole::Scalar { index } => format!("v_d_{index}"),
            VarRole::Lambda { subsystem, row } => format!("v_lam_{subsystem}_{row}"),
            VarRole::Mu { subsystem, row } => format!("v_mu_{subsystem}_{row}"),
            VarRole::Xi { subsystem } => format!("v_xi_{subsystem}"),
            VarRole::Chi1 { subsystem } => format!("v_chi1_{subsystem}"),
            VarRole::Chi2 { subsystem } => format!("v_chi2_{subsystem}"),
            VarRole::TiXi { subsystem, slot } => format!("v_tixi_{subsystem}_{slot}"),
            VarRole::Zeta {
                subsystem,
                conjunct,
                position,
            } => format!("v_zeta_{subsystem}_{conjunct}_{position}"),
        }
    }

    /// Motzkin-coefficient roles carry a non-negativity constraint.
    pub fn is_multiplier(&self) -> bool {
        matches!(
            self,
            VarRole::Lambda { .. }
                | VarRole::Mu { .. }
                | VarRole::Xi { .. }
                | VarRole::Chi1 { .. }
                | VarRole::Chi2 { .. }
                | VarRole::TiXi { .. }
                | VarRole::Zeta { .. }
        )
    }
}

#[derive(Debug, Clone)]
pub struct SolverVar {
    pub var: Var,
    pub role: VarRole,
    pub nonneg: bool,
}

// ---------------------------------------------------------------------------
// Expressions

/// Affine expression over solver variables.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AffExpr {
    pub constant: Rational,
    pub linear: BTreeMap<Var, Rational>,
}

impl AffExpr {
    pub fn constant(c: Rational) -> Self {
        AffExpr {
            constant: c,
            linear: BTreeMap::new(),
        }
    }

    pub fn var(v: Var) -> Self {
        let mut linear = BTreeMap::new();
        linear.insert(v, Rational::one());
        AffExpr {
            constant: Rational::zero(),
            linear,
        }
    }

    pub fn zero() -> Self {
        AffExpr::default()
    }

    pub fn add_term(&mut self, v: Var, c: Rational) {
        if c.is_zero() {
            return;
        }
        let e = self.linear.entry(v).or_insert_with(Rational::zero);
        *e += c;
        if e.is_zero() {
            self.linear.remove(&v);
        }
    }

    pub fn neg(&self) -> Self {
        AffExpr {
            constant: -self.constant.clone(),
            linear: self.linear.iter().map(|(v, c)| (*v, -c)).collect(),
        }
    }
}

/// Expression with an optional bilinear part. In every bilinear term the
/// first factor is the designated Motzkin-side multiplier.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuadExpr {
    pub constant: Rational,
    pub linear: BTreeMap<Var, Rational>,
    pub bilinear: BTreeMap<(Var, Var), Rational>,
}

impl QuadExpr {
    pub fn zero() -> Self {
        QuadExpr::default()
    }

    fn add_linear(&mut self, v: Var, c: &Rational) {
        if c.is_zero() {
            return;
        }
        let e = self.linear.entry(v).or_insert_with(Rational::zero);
        *e += c;
        if e.is_zero() {
            self.linear.remove(&v);
        }
    }

    fn add_bilinear(&mut self, factor: Var, other: Var, c: &Rational) {
        if c.is_zero() {
            return;
        }
        let e = self
            .bilinear
            .entry((factor, other))
            .or_insert_with(Rational::zero);
        *e += c;
        if e.is_zero() {
            self.bilinear.remove(&(factor, other));
        }
    }

    /// Adds `mult * expr` where `mult` is a multiplier variable or the
    /// constant one.
    pub fn add_mult(&mut self, mult: &Mult, expr: &AffExpr) {
        match mult {
            Mult::One => {
                self.constant += &expr.constant;
                for (v, c) in &expr.linear {
                    self.add_linear(*v, c);
                }
            }
            Mult::Times(m) => {
                if !expr.constant.is_zero() {
                    let c = expr.constant.clone();
                    self.add_linear(*m, &c);
                }
                for (v, c) in &expr.linear {
                    self.add_bilinear(*m, *v, c);
                }
            }
        }
    }

    pub fn is_linear(&self) -> bool {
        self.bilinear.is_empty()
    }

    /// Substitutes values for a subset of variables, collapsing bilinear
    /// terms whose factor or co-factor becomes known.
    pub fn substitute(&self, values: &BTreeMap<Var, Rational>) -> QuadExpr {
        let mut out = QuadExpr {
            constant: self.constant.clone(),
            ..QuadExpr::default()
        };
        for (v, c) in &self.linear {
            match values.get(v) {
                Some(val) => out.constant += c * val,
                None => out.add_linear(*v, c),
            }
        }
        for ((a, b), c) in &self.bilinear {
            match (values.get(a), values.get(b)) {
                (Some(va), Some(vb)) => out.constant += c * va * vb,
                (Some(va), None) => {
                    let cc = c * va;
                    out.add_linear(*b, &cc);
                }
                (None, Some(vb)) => {
                    let cc = c * vb;
                    out.add_linear(*a, &cc);
                }
                (None, None) => out.add_bilinear(*a, *b, c),
            }
        }
        out
    }

    /// Exact value under a total valuation.
    pub fn eval(&self, values: &BTreeMap<Var, Rational>) -> Option<Rational> {
        let mut acc = self.constant.clone();
        for (v, c) in &self.linear {
            acc += c * values.get(v)?;
        }
        for ((a, b), c) in &self.bilinear {
            acc += c * values.get(a)? * values.get(b)?;
        }
        Some(acc)
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut s: BTreeSet<Var> = self.linear.keys().copied().collect();
        for (a, b) in self.bilinear.keys() {
            s.insert(*a);
            s.insert(*b);
        }
        s
    }
}

/// Relation of a subsystem atom, always against zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Eq,
    Le,
    Lt,
    Gt,
}

/// Lowers a linear `expr rel 0` atom to core `LinAtom`s (`Eq` becomes a
/// pair). Returns `None` if the expression still has bilinear terms.
pub fn lower_atom(expr: &QuadExpr, rel: Rel) -> Option<Vec<LinAtom>> {
    if !expr.is_linear() {
        return None;
    }
    let le = |e: &QuadExpr, r: Relation| {
        LinAtom::new(
            e.linear.iter().map(|(v, c)| (*v, c.clone())),
            -e.constant.clone(),
            r,
        )
    };
    let neg = QuadExpr {
        constant: -expr.constant.clone(),
        linear: expr.linear.iter().map(|(v, c)| (*v, -c)).collect(),
        bilinear: BTreeMap::new(),
    };
    Some(match rel {
        Rel::Eq => vec![le(expr, Relation::Le), le(&neg, Relation::Le)],
        Rel::Le => vec![le(expr, Relation::Le)],
        Rel::Lt => vec![le(expr, Relation::Lt)],
        Rel::Gt => vec![le(&neg, Relation::Lt)],
    })
}

// ---------------------------------------------------------------------------
// Motzkin transposition

/// Multiplier attached to one row: a fresh variable, or the constant one
/// for coefficients pinned at construction time.
#[derive(Debug, Clone, Copy)]
pub enum Mult {
    Times(Var),
    One,
}

/// One row `coeffs . z (<=|<) rhs` of a universally quantified system;
/// entries may be affine in other solver variables.
pub struct MRow {
    pub coeffs: Vec<AffExpr>,
    pub rhs: AffExpr,
    pub strict: bool,
    pub mult: Mult,
}

/// Applies the transposition theorem to a conjunction of rows: the
/// negated universal statement holds iff there are non-negative
/// multipliers with zero combined coefficients, non-positive combined
/// right-hand side, and either a negative non-strict combination or a
/// positive strict multiplier sum.
pub fn transpose_rows(rows: &[MRow], zdim: usize) -> (Vec<QuadExpr>, QuadExpr, QuadExpr, QuadExpr) {
    let mut eqs = vec![QuadExpr::zero(); zdim];
    let mut bound = QuadExpr::zero();
    let mut classical = QuadExpr::zero();
    let mut nonclassical = QuadExpr::zero();
    let one = AffExpr::constant(Rational::one());
    for row in rows {
        debug_assert_eq!(row.coeffs.len(), zdim);
        for (j, c) in row.coeffs.iter().enumerate() {
            eqs[j].add_mult(&row.mult, c);
        }
        bound.add_mult(&row.mult, &row.rhs);
        if row.strict {
            nonclassical.add_mult(&row.mult, &one);
        } else {
            classical.add_mult(&row.mult, &row.rhs);
        }
    }
    (eqs, bound, classical, nonclassical)
}

/// The classical/non-classical split of the transposed disjunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disjunct {
    Classical,
    NonClassical,
}

impl Disjunct {
    pub fn as_str(&self) -> &'static str {
        match self {
            Disjunct::Classical => "classical",
            Disjunct::NonClassical => "nonclassical",
        }
    }
}

/// Result of transposing a constant-coefficient system `A z <= b`,
/// `B z < d`: an existential system over fresh multipliers `lambda`
/// (per non-strict row) and `mu` (per strict row).
#[derive(Debug, Clone)]
pub struct MotzkinSystem {
    pub lambda: Vec<Var>,
    pub mu: Vec<Var>,
    pub eqs: Vec<QuadExpr>,
    pub bound: QuadExpr,
    pub classical: QuadExpr,
    pub nonclassical: QuadExpr,
}

/// Motzkin-transposes a constant system. The input rows range over
/// `varspace`; the output system ranges over the fresh multipliers.
pub fn motzkin_transpose(
    nonstrict: &[LinAtom],
    strict: &[LinAtom],
    varspace: &[Var],
) -> MotzkinSystem {
    let mut rows = Vec::new();
    let mut next = 0u32;
    let mut lambda = Vec::new();
    let mut mu = Vec::new();
    let coeffs_of = |a: &LinAtom| {
        varspace
            .iter()
            .map(|v| {
                AffExpr::constant(a.coeffs.get(v).cloned().unwrap_or_else(Rational::zero))
            })
            .collect::<Vec<_>>()
    };
    for a in nonstrict {
        let v = Var(next);
        next += 1;
        lambda.push(v);
        rows.push(MRow {
            coeffs: coeffs_of(a),
            rhs: AffExpr::constant(a.constant.clone()),
            strict: false,
            mult: Mult::Times(v),
        });
    }
    for a in strict {
        let v = Var(next);
        next += 1;
        mu.push(v);
        rows.push(MRow {
            coeffs: coeffs_of(a),
            rhs: AffExpr::constant(a.constant.clone()),
            strict: true,
            mult: Mult::Times(v),
        });
    }
    let (eqs, bound, classical, nonclassical) = transpose_rows(&rows, varspace.len());
    MotzkinSystem {
        lambda,
        mu,
        eqs,
        bound,
        classical,
        nonclassical,
    }
}

impl MotzkinSystem {
    /// Linear polyhedron of one branch of the disjunction, including
    /// non-negativity of all multipliers.
    pub fn branch_polyhedron(&self, d: Disjunct) -> Polyhedron {
        let mut vars: Vec<Var> = self.lambda.clone();
        vars.extend(&self.mu);
        let mut atoms: Vec<LinAtom> = Vec::new();
        for v in &vars {
            // v >= 0 as -v <= 0
            atoms.push(LinAtom::new([(*v, -Rational::one())], Rational::zero(), Relation::Le));
        }
        for eq in &self.eqs {
            atoms.extend(lower_atom(eq, Rel::Eq).expect("constant system is linear"));
        }
        atoms.extend(lower_atom(&self.bound, Rel::Le).unwrap());
        match d {
            Disjunct::Classical => atoms.extend(lower_atom(&self.classical, Rel::Lt).unwrap()),
            Disjunct::NonClassical => atoms.extend(lower_atom(&self.nonclassical, Rel::Gt).unwrap()),
        }
        Polyhedron::from_atoms(vars, atoms)
    }

    /// Satisfiability of the transposed system, trying the classical
    /// disjunct first.
    pub fn solve(&self) -> Option<(crate::linear::Valuation, Disjunct)> {
        for d in [Disjunct::Classical, Disjunct::NonClassical] {
            if let crate::fm::Feasibility::Sat(v) = crate::fm::fm_feasible(&self.branch_polyhedron(d)) {
                return Some((v, d));
            }
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Constraint system

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsystemKind {
    /// Invariant initiation for one copy and one stem disjunct.
    Initiation { copy: usize, stem_disjunct: usize },
    /// Invariant consecution for one copy and one loop disjunct.
    Consecution { copy: usize, loop_disjunct: usize },
    /// Template implication for one conjunct and one loop disjunct.
    TemplateImplication { conjunct: usize, loop_disjunct: usize },
}

/// A `{0,1}`-style fixing of one Motzkin coefficient; the branch tree is
/// the product of all fixings.
#[derive(Debug, Clone)]
pub struct Fixing {
    pub var: Var,
    pub values: Vec<Rational>,
}

#[derive(Debug, Clone)]
pub struct Subsystem {
    pub kind: SubsystemKind,
    /// One equation per z-column, `expr = 0`.
    pub eqs: Vec<QuadExpr>,
    /// `expr <= 0`.
    pub bound: QuadExpr,
    /// Classical disjunct, `expr < 0`.
    pub classical: QuadExpr,
    /// Non-classical disjunct, `expr > 0`.
    pub nonclassical: QuadExpr,
    /// Multiplier variables introduced for this subsystem.
    pub locals: Vec<Var>,
    /// Branch points added by quantifier omission.
    pub fixings: Vec<Fixing>,
}

impl Subsystem {
    /// Substituted atom list for one branch choice of this subsystem.
    pub fn atoms(
        &self,
        values: &BTreeMap<Var, Rational>,
        disjunct: Disjunct,
    ) -> Vec<(QuadExpr, Rel)> {
        let mut out = Vec::with_capacity(self.eqs.len() + 2);
        for eq in &self.eqs {
            out.push((eq.substitute(values), Rel::Eq));
        }
        out.push((self.bound.substitute(values), Rel::Le));
        match disjunct {
            Disjunct::Classical => out.push((self.classical.substitute(values), Rel::Lt)),
            Disjunct::NonClassical => out.push((self.nonclassical.substitute(values), Rel::Gt)),
        }
        out
    }

    pub fn exprs(&self) -> impl Iterator<Item = &QuadExpr> {
        self.eqs
            .iter()
            .chain([&self.bound, &self.classical, &self.nonclassical])
    }
}

/// Index-set sizes of the built system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub num_stem: usize,
    pub num_loop: usize,
    pub num_conjuncts: usize,
    pub num_invariants: usize,
    pub num_copies: usize,
    pub num_funcs: usize,
    pub num_scalars: usize,
}

/// One replicated invariant copy `(slot, conjunct, loop disjunct)`.
#[derive(Debug, Clone)]
pub struct CopyInfo {
    pub slot: usize,
    pub conjunct: usize,
    pub loop_disjunct: usize,
    pub strict: bool,
    pub coeff_vars: Vec<Var>,
    pub const_var: Var,
}

/// Variables realizing the template's function symbols and scalars.
#[derive(Debug, Clone)]
pub struct TemplateVarMap {
    pub func_coeffs: Vec<Vec<Var>>,
    pub func_consts: Vec<Var>,
    pub scalars: Vec<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvariantMode {
    General,
    NonDecreasing,
}

impl InvariantMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InvariantMode::General => "general",
            InvariantMode::NonDecreasing => "nondecreasing",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    pub vars: Vec<SolverVar>,
    pub subsystems: Vec<Subsystem>,
    pub dims: Dims,
    pub copies: Vec<CopyInfo>,
    pub template_vars: TemplateVarMap,
    pub mode: InvariantMode,
    pub strict_slots: Vec<bool>,
    pub omitted: bool,
}

impl ConstraintSystem {
    pub fn var_name(&self, v: Var) -> String {
        self.vars[v.0 as usize].role.name()
    }

    pub fn lookup_name(&self, name: &str) -> Option<Var> {
        self.vars
            .iter()
            .find(|sv| sv.role.name() == name)
            .map(|sv| sv.var)
    }

    /// Total branch count, the product of all fixing arities.
    pub fn total_branches(&self) -> BigUint {
        let mut total = BigUint::one();
        for sub in &self.subsystems {
            for fix in &sub.fixings {
                total *= BigUint::from(fix.values.len());
            }
        }
        total
    }
}

/// Exact rational values for the Motzkin coefficients of every subsystem,
/// the chosen disjunct per subsystem, the replicated invariant values and
/// the branch index the solution was found on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotzkinCertificate {
    pub multipliers: Vec<BTreeMap<Var, Rational>>,
    pub disjuncts: Vec<Disjunct>,
    pub copy_values: Vec<(Vec<Rational>, Rational)>,
    pub branch_id: BigUint,
}

struct Alloc {
    vars: Vec<SolverVar>,
}

impl Alloc {
    fn fresh(&mut self, role: VarRole) -> Var {
        let v = Var(self.vars.len() as u32);
        self.vars.push(SolverVar {
            var: v,
            role,
            nonneg: role.is_multiplier(),
        });
        v
    }
}

fn stem_row(atom: &LinAtom, n: usize, strict: bool, mult: Mult) -> MRow {
    MRow {
        coeffs: (0..n)
            .map(|j| {
                AffExpr::constant(
                    atom.coeffs
                        .get(&Var(j as u32))
                        .cloned()
                        .unwrap_or_else(Rational::zero),
                )
            })
            .collect(),
        rhs: AffExpr::constant(atom.constant.clone()),
        strict,
        mult,
    }
}

fn loop_row(atom: &LinAtom, n: usize, strict: bool, mult: Mult) -> MRow {
    MRow {
        coeffs: (0..2 * n)
            .map(|j| {
                AffExpr::constant(
                    atom.coeffs
                        .get(&Var(j as u32))
                        .cloned()
                        .unwrap_or_else(Rational::zero),
                )
            })
            .collect(),
        rhs: AffExpr::constant(atom.constant.clone()),
        strict,
        mult,
    }
}

/// Builds the existential constraint system: one initiation subsystem per
/// (copy, stem disjunct), one consecution per (copy, loop disjunct) and
/// one template implication per (conjunct, loop disjunct). In
/// non-decreasing mode the consecution premise multiplier is pinned to 1,
/// which makes those rows linear.
pub fn build_constraints(
    prog: &LassoProgram,
    template: &Template,
    num_invariants: usize,
    mode: InvariantMode,
    strict_slots: &[bool],
) -> ConstraintSystem {
    let n = prog.n();
    let num_funcs = template.num_funcs();
    let num_scalars = template.num_scalars();
    let num_i = template.num_conjuncts();
    let num_m = prog.loop_.len();
    let num_n = prog.stem.len();
    let num_copies = num_invariants * num_i * num_m;
    let strict_of = |slot: usize| strict_slots.get(slot).copied().unwrap_or(false);

    let mut alloc = Alloc { vars: Vec::new() };

    let func_coeffs: Vec<Vec<Var>> = (0..num_funcs)
        .map(|f| {
            (0..n)
                .map(|v| alloc.fresh(VarRole::FuncCoeff { func: f, var: v }))
                .collect()
        })
        .collect();
    let func_consts: Vec<Var> = (0..num_funcs)
        .map(|f| alloc.fresh(VarRole::FuncConst { func: f }))
        .collect();
    let scalars: Vec<Var> = (0..num_scalars)
        .map(|d| alloc.fresh(VarRole::Scalar { index: d }))
        .collect();

    // copy index layout: ((slot * I + i) * M + m)
    let mut copies = Vec::with_capacity(num_copies);
    for slot in 0..num_invariants {
        for i in 0..num_i {
            for m in 0..num_m {
                let copy = copies.len();
                copies.push(CopyInfo {
                    slot,
                    conjunct: i,
                    loop_disjunct: m,
                    strict: strict_of(slot),
                    coeff_vars: (0..n)
                        .map(|v| alloc.fresh(VarRole::InvCoeff { copy, var: v }))
                        .collect(),
                    const_var: alloc.fresh(VarRole::InvConst { copy }),
                });
            }
        }
    }

    let mut subsystems: Vec<Subsystem> = Vec::new();

    // (II) initiation: for every copy and stem disjunct.
    for (c, info) in copies.iter().enumerate() {
        for nn in 0..num_n {
            let sub_ix = subsystems.len();
            let mut rows = Vec::new();
            let mut locals = Vec::new();
            for (r, atom) in prog.stem[nn].nonstrict.iter().enumerate() {
                let v = alloc.fresh(VarRole::Lambda { subsystem: sub_ix, row: r });
                locals.push(v);
                rows.push(stem_row(atom, n, false, Mult::Times(v)));
            }
            for (r, atom) in prog.stem[nn].strict.iter().enumerate() {
                let v = alloc.fresh(VarRole::Mu { subsystem: sub_ix, row: r });
                locals.push(v);
                rows.push(stem_row(atom, n, true, Mult::Times(v)));
            }
            // negated invariant: s.x < t (non-strict slot) or s.x <= t (strict slot)
            let xi = alloc.fresh(VarRole::Xi { subsystem: sub_ix });
            locals.push(xi);
            rows.push(MRow {
                coeffs: info.coeff_vars.iter().map(|v| AffExpr::var(*v)).collect(),
                rhs: AffExpr::var(info.const_var),
                strict: !info.strict,
                mult: Mult::Times(xi),
            });
            let (eqs, bound, classical, nonclassical) = transpose_rows(&rows, n);
            subsystems.push(Subsystem {
                kind: SubsystemKind::Initiation { copy: c, stem_disjunct: nn },
                eqs,
                bound,
                classical,
                nonclassical,
                locals,
                fixings: Vec::new(),
            });
        }
    }

    // (IC) consecution: for every copy and loop disjunct.
    for (c, info) in copies.iter().enumerate() {
        for m in 0..num_m {
            let sub_ix = subsystems.len();
            let mut rows = Vec::new();
            let mut locals = Vec::new();
            // invariant premise: -s.x <= -t (strict slot: <)
            let chi1_mult = match mode {
                InvariantMode::General => {
                    let v = alloc.fresh(VarRole::Chi1 { subsystem: sub_ix });
                    locals.push(v);
                    Mult::Times(v)
                }
                InvariantMode::NonDecreasing => Mult::One,
            };
            let mut premise_coeffs: Vec<AffExpr> =
                info.coeff_vars.iter().map(|v| AffExpr::var(*v).neg()).collect();
            premise_coeffs.extend((0..n).map(|_| AffExpr::zero()));
            rows.push(MRow {
                coeffs: premise_coeffs,
                rhs: AffExpr::var(info.const_var).neg(),
                strict: info.strict,
                mult: chi1_mult,
            });
            for (r, atom) in prog.loop_[m].nonstrict.iter().enumerate() {
                let v = alloc.fresh(VarRole::Lambda { subsystem: sub_ix, row: r });
                locals.push(v);
                rows.push(loop_row(atom, n, false, Mult::Times(v)));
            }
            for (r, atom) in prog.loop_[m].strict.iter().enumerate() {
                let v = alloc.fresh(VarRole::Mu { subsystem: sub_ix, row: r });
                locals.push(v);
                rows.push(loop_row(atom, n, true, Mult::Times(v)));
            }
            // negated post-state invariant: s.x' < t (strict slot: <=)
            let chi2 = alloc.fresh(VarRole::Chi2 { subsystem: sub_ix });
            locals.push(chi2);
            let mut post_coeffs: Vec<AffExpr> = (0..n).map(|_| AffExpr::zero()).collect();
            post_coeffs.extend(info.coeff_vars.iter().map(|v| AffExpr::var(*v)));
            rows.push(MRow {
                coeffs: post_coeffs,
                rhs: AffExpr::var(info.const_var),
                strict: !info.strict,
                mult: Mult::Times(chi2),
            });
            let (eqs, bound, classical, nonclassical) = transpose_rows(&rows, 2 * n);
            subsystems.push(Subsystem {
                kind: SubsystemKind::Consecution { copy: c, loop_disjunct: m },
                eqs,
                bound,
                classical,
                nonclassical,
                locals,
                fixings: Vec::new(),
            });
        }
    }

    // (TI) template implication: for every conjunct and loop disjunct.
    for i in 0..num_i {
        for m in 0..num_m {
            let sub_ix = subsystems.len();
            let mut rows = Vec::new();
            let mut locals = Vec::new();
            for (r, atom) in prog.loop_[m].nonstrict.iter().enumerate() {
                let v = alloc.fresh(VarRole::Lambda { subsystem: sub_ix, row: r });
                locals.push(v);
                rows.push(loop_row(atom, n, false, Mult::Times(v)));
            }
            for (r, atom) in prog.loop_[m].strict.iter().enumerate() {
                let v = alloc.fresh(VarRole::Mu { subsystem: sub_ix, row: r });
                locals.push(v);
                rows.push(loop_row(atom, n, true, Mult::Times(v)));
            }
            // invariant premises: one copy per slot, the one replicated
            // for exactly this (slot, conjunct, disjunct)
            for slot in 0..num_invariants {
                let c = (slot * num_i + i) * num_m + m;
                let info = &copies[c];
                let v = alloc.fresh(VarRole::TiXi { subsystem: sub_ix, slot });
                locals.push(v);
                let mut coeffs: Vec<AffExpr> =
                    info.coeff_vars.iter().map(|w| AffExpr::var(*w).neg()).collect();
                coeffs.extend((0..n).map(|_| AffExpr::zero()));
                rows.push(MRow {
                    coeffs,
                    rhs: AffExpr::var(info.const_var).neg(),
                    strict: info.strict,
                    mult: Mult::Times(v),
                });
            }
            // negated template atoms of conjunct i
            for (pos, atom) in template.conjuncts[i].iter().enumerate() {
                let v = alloc.fresh(VarRole::Zeta {
                    subsystem: sub_ix,
                    conjunct: i,
                    position: pos,
                });
                locals.push(v);
                let mut coeffs: Vec<AffExpr> = Vec::with_capacity(2 * n);
                for col in 0..n {
                    let mut e = AffExpr::zero();
                    for (f, a) in &atom.alpha {
                        e.add_term(func_coeffs[*f][col], a.clone());
                    }
                    coeffs.push(e);
                }
                for col in 0..n {
                    let mut e = AffExpr::zero();
                    for (f, b) in &atom.beta {
                        e.add_term(func_coeffs[*f][col], b.clone());
                    }
                    coeffs.push(e);
                }
                // e = -(sum (alpha+beta) t_f + sum gamma d)
                let mut rhs = AffExpr::zero();
                for (f, a) in &atom.alpha {
                    rhs.add_term(func_consts[*f], -a.clone());
                }
                for (f, b) in &atom.beta {
                    rhs.add_term(func_consts[*f], -b.clone());
                }
                for (d, g) in &atom.gamma {
                    rhs.add_term(scalars[*d], -g.clone());
                }
                rows.push(MRow {
                    coeffs,
                    rhs,
                    // negating `> 0` gives a non-strict row, negating
                    // `>= 0` a strict one
                    strict: atom.relation == TemplateRel::Ge,
                    mult: Mult::Times(v),
                });
            }
            let (eqs, bound, classical, nonclassical) = transpose_rows(&rows, 2 * n);
            subsystems.push(Subsystem {
                kind: SubsystemKind::TemplateImplication { conjunct: i, loop_disjunct: m },
                eqs,
                bound,
                classical,
                nonclassical,
                locals,
                fixings: Vec::new(),
            });
        }
    }

    debug_assert_eq!(
        subsystems.len(),
        num_copies * num_n + num_copies * num_m + num_i * num_m
    );

    ConstraintSystem {
        vars: alloc.vars,
        subsystems,
        dims: Dims {
            n,
            num_stem: num_n,
            num_loop: num_m,
            num_conjuncts: num_i,
            num_invariants,
            num_copies,
            num_funcs,
            num_scalars,
        },
        copies,
        template_vars: TemplateVarMap {
            func_coeffs,
            func_consts,
            scalars,
        },
        mode,
        strict_slots: (0..num_invariants).map(strict_of).collect(),
        omitted: false,
    }
}

/// Adds the `{0,1}`-fixing branch points licensed by a suitable coloring:
/// the initiation multiplier and the consecution post-state multiplier are
/// fixed to `{0,1}`, the multipliers of red and blue template atoms to
/// `{0,1}`, and the template-implication invariant multipliers to `{0,1}`
/// for strict slots and `{1}` for non-strict ones. White atoms keep their
/// symbolic multiplier.
pub fn omit_quantifiers(
    sys: &ConstraintSystem,
    template: &Template,
    eta: &Coloring,
) -> Result<ConstraintSystem, crate::templates::TemplateError> {
    if !crate::templates::is_suitable_coloring(template, eta) {
        return Err(crate::templates::TemplateError::UnsuitableColoring);
    }
    let zero_one = vec![Rational::zero(), Rational::one()];
    let one = vec![Rational::one()];
    let mut out = sys.clone();
    for sub in &mut out.subsystems {
        match sub.kind {
            SubsystemKind::Initiation { .. } => {
                let xi = *sub.locals.last().expect("initiation has a xi multiplier");
                sub.fixings.push(Fixing { var: xi, values: zero_one.clone() });
            }
            SubsystemKind::Consecution { .. } => {
                let chi2 = *sub.locals.last().expect("consecution has a chi2 multiplier");
                sub.fixings.push(Fixing { var: chi2, values: zero_one.clone() });
            }
            SubsystemKind::TemplateImplication { conjunct, .. } => {
                for v in &sub.locals {
                    match sys.vars[v.0 as usize].role {
                        VarRole::TiXi { slot, .. } => {
                            let values = if sys.strict_slots[slot] { zero_one.clone() } else { one.clone() };
                            sub.fixings.push(Fixing { var: *v, values });
                        }
                        VarRole::Zeta { position, .. } => {
                            match eta.0[conjunct][position] {
                                Color::Red | Color::Blue => {
                                    sub.fixings.push(Fixing { var: *v, values: zero_one.clone() });
                                }
                                Color::White => {}
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    out.omitted = true;
    Ok(out)
}

/// Structural count of the residual non-linear dimension: the distinct
/// symbolic factors of bilinear atoms, after discounting fixed
/// multipliers. The consecution premise multipliers of one invariant copy
/// are counted once per copy, matching the per-copy rescaling freedom the
/// omission argument exploits.
pub fn nonlinear_dimension(sys: &ConstraintSystem) -> usize {
    let fixed: BTreeSet<Var> = sys
        .subsystems
        .iter()
        .flat_map(|s| s.fixings.iter().map(|f| f.var))
        .collect();
    let mut dims: BTreeSet<(u8, usize)> = BTreeSet::new();
    for sub in &sys.subsystems {
        for expr in sub.exprs() {
            for (factor, _) in expr.bilinear.keys() {
                if fixed.contains(factor) {
                    continue;
                }
                match sys.vars[factor.0 as usize].role {
                    VarRole::Chi1 { subsystem } => {
                        if let SubsystemKind::Consecution { copy, .. } = sys.subsystems[subsystem].kind {
                            dims.insert((1, copy));
                        }
                    }
                    _ => {
                        dims.insert((0, factor.0 as usize));
                    }
                }
            }
        }
    }
    dims.len()
}

/// Returns `true` iff every branch of the omitted system is free of
/// bilinear atoms once its fixings are substituted.
pub fn branches_are_linear(sys: &ConstraintSystem) -> bool {
    sys.subsystems.iter().all(|sub| {
        let fixed: BTreeSet<Var> = sub.fixings.iter().map(|f| f.var).collect();
        sub.exprs().all(|e| {
            e.bilinear
                .keys()
                .all(|(a, b)| fixed.contains(a) || fixed.contains(b))
        })
    })
}

/// The two published bounds on the non-linear dimension: the naive bound
/// `(n+1)#L + (n+1)#F + #D` before the transformations, and
/// `#M * deg + #L'` after (just `#M * deg` in non-decreasing mode).
pub fn predicted_dimensions(
    prog: &LassoProgram,
    template: &Template,
    num_invariants: usize,
    mode: InvariantMode,
) -> (usize, usize) {
    let n = prog.n();
    let num_m = prog.loop_.len();
    let naive = (n + 1) * num_invariants
        + (n + 1) * template.num_funcs()
        + template.num_scalars();
    let eta = crate::templates::canonical_coloring(template);
    let deg = crate::templates::coloring_degree(template, &eta).expect("canonical is suitable");
    let copies = num_invariants * template.num_conjuncts() * num_m;
    let transformed = match mode {
        InvariantMode::General => num_m * deg + copies,
        InvariantMode::NonDecreasing => num_m * deg,
    };
    (naive, transformed)
}

fn fmt_quad(expr: &QuadExpr, sys: &ConstraintSystem) -> String {
    let mut parts = Vec::new();
    if !expr.constant.is_zero() {
        parts.push(fmt_rational(&expr.constant));
    }
    for (v, c) in &expr.linear {
        let name = sys.var_name(*v);
        if c.is_one() {
            parts.push(name);
        } else {
            parts.push(format!("{}*{}", fmt_rational(c), name));
        }
    }
    for ((a, b), c) in &expr.bilinear {
        let term = format!("{}*{}", sys.var_name(*a), sys.var_name(*b));
        if c.is_one() {
            parts.push(term);
        } else {
            parts.push(format!("{}*{}", fmt_rational(c), term));
        }
    }
    if parts.is_empty() {
        "0".into()
    } else {
        parts.join(" + ")
    }
}

/// Human-readable dump: one block per subsystem, bilinear atoms flagged.
pub fn dump_system(sys: &ConstraintSystem) -> String {
    let mut out = String::new();
    let d = &sys.dims;
    out.push_str(&format!(
        "constraint system: n={} #N={} #M={} #I={} #L={} #L'={} mode={} subsystems={}\n",
        d.n,
        d.num_stem,
        d.num_loop,
        d.num_conjuncts,
        d.num_invariants,
        d.num_copies,
        sys.mode.as_str(),
        sys.subsystems.len()
    ));
    for (i, sub) in sys.subsystems.iter().enumerate() {
        let kind = match sub.kind {
            SubsystemKind::Initiation { copy, stem_disjunct } => {
                format!("initiation copy={copy} stem={stem_disjunct}")
            }
            SubsystemKind::Consecution { copy, loop_disjunct } => {
                format!("consecution copy={copy} loop={loop_disjunct}")
            }
            SubsystemKind::TemplateImplication { conjunct, loop_disjunct } => {
                format!("template-implication conjunct={conjunct} loop={loop_disjunct}")
            }
        };
        out.push_str(&format!("subsystem {i}: {kind}\n"));
        if !sub.fixings.is_empty() {
            let fx: Vec<String> = sub
                .fixings
                .iter()
                .map(|f| {
                    let vals: Vec<String> = f.values.iter().map(fmt_rational).collect();
                    format!("{} in {{{}}}", sys.var_name(f.var), vals.join(", "))
                })
                .collect();
            out.push_str(&format!("  branch points: {}\n", fx.join("; ")));
        }
        let flag = |e: &QuadExpr| if e.is_linear() { "" } else { "  [bilinear]" };
        for eq in &sub.eqs {
            out.push_str(&format!("  {} = 0{}\n", fmt_quad(eq, sys), flag(eq)));
        }
        out.push_str(&format!("  {} <= 0{}\n", fmt_quad(&sub.bound, sys), flag(&sub.bound)));
        out.push_str(&format!(
            "  {} < 0  OR  {} > 0{}{}\n",
            fmt_quad(&sub.classical, sys),
            fmt_quad(&sub.nonclassical, sys),
            flag(&sub.classical),
            flag(&sub.nonclassical)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fm::{fm_feasible, Feasibility};
    use crate::parse::{desugar_assignments, normalize, parse_program};
    use crate::rational::int;
    use crate::templates::{make_template, TemplateKind};

    fn atom(coeffs: &[(u32, i64)], constant: i64, rel: Relation) -> LinAtom {
        LinAtom::new(
            coeffs.iter().map(|(v, c)| (Var(*v), int(*c))),
            int(constant),
            rel,
        )
    }

    #[test]
    fn motzkin_contradictory_pair() {
        // x <= -1 and -x <= -1: infeasible; lambda = (1,1) certifies it.
        let ms = motzkin_transpose(
            &[atom(&[(0, 1)], -1, Relation::Le), atom(&[(0, -1)], -1, Relation::Le)],
            &[],
            &[Var(0)],
        );
        let (v, d) = ms.solve().expect("certificate exists");
        assert_eq!(d, Disjunct::Classical);
        // check the hand certificate also works
        let mut hand = v.clone();
        hand.insert(ms.lambda[0], int(1));
        hand.insert(ms.lambda[1], int(1));
        let p = ms.branch_polyhedron(Disjunct::Classical);
        assert_eq!(crate::linear::polyhedron_contains(&p, &hand), Ok(true));
    }

    #[test]
    fn motzkin_feasible_system_has_no_certificate() {
        // x <= 0 is feasible, so the transposed system is unsat.
        let ms = motzkin_transpose(&[atom(&[(0, 1)], 0, Relation::Le)], &[], &[Var(0)]);
        assert!(ms.solve().is_none());
    }

    #[test]
    fn motzkin_strict_nonclassical() {
        // x < 0 and -x < 0: infeasible via the non-classical disjunct.
        let ms = motzkin_transpose(
            &[],
            &[atom(&[(0, 1)], 0, Relation::Lt), atom(&[(0, -1)], 0, Relation::Lt)],
            &[Var(0)],
        );
        let (v, d) = ms.solve().expect("certificate exists");
        assert_eq!(d, Disjunct::NonClassical);
        let p = ms.branch_polyhedron(Disjunct::NonClassical);
        assert_eq!(crate::linear::polyhedron_contains(&p, &v), Ok(true));
    }

    #[test]
    fn farkas_special_case_shape() {
        // with no strict rows the non-classical disjunct is the empty sum
        let ms = motzkin_transpose(
            &[atom(&[(0, 1)], 2, Relation::Le)],
            &[],
            &[Var(0)],
        );
        assert!(ms.mu.is_empty());
        assert_eq!(ms.nonclassical, QuadExpr::zero());
        // classical disjunct is lambda^T b
        assert_eq!(ms.classical.linear.get(&ms.lambda[0]), Some(&int(2)));
    }

    fn prog(text: &str) -> LassoProgram {
        normalize(&desugar_assignments(&parse_program(text).unwrap()).unwrap()).unwrap()
    }

    #[test]
    fn subsystem_count_running_example() {
        let p = prog("vars q, y; stem: y = 1; loop: q >= 0 && assign { q := q - y; y := y + 1; };");
        let t = make_template(TemplateKind::Affine, 1).unwrap();
        let sys = build_constraints(&p, &t, 1, InvariantMode::NonDecreasing, &[]);
        assert_eq!(sys.dims.num_copies, 3);
        assert_eq!(sys.subsystems.len(), 9);
    }

    #[test]
    fn subsystem_count_gcd_lex() {
        let p = prog(
            "vars y1, y2; stem: y1 >= 1 && y2 >= 1;\n\
             loop: (y1 - y2 >= 1 && y1' = y1 - y2 && y2' = y2)\n\
                || (y2 - y1 >= 1 && y2' = y2 - y1 && y1' = y1);",
        );
        assert_eq!(p.loop_.len(), 2);
        let t = make_template(TemplateKind::Lex, 2).unwrap();
        let sys = build_constraints(&p, &t, 1, InvariantMode::General, &[]);
        // #L' = 1 * 6 * 2 = 12
        assert_eq!(sys.dims.num_copies, 12);
        assert_eq!(sys.subsystems.len(), 12 * 1 + 12 * 2 + 6 * 2);
    }

    #[test]
    fn false_loop_template_implication_satisfiable() {
        // each template implication is satisfied by lambda = 1, rest 0
        let p = prog("vars x; stem: true; loop: false;");
        let t = make_template(TemplateKind::Affine, 1).unwrap();
        let sys = build_constraints(&p, &t, 0, InvariantMode::General, &[]);
        let values: BTreeMap<Var, Rational> = sys
            .vars
            .iter()
            .map(|sv| {
                let v = match sv.role {
                    VarRole::Lambda { .. } => int(1),
                    _ => int(0),
                };
                (sv.var, v)
            })
            .collect();
        for sub in &sys.subsystems {
            for (expr, rel) in sub.atoms(&BTreeMap::new(), Disjunct::Classical) {
                let val = expr.eval(&values).unwrap();
                let ok = match rel {
                    Rel::Eq => val.is_zero(),
                    Rel::Le => val <= int(0),
                    Rel::Lt => val < int(0),
                    Rel::Gt => val > int(0),
                };
                assert!(ok, "atom failed: {val}");
            }
        }
    }

    #[test]
    fn omission_fixings() {
        let p = prog("vars q, y; stem: y = 1; loop: q >= 0 && assign { q := q - y; y := y + 1; };");
        let t = make_template(TemplateKind::Affine, 1).unwrap();
        let eta = crate::templates::canonical_coloring(&t);
        let sys = build_constraints(&p, &t, 1, InvariantMode::NonDecreasing, &[]);
        let sys = omit_quantifiers(&sys, &t, &eta).unwrap();
        for sub in &sys.subsystems {
            match sub.kind {
                SubsystemKind::Initiation { .. } | SubsystemKind::Consecution { .. } => {
                    assert_eq!(sub.fixings.len(), 1);
                    assert_eq!(sub.fixings[0].values.len(), 2);
                }
                SubsystemKind::TemplateImplication { .. } => {
                    // one non-strict invariant slot fixed to {1} plus one
                    // red atom fixed to {0,1}
                    assert_eq!(sub.fixings.len(), 2);
                    let sizes: Vec<usize> = sub.fixings.iter().map(|f| f.values.len()).collect();
                    assert!(sizes.contains(&1) && sizes.contains(&2));
                }
            }
        }
        // degree-0 template in non-decreasing mode: all branches linear
        assert!(branches_are_linear(&sys));
        assert_eq!(nonlinear_dimension(&sys), 0);
    }

    #[test]
    fn nonlinear_dimension_gcd_lex_general() {
        let p = prog(
            "vars y1, y2; stem: y1 >= 1 && y2 >= 1;\n\
             loop: (y1 - y2 >= 1 && y1' = y1 - y2 && y2' = y2)\n\
                || (y2 - y1 >= 1 && y2' = y2 - y1 && y1' = y1);",
        );
        let t = make_template(TemplateKind::Lex, 2).unwrap();
        let eta = crate::templates::canonical_coloring(&t);
        let sys = build_constraints(&p, &t, 1, InvariantMode::General, &[]);
        let sys = omit_quantifiers(&sys, &t, &eta).unwrap();
        assert_eq!(nonlinear_dimension(&sys), 12);
        let (naive, bound) = predicted_dimensions(&p, &t, 1, InvariantMode::General);
        assert_eq!(bound, 12);
        assert_eq!(naive, 3 * 1 + 3 * 2 + 2);
    }

    #[test]
    fn predicted_dimensions_examples() {
        // 2-phase program with phase:2, non-decreasing: #M * deg = 1 * 1
        let p = prog("vars q, y; stem: true; loop: q >= 0 && assign { q := q - y; y := y + 1; };");
        let t = make_template(TemplateKind::Phase, 2).unwrap();
        let (_, bound) = predicted_dimensions(&p, &t, 0, InvariantMode::NonDecreasing);
        assert_eq!(bound, 1);
        // affine, non-decreasing: always 0
        let t = make_template(TemplateKind::Affine, 1).unwrap();
        let (_, bound) = predicted_dimensions(&p, &t, 0, InvariantMode::NonDecreasing);
        assert_eq!(bound, 0);
        // naive bound for the running example with one invariant slot
        let (naive, _) = predicted_dimensions(&p, &t, 1, InvariantMode::General);
        assert_eq!(naive, 7);
    }

    #[test]
    fn dump_flags_bilinear() {
        let p = prog("vars q, y; stem: y = 1; loop: q >= 0 && assign { q := q - y; y := y + 1; };");
        let t = make_template(TemplateKind::Affine, 1).unwrap();
        let sys = build_constraints(&p, &t, 1, InvariantMode::General, &[]);
        let dump = dump_system(&sys);
        assert!(dump.contains("[bilinear]"));
        assert!(dump.contains("initiation"));
        assert!(dump.contains("template-implication"));
    }

    #[test]
    fn motzkin_equivalence_feasibility() {
        // if the original system is feasible there is no certificate, and
        // vice versa, on a couple of hand cases each
        let cases: Vec<(Vec<LinAtom>, Vec<LinAtom>)> = vec![
            (vec![atom(&[(0, 1), (1, 1)], 2, Relation::Le)], vec![]),
            (
                vec![atom(&[(0, 1)], 0, Relation::Le), atom(&[(0, -1)], -1, Relation::Le)],
                vec![],
            ),
            (
                vec![atom(&[(0, 1)], 1, Relation::Le)],
                vec![atom(&[(0, -1)], -1, Relation::Lt)],
            ),
        ];
        for (nonstrict, strict) in cases {
            let vars = vec![Var(0), Var(1)];
            let p = Polyhedron::from_atoms(
                vars.clone(),
                nonstrict.iter().chain(strict.iter()).cloned(),
            );
            let feasible = matches!(fm_feasible(&p), Feasibility::Sat(_));
            let ms = motzkin_transpose(&nonstrict, &strict, &vars);
            assert_eq!(ms.solve().is_some(), !feasible);
        }
    }
}
