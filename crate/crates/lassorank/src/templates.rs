//! Ranking-function templates: affine, k-phase, k-piece and
//! k-lexicographic, together with dependency graphs, colorings and
//! template degrees.
//!
//! A template is a CNF over atoms of the canonical form
//! `sum alpha_f f(x) + sum beta_f f(x') + sum gamma_d d (>|>=) 0`,
//! where the `f` are affine-linear function symbols and the `d` scalar
//! template variables. Atom occurrences are addressed by
//! `(conjunct index, position)` in a fixed construction order, since
//! colorings refer to occurrences rather than atoms.

use std::collections::BTreeMap;

use num_traits::Zero;
use thiserror::Error;

use crate::rational::{int, Rational};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template size k must be at least 1")]
    ZeroK,
    #[error("the affine template has no size parameter (k = 1)")]
    AffineWithK,
    #[error("coloring is not suitable for this template")]
    UnsuitableColoring,
    #[error("unknown template spec '{0}' (expected affine, phase:k, piece:k or lex:k)")]
    BadSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Affine,
    Phase,
    Piece,
    Lex,
}

impl TemplateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateKind::Affine => "affine",
            TemplateKind::Phase => "phase",
            TemplateKind::Piece => "piece",
            TemplateKind::Lex => "lex",
        }
    }
}

/// Relation of a template atom; atoms are written `expr (>|>=) 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateRel {
    Gt,
    Ge,
}

/// One template atom in canonical form. Keys are indices into the
/// template's function-symbol list (`alpha`, `beta`) and scalar list
/// (`gamma`); zero coefficients are not stored and empty atoms are
/// disallowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateAtom {
    pub alpha: BTreeMap<usize, Rational>,
    pub beta: BTreeMap<usize, Rational>,
    pub gamma: BTreeMap<usize, Rational>,
    pub relation: TemplateRel,
}

impl TemplateAtom {
    fn new(
        alpha: impl IntoIterator<Item = (usize, i64)>,
        beta: impl IntoIterator<Item = (usize, i64)>,
        gamma: impl IntoIterator<Item = (usize, i64)>,
        relation: TemplateRel,
    ) -> Self {
        let conv = |it: &mut dyn Iterator<Item = (usize, i64)>| {
            it.map(|(k, v)| (k, int(v)))
                .filter(|(_, v)| !v.is_zero())
                .collect::<BTreeMap<_, _>>()
        };
        let atom = TemplateAtom {
            alpha: conv(&mut alpha.into_iter()),
            beta: conv(&mut beta.into_iter()),
            gamma: conv(&mut gamma.into_iter()),
            relation,
        };
        assert!(
            !(atom.alpha.is_empty() && atom.beta.is_empty() && atom.gamma.is_empty()),
            "empty template atoms are disallowed"
        );
        atom
    }

    /// Symbols occurring in this atom (nonzero coefficient).
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut out = Vec::new();
        for f in self.alpha.keys().chain(self.beta.keys()) {
            let s = Symbol::Func(*f);
            if !out.contains(&s) {
                out.push(s);
            }
        }
        for d in self.gamma.keys() {
            let s = Symbol::Scalar(*d);
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }
}

/// A function symbol or scalar variable of a template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Symbol {
    Func(usize),
    Scalar(usize),
}

/// A linear ranking function template in CNF.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub kind: TemplateKind,
    pub k: usize,
    pub conjuncts: Vec<Vec<TemplateAtom>>,
    pub func_names: Vec<String>,
    pub scalar_names: Vec<String>,
}

impl Template {
    pub fn num_funcs(&self) -> usize {
        self.func_names.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.scalar_names.len()
    }

    pub fn num_conjuncts(&self) -> usize {
        self.conjuncts.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.conjuncts.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Color {
    White,
    Red,
    Blue,
}

/// Total map from atom occurrences to colors, parallel to
/// `Template::conjuncts`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring(pub Vec<Vec<Color>>);

/// Builds one of the four templates. `k` is the size parameter; the
/// affine template requires `k = 1`.
pub fn make_template(kind: TemplateKind, k: usize) -> Result<Template, TemplateError> {
    if k == 0 {
        return Err(TemplateError::ZeroK);
    }
    if kind == TemplateKind::Affine && k != 1 {
        return Err(TemplateError::AffineWithK);
    }
    let gt = TemplateRel::Gt;
    let ge = TemplateRel::Ge;
    let template = match kind {
        TemplateKind::Affine => Template {
            kind,
            k: 1,
            conjuncts: vec![
                vec![TemplateAtom::new([], [], [(0, 1)], gt)],
                vec![TemplateAtom::new([(0, 1)], [], [], gt)],
                vec![TemplateAtom::new([(0, 1)], [(0, -1)], [(0, -1)], gt)],
            ],
            func_names: vec!["f".into()],
            scalar_names: vec!["delta".into()],
        },
        TemplateKind::Phase => {
            let mut conjuncts = Vec::new();
            for i in 0..k {
                conjuncts.push(vec![TemplateAtom::new([], [], [(i, 1)], gt)]);
            }
            conjuncts.push((0..k).map(|i| TemplateAtom::new([(i, 1)], [], [], gt)).collect());
            for i in 0..k {
                let mut c = vec![TemplateAtom::new([(i, 1)], [(i, -1)], [(i, -1)], gt)];
                for j in 0..i {
                    c.push(TemplateAtom::new([(j, 1)], [], [], gt));
                }
                conjuncts.push(c);
            }
            Template {
                kind,
                k,
                conjuncts,
                func_names: (1..=k).map(|i| format!("f{i}")).collect(),
                scalar_names: (1..=k).map(|i| format!("delta{i}")).collect(),
            }
        }
        TemplateKind::Piece => {
            // function symbols: pieces f1..fk at 0..k, predicates g1..gk at k..2k
            let g = |i: usize| k + i;
            let mut conjuncts = vec![vec![TemplateAtom::new([], [], [(0, 1)], gt)]];
            for i in 0..k {
                for j in 0..k {
                    conjuncts.push(vec![
                        TemplateAtom::new([(g(i), -1)], [], [], gt),
                        TemplateAtom::new([], [(g(j), -1)], [], gt),
                        TemplateAtom::new([(i, 1)], [(j, -1)], [(0, -1)], gt),
                    ]);
                }
            }
            for i in 0..k {
                conjuncts.push(vec![TemplateAtom::new([(i, 1)], [], [], gt)]);
            }
            conjuncts.push((0..k).map(|i| TemplateAtom::new([(g(i), 1)], [], [], ge)).collect());
            let mut func_names: Vec<String> = (1..=k).map(|i| format!("f{i}")).collect();
            func_names.extend((1..=k).map(|i| format!("g{i}")));
            Template {
                kind,
                k,
                conjuncts,
                func_names,
                scalar_names: vec!["delta".into()],
            }
        }
        TemplateKind::Lex => {
            let mut conjuncts = Vec::new();
            for i in 0..k {
                conjuncts.push(vec![TemplateAtom::new([], [], [(i, 1)], gt)]);
            }
            for i in 0..k {
                conjuncts.push(vec![TemplateAtom::new([(i, 1)], [], [], gt)]);
            }
            for i in 0..k.saturating_sub(1) {
                let mut c = vec![TemplateAtom::new([(i, 1)], [(i, -1)], [], ge)];
                for j in 0..i {
                    c.push(TemplateAtom::new([(j, 1)], [(j, -1)], [(j, -1)], gt));
                }
                conjuncts.push(c);
            }
            conjuncts.push(
                (0..k)
                    .map(|i| TemplateAtom::new([(i, 1)], [(i, -1)], [(i, -1)], gt))
                    .collect(),
            );
            Template {
                kind,
                k,
                conjuncts,
                func_names: (1..=k).map(|i| format!("f{i}")).collect(),
                scalar_names: (1..=k).map(|i| format!("delta{i}")).collect(),
            }
        }
    };
    debug_assert_eq!(template.num_conjuncts(), expected_counts(kind, k).0);
    debug_assert_eq!(template.num_atoms(), expected_counts(kind, k).1);
    Ok(template)
}

/// Closed-form overview values `(conjuncts, atoms, components, degree)`
/// for a template kind and size.
pub fn expected_counts(kind: TemplateKind, k: usize) -> (usize, usize, usize, usize) {
    match kind {
        TemplateKind::Affine => (3, 3, 1, 0),
        TemplateKind::Phase => (2 * k + 1, k * (k + 5) / 2, k, k * (k - 1) / 2),
        TemplateKind::Piece => (k * k + k + 2, 3 * k * k + 2 * k + 1, k + 1, 2 * k * k - 1),
        TemplateKind::Lex => (
            3 * k,
            k * (k + 5) / 2,
            k,
            if k < 2 { 0 } else { (k - 1) * (k - 2) / 2 },
        ),
    }
}

/// Parses a CLI template spec: `affine`, `phase:k`, `piece:k`, `lex:k`.
pub fn parse_template_spec(spec: &str) -> Result<(TemplateKind, usize), TemplateError> {
    let bad = || TemplateError::BadSpec(spec.to_string());
    match spec.split_once(':') {
        None if spec == "affine" => Ok((TemplateKind::Affine, 1)),
        None => Err(bad()),
        Some((kind, karg)) => {
            let k: usize = karg.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(TemplateError::ZeroK);
            }
            match kind {
                "phase" => Ok((TemplateKind::Phase, k)),
                "piece" => Ok((TemplateKind::Piece, k)),
                "lex" => Ok((TemplateKind::Lex, k)),
                "affine" if k == 1 => Ok((TemplateKind::Affine, 1)),
                _ => Err(bad()),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dependency graph and colorings

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let r = self.find(self.0[x]);
            self.0[x] = r;
        }
        self.0[x]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn symbol_index(t: &Template, s: Symbol) -> usize {
    match s {
        Symbol::Func(f) => f,
        Symbol::Scalar(d) => t.num_funcs() + d,
    }
}

/// Connected components of the dependency graph: two symbols are joined
/// whenever some atom mentions both.
pub fn dependency_components(t: &Template) -> Vec<Vec<Symbol>> {
    let total = t.num_funcs() + t.num_scalars();
    let mut uf = UnionFind::new(total);
    for conj in &t.conjuncts {
        for atom in conj {
            let syms = atom.symbols();
            for w in syms.windows(2) {
                uf.union(symbol_index(t, w[0]), symbol_index(t, w[1]));
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<Symbol>> = BTreeMap::new();
    for f in 0..t.num_funcs() {
        let root = uf.find(f);
        groups.entry(root).or_default().push(Symbol::Func(f));
    }
    for d in 0..t.num_scalars() {
        let root = uf.find(t.num_funcs() + d);
        groups.entry(root).or_default().push(Symbol::Scalar(d));
    }
    groups.into_values().collect()
}

fn component_of_atom(t: &Template, components: &[Vec<Symbol>], atom: &TemplateAtom) -> usize {
    let sym = atom.symbols()[0];
    let _ = t;
    components
        .iter()
        .position(|c| c.contains(&sym))
        .expect("symbol belongs to a component")
}

/// Checks the three suitability conditions: exactly one red atom per
/// conjunct, blue atoms in pairwise distinct components, and an acyclic
/// coloring graph (edges from the red atom's component to each blue
/// atom's component within one conjunct).
pub fn is_suitable_coloring(t: &Template, eta: &Coloring) -> bool {
    if eta.0.len() != t.conjuncts.len()
        || eta
            .0
            .iter()
            .zip(&t.conjuncts)
            .any(|(cs, atoms)| cs.len() != atoms.len())
    {
        return false;
    }
    let components = dependency_components(t);
    let ncomp = components.len();
    let mut blue_components: Vec<usize> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (ci, conj) in t.conjuncts.iter().enumerate() {
        let colors = &eta.0[ci];
        let reds: Vec<usize> = (0..conj.len()).filter(|p| colors[*p] == Color::Red).collect();
        if reds.len() != 1 {
            return false;
        }
        let red_comp = component_of_atom(t, &components, &conj[reds[0]]);
        for (p, atom) in conj.iter().enumerate() {
            if colors[p] == Color::Blue {
                let bc = component_of_atom(t, &components, atom);
                if blue_components.contains(&bc) {
                    return false;
                }
                blue_components.push(bc);
                edges.push((red_comp, bc));
            }
        }
    }
    // cycle check on the coloring graph
    let mut adj = vec![Vec::new(); ncomp];
    for (a, b) in edges {
        adj[a].push(b);
    }
    let mut state = vec![0u8; ncomp]; // 0 unvisited, 1 on stack, 2 done
    fn dfs(v: usize, adj: &[Vec<usize>], state: &mut [u8]) -> bool {
        state[v] = 1;
        for &w in &adj[v] {
            if state[w] == 1 || (state[w] == 0 && dfs(w, adj, state)) {
                return true;
            }
        }
        state[v] = 2;
        false
    }
    for v in 0..ncomp {
        if state[v] == 0 && dfs(v, &adj, &mut state) {
            return false;
        }
    }
    true
}

/// The coloring used by the degree arguments for each template kind. It is
/// always suitable and attains the minimal degree.
pub fn canonical_coloring(t: &Template) -> Coloring {
    use Color::*;
    let k = t.k;
    let mut colors: Vec<Vec<Color>> = Vec::with_capacity(t.conjuncts.len());
    match t.kind {
        TemplateKind::Affine => {
            colors = vec![vec![Red], vec![Red], vec![Red]];
        }
        TemplateKind::Phase => {
            for _ in 0..k {
                colors.push(vec![Red]);
            }
            let mut big = vec![White; k];
            big[0] = Red;
            colors.push(big);
            for i in 0..k {
                if i == 0 {
                    colors.push(vec![Red]);
                } else {
                    // decrease atom blue, the f1 escape red, the rest white
                    let mut c = vec![White; i + 1];
                    c[0] = Blue;
                    c[1] = Red;
                    colors.push(c);
                }
            }
        }
        TemplateKind::Piece => {
            colors.push(vec![Red]);
            for i in 0..k {
                for j in 0..k {
                    if i == j {
                        colors.push(vec![Blue, White, Red]);
                    } else {
                        colors.push(vec![White, White, Red]);
                    }
                }
            }
            for _ in 0..k {
                colors.push(vec![Red]);
            }
            let mut last = vec![White; k];
            last[0] = Red;
            colors.push(last);
        }
        TemplateKind::Lex => {
            for _ in 0..2 * k {
                colors.push(vec![Red]);
            }
            for i in 0..k - 1 {
                if i == 0 {
                    colors.push(vec![Red]);
                } else {
                    let mut c = vec![White; i + 1];
                    c[0] = Blue;
                    c[1] = Red;
                    colors.push(c);
                }
            }
            let mut last = vec![White; k];
            last[0] = Red;
            if k >= 2 {
                last[k - 1] = Blue;
            }
            colors.push(last);
        }
    }
    let eta = Coloring(colors);
    debug_assert!(is_suitable_coloring(t, &eta));
    eta
}

/// Number of uncolored occurrences. Errors on unsuitable colorings.
pub fn coloring_degree(t: &Template, eta: &Coloring) -> Result<usize, TemplateError> {
    if !is_suitable_coloring(t, eta) {
        return Err(TemplateError::UnsuitableColoring);
    }
    Ok(eta
        .0
        .iter()
        .flatten()
        .filter(|c| **c == Color::White)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;

    const KINDS: [TemplateKind; 4] = [
        TemplateKind::Affine,
        TemplateKind::Phase,
        TemplateKind::Piece,
        TemplateKind::Lex,
    ];

    #[test]
    fn overview_table() {
        for kind in KINDS {
            let ks: &[usize] = if kind == TemplateKind::Affine { &[1] } else { &[1, 2, 3, 4, 5] };
            for &k in ks {
                let t = make_template(kind, k).unwrap();
                let (conjuncts, atoms, components, degree) = expected_counts(kind, k);
                assert_eq!(t.num_conjuncts(), conjuncts, "{kind:?} k={k} conjuncts");
                assert_eq!(t.num_atoms(), atoms, "{kind:?} k={k} atoms");
                assert_eq!(dependency_components(&t).len(), components, "{kind:?} k={k} comps");
                let eta = canonical_coloring(&t);
                assert_eq!(coloring_degree(&t, &eta).unwrap(), degree, "{kind:?} k={k} degree");
            }
        }
    }

    #[test]
    fn table_spot_checks() {
        // affine: 3 conjuncts, 3 atoms
        let t = make_template(TemplateKind::Affine, 1).unwrap();
        assert_eq!((t.num_conjuncts(), t.num_atoms()), (3, 3));
        // 4-phase: 9 conjuncts, 18 atoms
        let t = make_template(TemplateKind::Phase, 4).unwrap();
        assert_eq!((t.num_conjuncts(), t.num_atoms()), (9, 18));
        // 2-piece: 8 conjuncts, 17 atoms
        let t = make_template(TemplateKind::Piece, 2).unwrap();
        assert_eq!((t.num_conjuncts(), t.num_atoms()), (8, 17));
    }

    #[test]
    fn component_examples() {
        let t = make_template(TemplateKind::Affine, 1).unwrap();
        assert_eq!(
            dependency_components(&t),
            vec![vec![Symbol::Func(0), Symbol::Scalar(0)]]
        );
        let t = make_template(TemplateKind::Phase, 4).unwrap();
        let comps = dependency_components(&t);
        assert_eq!(comps.len(), 4);
        for (i, c) in comps.iter().enumerate() {
            assert_eq!(c, &vec![Symbol::Func(i), Symbol::Scalar(i)]);
        }
        // 2-piece: {f1, f2, delta}, {g1}, {g2}
        let t = make_template(TemplateKind::Piece, 2).unwrap();
        let comps = dependency_components(&t);
        assert_eq!(comps.len(), 3);
        assert_eq!(comps[0], vec![Symbol::Func(0), Symbol::Func(1), Symbol::Scalar(0)]);
        assert_eq!(comps[1], vec![Symbol::Func(2)]);
        assert_eq!(comps[2], vec![Symbol::Func(3)]);
    }

    #[test]
    fn degree_examples() {
        let t = make_template(TemplateKind::Phase, 3).unwrap();
        assert_eq!(coloring_degree(&t, &canonical_coloring(&t)).unwrap(), 3);
        let t = make_template(TemplateKind::Phase, 5).unwrap();
        assert_eq!(coloring_degree(&t, &canonical_coloring(&t)).unwrap(), 10);
        let t = make_template(TemplateKind::Piece, 2).unwrap();
        assert_eq!(coloring_degree(&t, &canonical_coloring(&t)).unwrap(), 7);
        let t = make_template(TemplateKind::Lex, 4).unwrap();
        assert_eq!(coloring_degree(&t, &canonical_coloring(&t)).unwrap(), 3);
    }

    #[test]
    fn two_reds_unsuitable() {
        let t = make_template(TemplateKind::Phase, 2).unwrap();
        let mut eta = canonical_coloring(&t);
        // the big disjunct has k atoms; make a second one red
        let big = t.k; // index of the disjunction conjunct
        eta.0[big][1] = Color::Red;
        assert!(!is_suitable_coloring(&t, &eta));
        assert_eq!(coloring_degree(&t, &eta), Err(TemplateError::UnsuitableColoring));
    }

    #[test]
    fn blue_same_component_unsuitable() {
        // color two atoms of the same component blue
        let t = make_template(TemplateKind::Phase, 3).unwrap();
        let mut eta = canonical_coloring(&t);
        // conjunct k (big disjunct) position 1 is f2; the decrease conjunct
        // for i=1 already has a blue f2 atom.
        eta.0[t.k][1] = Color::Blue;
        assert!(!is_suitable_coloring(&t, &eta));
    }

    #[test]
    fn cyclic_coloring_graph_unsuitable() {
        // In 2-phase, make [f2] point at [f1] while [f1] points at [f2].
        let t = make_template(TemplateKind::Phase, 2).unwrap();
        // conjuncts: [d1], [d2], [f1 | f2], [dec1], [dec2 | f1]
        let eta = Coloring(vec![
            vec![Color::Red],
            vec![Color::Red],
            // red f2, blue f1: edge [f2] -> [f1]
            vec![Color::Blue, Color::Red],
            vec![Color::Red],
            // blue dec2 ([f2]), red f1: edge [f1] -> [f2]
            vec![Color::Blue, Color::Red],
        ]);
        assert!(!is_suitable_coloring(&t, &eta));
    }

    #[test]
    fn one_phase_equals_affine_structure() {
        let phase = make_template(TemplateKind::Phase, 1).unwrap();
        let affine = make_template(TemplateKind::Affine, 1).unwrap();
        assert_eq!(phase.conjuncts, affine.conjuncts);
    }

    #[test]
    fn blue_count_is_components_minus_one() {
        for kind in KINDS {
            let ks: &[usize] = if kind == TemplateKind::Affine { &[1] } else { &[2, 3, 4] };
            for &k in ks {
                let t = make_template(kind, k).unwrap();
                let eta = canonical_coloring(&t);
                let blues = eta.0.iter().flatten().filter(|c| **c == Color::Blue).count();
                let comps = dependency_components(&t).len();
                assert_eq!(blues, comps - 1, "{kind:?} k={k}");
            }
        }
    }

    #[test]
    fn spec_errors() {
        assert_eq!(make_template(TemplateKind::Phase, 0), Err(TemplateError::ZeroK));
        assert!(parse_template_spec("phase:0").is_err());
        assert!(parse_template_spec("cubic:2").is_err());
        assert_eq!(parse_template_spec("lex:3").unwrap(), (TemplateKind::Lex, 3));
        assert_eq!(parse_template_spec("affine").unwrap(), (TemplateKind::Affine, 1));
    }
}
