//! Parity counting (mod 2) through witness functions.
//!
//! A relation `R ⊆ H^n` with a Mal'tsev polymorphism admits a compact
//! representation: for each coordinate `i`, group the realizable values
//! `pr_i R` into classes (two values are related when some common prefix
//! extends to full tuples through both), and store one canonical member
//! tuple per `(i, value)` such that related values get witnesses with equal
//! prefixes. Counting solutions mod 2 then proceeds by repeatedly filtering
//! tuples whose prefix has an odd number of completions (`PAR`), projecting
//! the last coordinate away (`tilde`), and recursing — each step preserves
//! the parity of the relation size, and the witness function of the smaller
//! relation is derived from the larger one's without rescanning it.
//!
//! Conventions, fixed for the whole module:
//! - coordinates are 0-based; the "last" coordinate of an `n`-ary relation
//!   is `n-1`;
//! - the modulus is 2 — the class-parity early exit and the `PAR`/`tilde`
//!   constructions are specific to it;
//! - structures are single-sorted and carry every constant relation;
//! - the relatedness used for classes is the transitive closure of the
//!   shared-prefix relation (the two coincide on the rectangular relations
//!   the engine is for; the validator works on the closure).
//!
//! Two builders produce witness functions and must agree:
//! - [`build_witness_brute`] materializes the relation and reads classes and
//!   lex-least witnesses off it — the test-time reference;
//! - [`build_witness_function`] works from a conjunctive instance without
//!   enumerating its solution set, answering membership, relatedness and
//!   completion queries with the propagating decision search, so chain-like
//!   instances scale to hundreds of variables.
//!
//! The derived-witness step ([`derive_tilde_witness`]) follows the
//! three-stage recipe: keep last-coordinate witnesses whose class is odd,
//! discover the classes of the filtered relation at every earlier coordinate
//! through [`check_epsilon_class`], and project. Every constructed witness
//! function is validated against the conditions (membership of witnesses,
//! exactness off the projections, equal prefixes within classes) before it
//! is returned.
//!
//! Soundness boundary: the size identities `|R| ≡ |PAR R| ≡ |tilde R|` hold
//! for every relation, but the class-parity early exit inside
//! [`calculate_size`] is justified only for relations invariant under a
//! Mal'tsev operation. [`parity_count`] guarantees that — solution sets of
//! conjunctive instances are preserved by every polymorphism of the
//! template, and the context carries a verified Mal'tsev one. Callers
//! feeding hand-built tuples to [`calculate_size`] own that precondition.

use std::collections::{BTreeMap, BTreeSet};

use crate::expansion::{find_maltsev, is_polymorphism, satisfies_maltsev_identities, Polymorphism};
use crate::guards::Guards;
use crate::oracle;
use crate::structure::{Instance, Structure};
use crate::{Error, Result};

/// Above this many variables the engine builder skips its internal
/// materialize-and-validate pass (tests validate explicitly instead).
const INLINE_VALIDATE_VARS: usize = 10;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Per-coordinate classes of a relation: `classes[i]` partitions the values
/// realizable at coordinate `i`, each class sorted ascending and the classes
/// sorted by least member. At coordinate 0 every realizable value shares the
/// empty prefix, so there is at most one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameClasses {
    pub classes: Vec<Vec<Vec<u32>>>,
}

impl FrameClasses {
    /// Index of the class containing `a` at coordinate `i`, if any.
    pub fn class_of(&self, i: usize, a: u32) -> Option<usize> {
        self.classes[i].iter().position(|c| c.contains(&a))
    }
}

/// A witness function for an `arity`-ary relation over a `dom`-element
/// domain: `table[i][a]` is a canonical member tuple with value `a` at
/// coordinate `i` (`None` exactly when `a` is not realizable there), and
/// witnesses of related values share their length-`i` prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WitnessFunction {
    pub arity: usize,
    pub dom: usize,
    pub table: Vec<Vec<Option<Vec<u32>>>>,
    pub classes: FrameClasses,
}

/// Everything the parity engine needs about a template: a single-sorted
/// structure with all constants and a polymorphism verified to be Mal'tsev
/// for it. The modulus is fixed to 2.
#[derive(Debug, Clone)]
pub struct ParityContext {
    h: Structure,
    maltsev: Polymorphism,
}

impl ParityContext {
    /// Validates the template/polymorphism pair: single sort, all constants
    /// present, and `maltsev` a ternary polymorphism satisfying the Mal'tsev
    /// identities on it.
    pub fn new(h: Structure, maltsev: Polymorphism) -> Result<ParityContext> {
        if h.sort_count() != 1 {
            return Err(Error::Precondition(
                "parity engine requires a single-sorted template".into(),
            ));
        }
        if !h.has_all_constants() {
            return Err(Error::Precondition(
                "parity engine requires every constant as a relation".into(),
            ));
        }
        if !is_polymorphism(&h, &maltsev) || !satisfies_maltsev_identities(&h, &maltsev) {
            return Err(Error::Precondition(
                "supplied operation is not a Mal'tsev polymorphism of the template".into(),
            ));
        }
        Ok(ParityContext { h, maltsev })
    }

    /// Finds a Mal'tsev polymorphism for `h` and builds the context, or
    /// fails when none exists.
    pub fn search(h: Structure, guards: &Guards) -> Result<ParityContext> {
        let Some(f) = find_maltsev(&h, guards)? else {
            return Err(Error::Precondition(
                "template has no Mal'tsev polymorphism".into(),
            ));
        };
        ParityContext::new(h, f)
    }

    pub fn structure(&self) -> &Structure {
        &self.h
    }

    pub fn maltsev(&self) -> &Polymorphism {
        &self.maltsev
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn check_tuples(tuples: &[Vec<u32>], arity: usize, dom: usize) -> Result<()> {
    if arity == 0 {
        return Err(Error::Precondition(
            "witness functions need arity at least 1".into(),
        ));
    }
    for t in tuples {
        if t.len() != arity {
            return Err(Error::Precondition(format!(
                "tuple of length {} in a relation of arity {arity}",
                t.len()
            )));
        }
        if t.iter().any(|&e| e as usize >= dom) {
            return Err(Error::Precondition(format!(
                "tuple entry outside the {dom}-element domain"
            )));
        }
    }
    Ok(())
}

fn sorted_dedup(tuples: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let set: BTreeSet<Vec<u32>> = tuples.iter().cloned().collect();
    set.into_iter().collect()
}

/// Classes at coordinate `i` from a materialized relation: union-find over
/// the values of `pr_i R`, merging all values seen under one prefix.
fn classes_at(tuples: &[Vec<u32>], i: usize, dom: usize) -> Vec<Vec<u32>> {
    let mut parent: Vec<u32> = (0..dom as u32).collect();
    fn root(parent: &mut [u32], x: u32) -> u32 {
        let mut r = x;
        while parent[r as usize] != r {
            r = parent[r as usize];
        }
        let mut c = x;
        while parent[c as usize] != r {
            let next = parent[c as usize];
            parent[c as usize] = r;
            c = next;
        }
        r
    }
    let mut member = vec![false; dom];
    let mut by_prefix: BTreeMap<&[u32], u32> = BTreeMap::new();
    for t in tuples {
        member[t[i] as usize] = true;
        match by_prefix.get(&t[..i]) {
            None => {
                by_prefix.insert(&t[..i], t[i]);
            }
            Some(&first) => {
                let (ra, rb) = (root(&mut parent, first), root(&mut parent, t[i]));
                if ra != rb {
                    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                    parent[hi as usize] = lo;
                }
            }
        }
    }
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for a in 0..dom as u32 {
        if member[a as usize] {
            groups.entry(root(&mut parent, a)).or_default().push(a);
        }
    }
    groups.into_values().collect()
}

/// Number of full tuples of `tuples` extending the length-`arity-1` prefix
/// of `t`, reduced mod 2.
fn prefix_ext_parity(tuples: &[Vec<u32>], t: &[u32]) -> u64 {
    let n = t.len();
    (tuples
        .iter()
        .filter(|u| u[..n - 1] == t[..n - 1])
        .count()
        % 2) as u64
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Checks a witness function against the materialized relation it claims to
/// represent:
/// (i) `table[i][a]` is absent exactly when `a ∉ pr_i R`;
/// (ii) every witness is a member tuple with the right value at its
/// coordinate;
/// (iii) witnesses of same-class values have equal prefixes, and the stored
/// classes are exactly those computed from the relation.
pub fn validate_witness(w: &WitnessFunction, tuples: &[Vec<u32>]) -> Result<()> {
    check_tuples(tuples, w.arity, w.dom)?;
    let tuples = sorted_dedup(tuples);
    if w.table.len() != w.arity || w.classes.classes.len() != w.arity {
        return Err(Error::Precondition(
            "witness table and classes must cover every coordinate".into(),
        ));
    }
    for i in 0..w.arity {
        if w.table[i].len() != w.dom {
            return Err(Error::Precondition(
                "witness table row must cover the whole domain".into(),
            ));
        }
        let mut member = vec![false; w.dom];
        for t in &tuples {
            member[t[i] as usize] = true;
        }
        for a in 0..w.dom {
            match &w.table[i][a] {
                None => {
                    if member[a] {
                        return Err(Error::Precondition(format!(
                            "condition (i): coordinate {i} value {a} is realizable but has no witness"
                        )));
                    }
                }
                Some(t) => {
                    if !member[a] {
                        return Err(Error::Precondition(format!(
                            "condition (i): coordinate {i} value {a} has a witness but is not realizable"
                        )));
                    }
                    if t[i] != a as u32 || tuples.binary_search(t).is_err() {
                        return Err(Error::Precondition(format!(
                            "condition (ii): witness at coordinate {i} value {a} is not a member tuple with that value"
                        )));
                    }
                }
            }
        }
        let expect = classes_at(&tuples, i, w.dom);
        if w.classes.classes[i] != expect {
            return Err(Error::Precondition(format!(
                "condition (iii): stored classes at coordinate {i} differ from the relation's"
            )));
        }
        for class in &w.classes.classes[i] {
            let prefixes: BTreeSet<&[u32]> = class
                .iter()
                .map(|&a| {
                    w.table[i][a as usize]
                        .as_deref()
                        .map(|t| &t[..i])
                        .ok_or_else(|| {
                            Error::Precondition(format!(
                                "condition (iii): class member {a} at coordinate {i} has no witness"
                            ))
                        })
                })
                .collect::<Result<_>>()?;
            if prefixes.len() > 1 {
                return Err(Error::Precondition(format!(
                    "condition (iii): witnesses within a class at coordinate {i} disagree on their prefix"
                )));
            }
        }
    }
    if w.classes.classes[0].len() > 1 {
        return Err(Error::Precondition(
            "condition (iii): coordinate 0 must have a single class".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

/// Reference builder: reads classes and lex-least canonical witnesses off a
/// materialized relation. Canonical choice: each class uses the lex-least
/// prefix occurring among its tuples, and each witness is the lex-least
/// member tuple with that prefix and its value. Fails when some class member
/// has no tuple over the canonical prefix — the relation is then not
/// rectangular enough to carry a witness function.
pub fn build_witness_brute(tuples: &[Vec<u32>], arity: usize, dom: usize) -> Result<WitnessFunction> {
    check_tuples(tuples, arity, dom)?;
    let tuples = sorted_dedup(tuples);
    let mut table: Vec<Vec<Option<Vec<u32>>>> = vec![vec![None; dom]; arity];
    let mut classes = Vec::with_capacity(arity);
    for i in 0..arity {
        let cls = classes_at(&tuples, i, dom);
        for class in &cls {
            // Lex-least prefix over the whole class; tuples are sorted, so
            // the first tuple hitting the class has it.
            let prefix = tuples
                .iter()
                .find(|t| class.contains(&t[i]))
                .map(|t| t[..i].to_vec())
                .expect("classes only contain realizable values");
            for &a in class {
                let w = tuples
                    .iter()
                    .find(|t| t[..i] == prefix[..] && t[i] == a)
                    .cloned();
                match w {
                    Some(t) => table[i][a as usize] = Some(t),
                    None => {
                        return Err(Error::Precondition(format!(
                            "no witness with the class prefix at coordinate {i} value {a}: relation is not rectangular"
                        )))
                    }
                }
            }
        }
        classes.push(cls);
    }
    let w = WitnessFunction {
        arity,
        dom,
        table,
        classes: FrameClasses { classes },
    };
    validate_witness(&w, &tuples)?;
    Ok(w)
}

/// Builds the glued two-copy instance deciding whether values `a` and `b`
/// share a realizable prefix at coordinate `i`: variables before `i` are
/// shared, the rest duplicated, and coordinate `i` is pinned to `a` in one
/// copy and `b` in the other.
fn glued_related(
    ctx: &ParityContext,
    inst: &Instance,
    i: usize,
    a: u32,
    b: u32,
) -> Result<bool> {
    let h = &ctx.h;
    let sort_name = h.sort_name(0).to_string();
    let n = inst.var_count();
    let shared = |v: usize| format!("s{v:04}");
    let copy = |side: char, v: usize| format!("{side}{v:04}");
    let name = |side: char, v: usize| {
        if v < i {
            shared(v)
        } else {
            copy(side, v)
        }
    };
    let mut vars: Vec<(String, String)> = Vec::new();
    for v in 0..n {
        if v < i {
            vars.push((shared(v), sort_name.clone()));
        } else {
            vars.push((copy('a', v), sort_name.clone()));
            vars.push((copy('b', v), sort_name.clone()));
        }
    }
    let mut cons: Vec<(Vec<String>, String)> = Vec::new();
    for c in inst.constraints() {
        let rel = match c.rel {
            crate::structure::ConstraintRel::Eq => "=".to_string(),
            crate::structure::ConstraintRel::Sym(r) => h.rel_name(r).to_string(),
        };
        for side in ['a', 'b'] {
            cons.push((c.scope.iter().map(|&v| name(side, v)).collect(), rel.clone()));
        }
    }
    let glued = Instance::new(h, vars, cons)?;
    let mut pins = vec![None; glued.var_count()];
    pins[glued.var_index(&copy('a', i)).expect("copied variable")] = Some(a);
    pins[glued.var_index(&copy('b', i)).expect("copied variable")] = Some(b);
    Ok(oracle::first_solution_propagated(&glued, h, &pins)?.is_some())
}

/// Engine builder: the witness function of the solution relation of a
/// conjunctive instance (coordinates = the instance's variable order),
/// without enumerating the solution set. Membership, relatedness and
/// canonical completions are each a single propagating decision search, so
/// the cost is polynomial in the number of variables whenever the searches
/// are backtrack-free (tree-shaped instances). The canonical choices match
/// [`build_witness_brute`] exactly.
pub fn build_witness_function(
    ctx: &ParityContext,
    inst: &Instance,
    _guards: &Guards,
) -> Result<WitnessFunction> {
    let h = &ctx.h;
    let n = inst.var_count();
    if n == 0 {
        return Err(Error::Precondition(
            "witness functions need at least one variable".into(),
        ));
    }
    let dom = h.sort_size(0);
    // Lex-least solution per (coordinate, value); None off the projection.
    let mut least: Vec<Vec<Option<Vec<u32>>>> = vec![vec![None; dom]; n];
    for i in 0..n {
        for a in 0..dom as u32 {
            let mut pins = vec![None; n];
            pins[i] = Some(a);
            least[i][a as usize] = oracle::first_solution_propagated(inst, h, &pins)?;
        }
    }
    let mut table: Vec<Vec<Option<Vec<u32>>>> = vec![vec![None; dom]; n];
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let members: Vec<u32> = (0..dom as u32)
            .filter(|&a| least[i][a as usize].is_some())
            .collect();
        // Transitive closure of pairwise relatedness, via union-find.
        let mut parent: Vec<u32> = (0..dom as u32).collect();
        fn root(parent: &mut [u32], x: u32) -> u32 {
            let mut r = x;
            while parent[r as usize] != r {
                r = parent[r as usize];
            }
            r
        }
        for (xi, &a) in members.iter().enumerate() {
            for &b in &members[xi + 1..] {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                if ra == rb {
                    continue;
                }
                if i == 0 || glued_related(ctx, inst, i, a, b)? {
                    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                    parent[hi as usize] = lo;
                }
            }
        }
        let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &a in &members {
            groups.entry(root(&mut parent, a)).or_default().push(a);
        }
        let cls: Vec<Vec<u32>> = groups.into_values().collect();
        for class in &cls {
            // Lex-least class prefix = least of the members' lex-least
            // solutions, truncated.
            let prefix: Vec<u32> = class
                .iter()
                .filter_map(|&a| least[i][a as usize].as_ref())
                .min()
                .expect("class members are realizable")[..i]
                .to_vec();
            for &a in class {
                let own = least[i][a as usize].as_ref().expect("member");
                if own[..i] == prefix[..] {
                    table[i][a as usize] = Some(own.clone());
                    continue;
                }
                let mut pins: Vec<Option<u32>> = vec![None; n];
                for (v, &e) in prefix.iter().enumerate() {
                    pins[v] = Some(e);
                }
                pins[i] = Some(a);
                match oracle::first_solution_propagated(inst, h, &pins)? {
                    Some(t) => table[i][a as usize] = Some(t),
                    None => {
                        return Err(Error::Precondition(format!(
                            "no witness with the class prefix at coordinate {i} value {a}: relation is not rectangular"
                        )))
                    }
                }
            }
        }
        classes.push(cls);
    }
    let w = WitnessFunction {
        arity: n,
        dom,
        table,
        classes: FrameClasses { classes },
    };
    if n <= INLINE_VALIDATE_VARS {
        validate_witness(&w, &oracle::solutions(inst, h))?;
    }
    Ok(w)
}

// ---------------------------------------------------------------------------
// Frame transformations
// ---------------------------------------------------------------------------

/// Witness function and materialized relation after pinning coordinate `s`
/// to `a`. Realized by rebuilding over the restricted relation (the arity is
/// kept; classes can only refine). Pinning to a value off `pr_s R` yields
/// the empty relation and an all-`None` table.
pub fn fix_coordinate(
    w: &WitnessFunction,
    tuples: &[Vec<u32>],
    s: usize,
    a: u32,
) -> Result<(WitnessFunction, Vec<Vec<u32>>)> {
    if s >= w.arity {
        return Err(Error::Precondition(format!(
            "coordinate {s} out of range for arity {}",
            w.arity
        )));
    }
    if a as usize >= w.dom {
        return Err(Error::Precondition(format!(
            "value {a} outside the {}-element domain",
            w.dom
        )));
    }
    check_tuples(tuples, w.arity, w.dom)?;
    let restricted: Vec<Vec<u32>> = tuples.iter().filter(|t| t[s] == a).cloned().collect();
    let wf = build_witness_brute(&restricted, w.arity, w.dom)?;
    Ok((wf, restricted))
}

/// [`fix_coordinate`] folded over several (coordinate, value) pins.
pub fn fix_coordinates(
    w: &WitnessFunction,
    tuples: &[Vec<u32>],
    pins: &[(usize, u32)],
) -> Result<(WitnessFunction, Vec<Vec<u32>>)> {
    let mut cur = (w.clone(), sorted_dedup(tuples));
    for &(s, a) in pins {
        cur = fix_coordinate(&cur.0, &cur.1, s, a)?;
    }
    Ok(cur)
}

/// Witness function and relation after projecting the last coordinate away:
/// witnesses lose their last entry, classes at the remaining coordinates are
/// unchanged. Errors on unary relations.
pub fn project_last(
    w: &WitnessFunction,
    tuples: &[Vec<u32>],
) -> Result<(WitnessFunction, Vec<Vec<u32>>)> {
    if w.arity < 2 {
        return Err(Error::Precondition(
            "cannot project the last coordinate of a unary relation".into(),
        ));
    }
    check_tuples(tuples, w.arity, w.dom)?;
    let projected = sorted_dedup(&oracle::proj(tuples, &(0..w.arity - 1).collect::<Vec<_>>()));
    let table: Vec<Vec<Option<Vec<u32>>>> = w.table[..w.arity - 1]
        .iter()
        .map(|row| {
            row.iter()
                .map(|e| e.as_ref().map(|t| t[..w.arity - 1].to_vec()))
                .collect()
        })
        .collect();
    let wf = WitnessFunction {
        arity: w.arity - 1,
        dom: w.dom,
        table,
        classes: FrameClasses {
            classes: w.classes.classes[..w.arity - 1].to_vec(),
        },
    };
    validate_witness(&wf, &projected)?;
    Ok((wf, projected))
}

// ---------------------------------------------------------------------------
// PAR and tilde
// ---------------------------------------------------------------------------

/// Member tuples whose length-`n-1` prefix has an odd number of completions.
/// `|R| ≡ |PAR R| (mod 2)` for every relation.
pub fn par_relation(tuples: &[Vec<u32>], arity: usize) -> Result<Vec<Vec<u32>>> {
    if arity == 0 {
        return Err(Error::Precondition("PAR needs arity at least 1".into()));
    }
    let tuples = sorted_dedup(tuples);
    let mut counts: BTreeMap<&[u32], usize> = BTreeMap::new();
    for t in &tuples {
        *counts.entry(&t[..arity - 1]).or_default() += 1;
    }
    Ok(tuples
        .iter()
        .filter(|t| counts[&t[..arity - 1]] % 2 == 1)
        .cloned()
        .collect())
}

/// Prefixes with an odd number of completions — equivalently the classical
/// projection of [`par_relation`]. `|tilde R| ≡ |PAR R| (mod 2)`.
pub fn tilde_relation(tuples: &[Vec<u32>], arity: usize) -> Result<Vec<Vec<u32>>> {
    if arity == 0 {
        return Err(Error::Precondition("tilde needs arity at least 1".into()));
    }
    let positions: Vec<usize> = (0..arity - 1).collect();
    oracle::proj_mod(&sorted_dedup(tuples), &positions, 2)
}

/// Decides whether value `b` joins `a`'s class at coordinate `k` once the
/// relation is filtered to odd-completion tuples, and if so hands back a
/// member tuple with value `b` at `k` and `x`'s prefix before it: pins the
/// first `k` coordinates to `x`'s values and coordinate `k` to `b`, and
/// looks for an odd class at the last coordinate of the pinned relation.
/// Preconditions: `x` is a member tuple with odd prefix-completion count and
/// `x[k] = a`; `k` is below the last coordinate.
pub fn check_epsilon_class(
    w: &WitnessFunction,
    tuples: &[Vec<u32>],
    x: &[u32],
    a: u32,
    b: u32,
    k: usize,
) -> Result<Option<Vec<u32>>> {
    let n = w.arity;
    if k + 1 >= n {
        return Err(Error::Precondition(
            "class check needs a coordinate below the last".into(),
        ));
    }
    if x.len() != n || x[k] != a {
        return Err(Error::Precondition(
            "class check needs a full tuple with the stated value at its coordinate".into(),
        ));
    }
    if b as usize >= w.dom {
        return Err(Error::Precondition(format!(
            "value {b} outside the {}-element domain",
            w.dom
        )));
    }
    let tuples = sorted_dedup(tuples);
    if tuples.binary_search(&x.to_vec()).is_err() || prefix_ext_parity(&tuples, x) == 0 {
        return Err(Error::Precondition(
            "class check needs a member tuple with an odd completion count".into(),
        ));
    }
    let mut pins: Vec<(usize, u32)> = (0..k).map(|i| (i, x[i])).collect();
    pins.push((k, b));
    let (ws, s) = fix_coordinates(w, &tuples, &pins)?;
    if s.is_empty() {
        return Ok(None);
    }
    for class in &ws.classes.classes[n - 1] {
        if class.len() % 2 == 1 {
            let c = class[0];
            return Ok(ws.table[n - 1][c as usize].clone());
        }
    }
    Ok(None)
}

/// Derives the witness function of the tilde relation from the current one:
/// keep last-coordinate witnesses whose class is odd; at each earlier
/// coordinate, seed classes from pinned subrelations with an odd
/// last-coordinate class and absorb classmates via [`check_epsilon_class`];
/// then project the last coordinate. Returns the derived function together
/// with the materialized tilde relation; both the intermediate filtered
/// function and the result are validated.
pub fn derive_tilde_witness(
    w: &WitnessFunction,
    tuples: &[Vec<u32>],
) -> Result<(WitnessFunction, Vec<Vec<u32>>)> {
    let n = w.arity;
    if n < 2 {
        return Err(Error::Precondition(
            "tilde derivation needs arity at least 2".into(),
        ));
    }
    check_tuples(tuples, n, w.dom)?;
    let tuples = sorted_dedup(tuples);
    let mut table: Vec<Vec<Option<Vec<u32>>>> = vec![vec![None; w.dom]; n];
    let mut classes: Vec<Vec<Vec<u32>>> = vec![Vec::new(); n];
    // Last coordinate: witnesses survive exactly in odd classes.
    for class in &w.classes.classes[n - 1] {
        if class.len() % 2 == 1 {
            classes[n - 1].push(class.clone());
            for &a in class {
                table[n - 1][a as usize] = w.table[n - 1][a as usize].clone();
            }
        }
    }
    // Earlier coordinates: discover the filtered relation's classes.
    for k in 0..n - 1 {
        let mut d: BTreeSet<u32> = (0..w.dom as u32)
            .filter(|&a| w.table[k][a as usize].is_some())
            .collect();
        while let Some(a) = d.iter().next().copied() {
            d.remove(&a);
            let (wka, _) = fix_coordinate(w, &tuples, k, a)?;
            let odd = wka.classes.classes[n - 1]
                .iter()
                .find(|class| class.len() % 2 == 1);
            let Some(odd) = odd else {
                continue; // no odd class: `a` drops out of the projection
            };
            let b = odd[0];
            let wa = wka.table[n - 1][b as usize]
                .clone()
                .expect("odd-class member has a witness");
            table[k][a as usize] = Some(wa.clone());
            let mut group = vec![a];
            let rest: Vec<u32> = d.iter().copied().collect();
            for c in rest {
                if let Some(y) = check_epsilon_class(w, &tuples, &wa, a, c, k)? {
                    table[k][c as usize] = Some(y);
                    group.push(c);
                    d.remove(&c);
                }
            }
            group.sort_unstable();
            classes[k].push(group);
        }
        classes[k].sort();
    }
    let filtered = WitnessFunction {
        arity: n,
        dom: w.dom,
        table,
        classes: FrameClasses { classes },
    };
    let par = par_relation(&tuples, n)?;
    validate_witness(&filtered, &par)?;
    project_last(&filtered, &par)
}

// ---------------------------------------------------------------------------
// Counting
// ---------------------------------------------------------------------------

/// Relation sizes recorded at one arity-reduction level of the parity
/// computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityLevel {
    pub arity: usize,
    pub relation_size: usize,
    pub par_size: usize,
    pub tilde_size: usize,
}

/// `|R| mod 2` from a witness function, by repeated tilde derivation; also
/// records the sizes seen at each level. Base case: a unary relation's size
/// is its number of realizable values; early exit: all last-coordinate
/// classes even forces even size.
pub fn calculate_size_with_trace(
    w: &WitnessFunction,
    tuples: &[Vec<u32>],
) -> Result<(u64, Vec<ParityLevel>)> {
    let mut cur_w = w.clone();
    let mut cur_t = sorted_dedup(tuples);
    let mut levels = Vec::new();
    loop {
        if cur_w.arity == 1 {
            let count = cur_w.table[0].iter().filter(|e| e.is_some()).count();
            return Ok(((count % 2) as u64, levels));
        }
        if cur_w.classes.classes[cur_w.arity - 1]
            .iter()
            .all(|c| c.len() % 2 == 0)
        {
            return Ok((0, levels));
        }
        let par = par_relation(&cur_t, cur_w.arity)?;
        let (tw, tt) = derive_tilde_witness(&cur_w, &cur_t)?;
        levels.push(ParityLevel {
            arity: cur_w.arity,
            relation_size: cur_t.len(),
            par_size: par.len(),
            tilde_size: tt.len(),
        });
        cur_w = tw;
        cur_t = tt;
    }
}

/// `|R| mod 2` from a witness function (see [`calculate_size_with_trace`]).
pub fn calculate_size(w: &WitnessFunction, tuples: &[Vec<u32>]) -> Result<u64> {
    calculate_size_with_trace(w, tuples).map(|(p, _)| p)
}

/// Solution count mod 2 of a conjunctive instance: build the witness
/// function, then reduce arity level by level. The materialized solution
/// relation is carried as the desk-scale representation the level steps
/// rebuild from; the parity itself is produced by the class-parity
/// machinery, and `parity_vs_oracle` tests hold it against the naive count.
pub fn parity_count(ctx: &ParityContext, inst: &Instance, guards: &Guards) -> Result<u64> {
    parity_count_with_trace(ctx, inst, guards).map(|(p, _)| p)
}

/// [`parity_count`] with the per-level size trace.
pub fn parity_count_with_trace(
    ctx: &ParityContext,
    inst: &Instance,
    guards: &Guards,
) -> Result<(u64, Vec<ParityLevel>)> {
    if inst.var_count() == 0 {
        return Ok((1, Vec::new()));
    }
    let w = build_witness_function(ctx, inst, guards)?;
    let tuples = oracle::solutions(inst, &ctx.h);
    validate_witness(&w, &tuples)?;
    calculate_size_with_trace(&w, &tuples)
}

/// True iff closing the witness tuples under the coordinate-wise Mal'tsev
/// operation reproduces the relation exactly. Desk-scale check of the frame
/// property; guarded on the relation size.
pub fn frame_generates(
    ctx: &ParityContext,
    w: &WitnessFunction,
    tuples: &[Vec<u32>],
) -> Result<bool> {
    let tuples: BTreeSet<Vec<u32>> = sorted_dedup(tuples).into_iter().collect();
    if tuples.len() > 64 {
        return Err(Error::Guard(format!(
            "frame closure on {} tuples exceeds the desk-scale bound of 64",
            tuples.len()
        )));
    }
    let mut closure: BTreeSet<Vec<u32>> = w
        .table
        .iter()
        .flatten()
        .flatten()
        .cloned()
        .collect();
    loop {
        let cur: Vec<Vec<u32>> = closure.iter().cloned().collect();
        let before = closure.len();
        for t1 in &cur {
            for t2 in &cur {
                for t3 in &cur {
                    let t: Vec<u32> = (0..w.arity)
                        .map(|i| ctx.maltsev.apply(0, &[t1[i], t2[i], t3[i]]))
                        .collect();
                    closure.insert(t);
                }
            }
        }
        if closure.len() == before {
            break;
        }
    }
    Ok(closure == tuples)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::Structure;

    /// Two-element template: ternary even-parity relation, equality-ish
    /// binary, and both constants. Carries the coordinate-wise xor Mal'tsev
    /// operation.
    fn affine2() -> ParityContext {
        let xor3: Vec<Vec<String>> = (0..8u32)
            .map(|m| vec![m & 1, (m >> 1) & 1, (m >> 2) & 1])
            .filter(|t| t[0] ^ t[1] ^ t[2] == 0)
            .map(|t| t.iter().map(|e| e.to_string()).collect())
            .collect();
        let h = Structure::new(
            vec![("H".into(), vec!["0".into(), "1".into()])],
            vec![
                ("xor3".into(), vec!["H".into(); 3], xor3),
                ("c0".into(), vec!["H".into()], vec![vec!["0".into()]]),
                ("c1".into(), vec!["H".into()], vec![vec!["1".into()]]),
            ],
        )
        .unwrap();
        ParityContext::search(h, &Guards::default()).unwrap()
    }

    fn skew_relation() -> Vec<Vec<u32>> {
        vec![
            vec![0, 0, 0],
            vec![0, 1, 1],
            vec![1, 0, 2],
            vec![1, 0, 3],
            vec![1, 1, 4],
        ]
    }

    #[test]
    fn identity_graph_has_singleton_classes() {
        let r: Vec<Vec<u32>> = (0..3).map(|a| vec![a, a]).collect();
        let w = build_witness_brute(&r, 2, 3).unwrap();
        assert_eq!(w.classes.classes[0], vec![vec![0, 1, 2]]);
        assert_eq!(
            w.classes.classes[1],
            vec![vec![0], vec![1], vec![2]],
            "distinct prefixes keep second-coordinate values apart"
        );
        assert_eq!(w.table[1][2], Some(vec![2, 2]));
    }

    #[test]
    fn full_square_parity_follows_domain_size() {
        for dom in [2usize, 3] {
            let r: Vec<Vec<u32>> = (0..dom as u32)
                .flat_map(|a| (0..dom as u32).map(move |b| vec![a, b]))
                .collect();
            let w = build_witness_brute(&r, 2, dom).unwrap();
            assert_eq!(w.classes.classes[1], vec![(0..dom as u32).collect::<Vec<_>>()]);
            let parity = calculate_size(&w, &r).unwrap();
            assert_eq!(parity, (dom * dom % 2) as u64);
        }
    }

    #[test]
    fn skew_relation_tilde_is_the_odd_projection() {
        let r = skew_relation();
        let w = build_witness_brute(&r, 3, 5).unwrap();
        let par = par_relation(&r, 3).unwrap();
        assert_eq!(par, vec![vec![0, 0, 0], vec![0, 1, 1], vec![1, 1, 4]]);
        let (tw, tt) = derive_tilde_witness(&w, &r).unwrap();
        assert_eq!(tt, vec![vec![0, 0], vec![0, 1], vec![1, 1]]);
        assert_eq!(tt, tilde_relation(&r, 3).unwrap());
        validate_witness(&tw, &tt).unwrap();
        assert_eq!(r.len() % 2, tt.len() % 2);
    }

    #[test]
    fn epsilon_check_finds_the_odd_partner() {
        let r = skew_relation();
        let w = build_witness_brute(&r, 3, 5).unwrap();
        let y = check_epsilon_class(&w, &r, &[0, 0, 0], 0, 1, 1).unwrap();
        assert_eq!(y, Some(vec![0, 1, 1]));
        // Value 4 never occurs at the first coordinate, so the pinned
        // subrelation is empty and no partner comes back.
        let x = w.table[0][0].clone().unwrap();
        assert_eq!(check_epsilon_class(&w, &r, &x, x[0], 4, 0).unwrap(), None);
        // (1,0,2)'s prefix has two completions — an even-count tuple is not
        // a legal anchor for the class check.
        assert!(check_epsilon_class(&w, &r, &[1, 0, 2], 0, 1, 1).is_err());
    }

    #[test]
    fn fixing_outside_the_projection_empties_the_table() {
        let r = skew_relation();
        let w = build_witness_brute(&r, 3, 5).unwrap();
        let (wf, rest) = fix_coordinate(&w, &r, 2, 3).unwrap();
        assert_eq!(rest, vec![vec![1, 0, 3]]);
        let (wempty, e) = fix_coordinate(&wf, &rest, 0, 0).unwrap();
        assert!(e.is_empty());
        assert!(wempty.table.iter().flatten().all(|x| x.is_none()));
    }

    #[test]
    fn project_last_rejects_unary_and_keeps_prefixes() {
        let r = skew_relation();
        let w = build_witness_brute(&r, 3, 5).unwrap();
        let (wp, rp) = project_last(&w, &r).unwrap();
        assert_eq!(rp.len(), 4);
        assert_eq!(wp.table[0][0], Some(vec![0, 0]));
        let wu = build_witness_brute(&[vec![0], vec![1]], 1, 2).unwrap();
        assert!(project_last(&wu, &[vec![0], vec![1]]).is_err());
    }

    #[test]
    fn builders_agree_on_conjunctive_instances() {
        let ctx = affine2();
        let h = ctx.structure();
        let cases: Vec<Vec<(Vec<&str>, &str)>> = vec![
            vec![(vec!["x", "y", "z"], "xor3")],
            vec![(vec!["x", "y", "z"], "xor3"), (vec!["x"], "c1")],
            vec![(vec!["x", "x", "y"], "xor3"), (vec!["y", "z", "w"], "xor3")],
            vec![(vec!["x"], "c0"), (vec!["y"], "c1")],
        ];
        for cons in cases {
            let vars: BTreeSet<&str> = cons.iter().flat_map(|(sc, _)| sc.iter().copied()).collect();
            let inst = Instance::new(
                h,
                vars.iter().map(|v| (v.to_string(), "H".into())).collect(),
                cons.iter()
                    .map(|(sc, r)| (sc.iter().map(|s| s.to_string()).collect(), r.to_string()))
                    .collect(),
            )
            .unwrap();
            let fast = build_witness_function(&ctx, &inst, &Guards::default()).unwrap();
            let sols = oracle::solutions(&inst, h);
            let brute = build_witness_brute(&sols, inst.var_count(), 2).unwrap();
            assert_eq!(fast, brute, "constraints {cons:?}");
            assert!(frame_generates(&ctx, &fast, &sols).unwrap());
        }
    }

    #[test]
    fn parity_count_matches_the_oracle() {
        let ctx = affine2();
        let h = ctx.structure();
        let cases: Vec<Vec<(Vec<&str>, &str)>> = vec![
            vec![],
            vec![(vec!["x", "y", "z"], "xor3")],
            vec![(vec!["x", "y", "z"], "xor3"), (vec!["z"], "c0")],
            vec![(vec!["x", "y", "y"], "xor3")],
            vec![(vec!["x"], "c0"), (vec!["x"], "c1")],
        ];
        for cons in cases {
            let vars: BTreeSet<&str> = cons
                .iter()
                .flat_map(|(sc, _)| sc.iter().copied())
                .chain(["x"])
                .collect();
            let inst = Instance::new(
                h,
                vars.iter().map(|v| (v.to_string(), "H".into())).collect(),
                cons.iter()
                    .map(|(sc, r)| (sc.iter().map(|s| s.to_string()).collect(), r.to_string()))
                    .collect(),
            )
            .unwrap();
            let expect = oracle::count_solutions_mod(&inst, h, 2).unwrap();
            let (got, levels) = parity_count_with_trace(&ctx, &inst, &Guards::default()).unwrap();
            assert_eq!(got, expect, "constraints {cons:?}");
            for lv in levels {
                assert_eq!(lv.relation_size % 2, lv.par_size % 2);
                assert_eq!(lv.par_size % 2, lv.tilde_size % 2);
            }
        }
    }

    #[test]
    fn validator_rejects_prefix_disagreement() {
        let r = vec![vec![0, 0], vec![0, 1], vec![1, 1]];
        // 0 and 1 share the prefix (0) at the second coordinate, but the
        // relation also realizes (1,1): witnesses must agree on prefix (0).
        let mut w = build_witness_brute(&r, 2, 2).unwrap();
        w.table[1][1] = Some(vec![1, 1]);
        let err = validate_witness(&w, &r).unwrap_err();
        assert!(err.to_string().contains("(iii)"), "{err}");
    }
}
