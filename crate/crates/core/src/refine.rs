//! Domain shrinking and multi-sorted refinement.
//!
//! The pipeline here turns a one-sorted counting problem into a multi-sorted
//! one whose sorts are the variable domains that survive propagation:
//!
//! 1. shrink domains — [`arc_consistency`] (fixpoint of support pruning,
//!    lossless) or [`solver_based_domains`] (one satisfiability probe per
//!    candidate value, the tightest lossless assignment);
//! 2. [`eliminate_singletons`] — substitute forced variables into their
//!    constraints, preserving the exact solution count;
//! 3. [`build_refinement`] — one fresh sort per distinct domain, with every
//!    relation restricted to every matching sort combination;
//! 4. [`refine_instance`] — relabel an instance through the refinement,
//!    losslessly;
//! 5. [`refine_and_reduce`] — the full loop: refine, drop unused relations,
//!    strip order-p automorphisms, and read the count off the reduced
//!    structure (directly when every relation is a full product, through
//!    the counting oracle otherwise).
//!
//! [`solve_tp`] is the specialized end-to-end solver for the staircase
//! template family ([`crate::fixtures::t_p`]): propagation, forced-variable
//! elimination, and a mod-p orbit argument that discards the low elements,
//! leaving a power of two.
//!
//! Consistency is maintained at width 1 only (arc-consistency); the
//! interfaces speak of domains, never of higher-width relational
//! consistency.

use std::collections::{BTreeMap, BTreeSet};

use crate::oracle;
use crate::structure::{ConstraintRel, Instance, Structure};
use crate::{Error, Result};

/// Combined cap on relations a refinement may generate (all matching sort
/// combinations of all source relations).
const REFINED_RELATION_LIMIT: usize = 10_000;

// ---------------------------------------------------------------------------
// Domain assignments
// ---------------------------------------------------------------------------

/// One candidate-value set per instance variable. `unsat` marks the
/// assignment as a proof of unsatisfiability (some domain is empty);
/// otherwise every domain is nonempty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainAssignment {
    pub domains: Vec<Vec<u32>>,
    pub unsat: bool,
}

/// Arc-consistency output: the domain assignment plus, per constraint, the
/// surviving rows (scope assignments). At the fixpoint, each row set
/// projects exactly onto the domains of its scope variables.
#[derive(Debug, Clone)]
pub struct AcResult {
    pub assignment: DomainAssignment,
    pub rows: Vec<Vec<Vec<u32>>>,
}

fn initial_rows(inst: &Instance, h: &Structure) -> Vec<Vec<Vec<u32>>> {
    inst.constraints()
        .iter()
        .map(|c| match c.rel {
            ConstraintRel::Eq => {
                let sort = inst.var_sort(c.scope[0]);
                (0..h.sort_size(sort) as u32).map(|a| vec![a, a]).collect()
            }
            ConstraintRel::Sym(r) => h
                .rel_tuples(r)
                .iter()
                .filter(|t| {
                    // Rows must be consistent as assignments: positions
                    // sharing a variable must agree.
                    c.scope
                        .iter()
                        .enumerate()
                        .all(|(j, &v)| (0..j).all(|i| c.scope[i] != v || t[i] == t[j]))
                })
                .cloned()
                .collect(),
        })
        .collect()
}

fn ac_from(inst: &Instance, h: &Structure, mut domains: Vec<Vec<u32>>) -> AcResult {
    let mut rows = initial_rows(inst, h);
    loop {
        let mut changed = false;
        for (c, row_set) in inst.constraints().iter().zip(rows.iter_mut()) {
            let before = row_set.len();
            row_set.retain(|t| {
                t.iter()
                    .zip(&c.scope)
                    .all(|(&e, &v)| domains[v].contains(&e))
            });
            changed |= row_set.len() != before;
            for (j, &v) in c.scope.iter().enumerate() {
                let support: BTreeSet<u32> = row_set.iter().map(|t| t[j]).collect();
                let narrowed: Vec<u32> = domains[v]
                    .iter()
                    .copied()
                    .filter(|a| support.contains(a))
                    .collect();
                if narrowed.len() != domains[v].len() {
                    domains[v] = narrowed;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let unsat = domains.iter().any(|d| d.is_empty());
    AcResult {
        assignment: DomainAssignment { domains, unsat },
        rows,
    }
}

/// Fixpoint of the support-pruning rule from full domains: a value survives
/// at `v` only while every constraint on `v` has a row using it, and rows
/// survive only while all their values do. Lossless — no solution is ever
/// removed — and at the fixpoint each constraint's rows project exactly
/// onto its variables' domains.
pub fn arc_consistency(inst: &Instance, h: &Structure) -> AcResult {
    let full: Vec<Vec<u32>> = (0..inst.var_count())
        .map(|v| (0..h.sort_size(inst.var_sort(v)) as u32).collect())
        .collect();
    ac_from(inst, h, full)
}

/// The tightest lossless domains: `a` stays in `D_v` exactly when the
/// instance with `v` pinned to `a` is satisfiable, decided by the complete
/// propagating search. Requires every constant relation on the template, so
/// each pin is expressible as a constraint. Always a subset of the
/// arc-consistency domains.
pub fn solver_based_domains(inst: &Instance, h: &Structure) -> Result<DomainAssignment> {
    if !h.has_all_constants() {
        return Err(Error::Precondition(
            "solver-based domains need every constant as a template relation".into(),
        ));
    }
    let mut domains = Vec::with_capacity(inst.var_count());
    for v in 0..inst.var_count() {
        let mut dom = Vec::new();
        for a in 0..h.sort_size(inst.var_sort(v)) as u32 {
            let mut pins = vec![None; inst.var_count()];
            pins[v] = Some(a);
            if oracle::first_solution_propagated(inst, h, &pins)?.is_some() {
                dom.push(a);
            }
        }
        domains.push(dom);
    }
    let unsat = domains.iter().any(|d| d.is_empty());
    Ok(DomainAssignment { domains, unsat })
}

// ---------------------------------------------------------------------------
// Singleton elimination
// ---------------------------------------------------------------------------

/// An instance with every forced variable substituted away. The solution
/// counts of `instance` (over `template`) and of the input are exactly
/// equal: each reduced solution extends uniquely by the `fixed` values.
#[derive(Debug, Clone)]
pub struct SingletonElimination {
    pub template: Structure,
    pub instance: Instance,
    /// Eliminated variables and their forced values, by original name.
    pub fixed: Vec<(String, u32)>,
}

/// Substitutes every variable whose domain is a singleton into the
/// constraints: fully-pinned constraints are checked and dropped, partially
/// pinned ones get a restricted relation adjoined to the template. The
/// input must be an arc-consistency fixpoint (rows projecting onto
/// domains); this is validated.
pub fn eliminate_singletons(
    inst: &Instance,
    h: &Structure,
    ac: &AcResult,
) -> Result<SingletonElimination> {
    if ac.assignment.unsat {
        return Err(Error::Precondition(
            "cannot eliminate variables of an unsatisfiable assignment".into(),
        ));
    }
    if ac.assignment.domains.len() != inst.var_count() || ac.rows.len() != inst.constraints().len()
    {
        return Err(Error::Precondition(
            "domain assignment does not match the instance".into(),
        ));
    }
    for (c, rows) in inst.constraints().iter().zip(&ac.rows) {
        for (j, &v) in c.scope.iter().enumerate() {
            let pr: BTreeSet<u32> = rows.iter().map(|t| t[j]).collect();
            let dom: BTreeSet<u32> = ac.assignment.domains[v].iter().copied().collect();
            if pr != dom {
                return Err(Error::Precondition(
                    "input is not an arc-consistency fixpoint".into(),
                ));
            }
        }
    }
    let is_fixed = |v: usize| ac.assignment.domains[v].len() == 1;
    let fixed: Vec<(String, u32)> = (0..inst.var_count())
        .filter(|&v| is_fixed(v))
        .map(|v| (inst.var_name(v).to_string(), ac.assignment.domains[v][0]))
        .collect();
    if fixed.is_empty() {
        return Ok(SingletonElimination {
            template: h.clone(),
            instance: inst.clone(),
            fixed,
        });
    }
    let mut template = h.clone();
    let mut constraints: Vec<(Vec<String>, String)> = Vec::new();
    for (idx, c) in inst.constraints().iter().enumerate() {
        let kept: Vec<usize> = (0..c.scope.len()).filter(|&j| !is_fixed(c.scope[j])).collect();
        if kept.len() == c.scope.len() {
            let rel = match c.rel {
                ConstraintRel::Eq => "=".to_string(),
                ConstraintRel::Sym(r) => h.rel_name(r).to_string(),
            };
            constraints.push((
                c.scope.iter().map(|&v| inst.var_name(v).to_string()).collect(),
                rel,
            ));
            continue;
        }
        let pinned_val = |j: usize| ac.assignment.domains[c.scope[j]][0];
        if kept.is_empty() {
            // Fully pinned: the arc-consistency fixpoint guarantees the
            // pinned row survives, so the constraint holds and is dropped.
            let row: Vec<u32> = (0..c.scope.len()).map(pinned_val).collect();
            let ok = match c.rel {
                ConstraintRel::Eq => row[0] == row[1],
                ConstraintRel::Sym(r) => h.rel_contains(r, &row),
            };
            if !ok {
                return Err(Error::Precondition(
                    "input is not an arc-consistency fixpoint".into(),
                ));
            }
            continue;
        }
        match c.rel {
            ConstraintRel::Eq => {
                // Arc-consistency forces equal domains on both sides of an
                // equality, so one side fixed means both are.
                unreachable!("equality with exactly one side forced survives arc-consistency");
            }
            ConstraintRel::Sym(r) => {
                let restricted: Vec<Vec<u32>> = h
                    .rel_tuples(r)
                    .iter()
                    .filter(|t| {
                        (0..c.scope.len())
                            .all(|j| kept.contains(&j) || t[j] == pinned_val(j))
                    })
                    .map(|t| kept.iter().map(|&j| t[j]).collect())
                    .collect();
                let sig: Vec<usize> = kept.iter().map(|&j| inst.var_sort(c.scope[j])).collect();
                let name = format!("{}|pin{idx}", h.rel_name(r));
                template = template.with_relation(&name, sig, restricted)?;
                constraints.push((
                    kept.iter()
                        .map(|&j| inst.var_name(c.scope[j]).to_string())
                        .collect(),
                    name,
                ));
            }
        }
    }
    let vars: Vec<(String, String)> = (0..inst.var_count())
        .filter(|&v| !is_fixed(v))
        .map(|v| {
            (
                inst.var_name(v).to_string(),
                template.sort_name(inst.var_sort(v)).to_string(),
            )
        })
        .collect();
    let instance = Instance::new(&template, vars, constraints)?;
    Ok(SingletonElimination {
        template,
        instance,
        fixed,
    })
}

// ---------------------------------------------------------------------------
// Refinements
// ---------------------------------------------------------------------------

/// One refined sort: a named, nonempty subset of the elements of one source
/// sort.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RefineDomain {
    pub name: String,
    pub sort: usize,
    pub elems: Vec<u32>,
}

/// A multi-sorted structure whose sorts embed into the sorts of a source
/// structure, with every relation a preimage of a source relation.
#[derive(Debug, Clone)]
pub struct Refinement {
    source: Structure,
    refined: Structure,
    /// Per refined sort: its source sort and the embedding (refined element
    /// index → source element index, strictly increasing).
    embeddings: Vec<(usize, Vec<u32>)>,
    /// Per refined relation: the source relation and the refined sort at
    /// each position.
    provenance: Vec<(usize, Vec<usize>)>,
}

impl Refinement {
    pub fn source(&self) -> &Structure {
        &self.source
    }

    pub fn refined(&self) -> &Structure {
        &self.refined
    }

    pub fn embeddings(&self) -> &[(usize, Vec<u32>)] {
        &self.embeddings
    }

    pub fn provenance(&self) -> &[(usize, Vec<usize>)] {
        &self.provenance
    }

    /// Name of the restriction of source relation `rel` to the refined
    /// sorts named in `doms` — present iff the signature matches.
    pub fn relation_for(&self, rel: &str, doms: &[&str]) -> Option<usize> {
        let name = std::iter::once(rel.to_string())
            .chain(doms.iter().map(|d| d.to_string()))
            .collect::<Vec<_>>()
            .join(".");
        self.refined.rel_index(&name)
    }

    /// Maps a refined tuple of sort `s` elements back into source element
    /// indices.
    pub fn embed(&self, sorts: &[usize], tuple: &[u32]) -> Vec<u32> {
        sorts
            .iter()
            .zip(tuple)
            .map(|(&s, &e)| self.embeddings[s].1[e as usize])
            .collect()
    }
}

/// Builds the refinement with one sort per listed domain and, for every
/// source relation and every combination of domains matching its signature,
/// the restricted relation `ξ^{-1}(R ∩ (ξ(G_1) × … × ξ(G_k)))`, named
/// `{relation}.{domain}.….{domain}`. Empty restrictions are kept — they
/// are legitimate relations.
pub fn build_refinement(h: &Structure, domains: &[RefineDomain]) -> Result<Refinement> {
    let mut seen = BTreeSet::new();
    for d in domains {
        if d.name.is_empty() || !seen.insert(d.name.clone()) {
            return Err(Error::Precondition(format!(
                "refined sort names must be unique and nonempty (`{}`)",
                d.name
            )));
        }
        if d.sort >= h.sort_count() {
            return Err(Error::Precondition(format!(
                "domain `{}` names sort {} which the structure lacks",
                d.name, d.sort
            )));
        }
        if d.elems.is_empty() {
            return Err(Error::Precondition(format!("domain `{}` is empty", d.name)));
        }
        if d.elems.iter().any(|&e| e as usize >= h.sort_size(d.sort)) {
            return Err(Error::Precondition(format!(
                "domain `{}` contains elements outside its sort",
                d.name
            )));
        }
    }
    // Embeddings in input order: sorted, deduplicated element lists.
    // Source elements are stored in name order, so source index order and
    // refined name order agree position by position.
    let input_emb: Vec<(usize, Vec<u32>)> = domains
        .iter()
        .map(|d| {
            let set: BTreeSet<u32> = d.elems.iter().copied().collect();
            (d.sort, set.into_iter().collect::<Vec<u32>>())
        })
        .collect();
    let sorts: Vec<(String, Vec<String>)> = domains
        .iter()
        .zip(&input_emb)
        .map(|(d, (s, emb))| {
            (
                d.name.clone(),
                emb.iter().map(|&e| h.elem_name(*s, e).to_string()).collect(),
            )
        })
        .collect();
    let mut rels: Vec<(String, Vec<String>, Vec<Vec<String>>)> = Vec::new();
    // Per generated relation: name, source relation, chosen domain (input
    // index) at each position.
    let mut generated: Vec<(String, usize, Vec<usize>)> = Vec::new();
    for r in 0..h.rel_count() {
        let sig = h.rel_sig(r);
        // Every assignment of a matching refined sort to each position.
        let choices: Vec<Vec<usize>> = sig
            .iter()
            .map(|&s| (0..domains.len()).filter(|&d| input_emb[d].0 == s).collect())
            .collect();
        if choices.iter().any(|c| c.is_empty()) {
            continue;
        }
        let mut cursor = vec![0usize; sig.len()];
        'combos: loop {
            if rels.len() >= REFINED_RELATION_LIMIT {
                return Err(Error::Guard(format!(
                    "refinement would exceed {REFINED_RELATION_LIMIT} relations"
                )));
            }
            let combo: Vec<usize> = cursor.iter().zip(&choices).map(|(&i, c)| c[i]).collect();
            let name = std::iter::once(h.rel_name(r).to_string())
                .chain(combo.iter().map(|&d| domains[d].name.clone()))
                .collect::<Vec<_>>()
                .join(".");
            let tuples: Vec<Vec<String>> = h
                .rel_tuples(r)
                .iter()
                .filter(|t| {
                    t.iter()
                        .zip(&combo)
                        .all(|(&e, &d)| input_emb[d].1.binary_search(&e).is_ok())
                })
                .map(|t| {
                    t.iter()
                        .enumerate()
                        .map(|(j, &e)| h.elem_name(sig[j], e).to_string())
                        .collect()
                })
                .collect();
            rels.push((
                name.clone(),
                combo.iter().map(|&d| domains[d].name.clone()).collect(),
                tuples,
            ));
            generated.push((name, r, combo));
            let mut pos = sig.len();
            loop {
                if pos == 0 {
                    break 'combos;
                }
                pos -= 1;
                cursor[pos] += 1;
                if cursor[pos] < choices[pos].len() {
                    break;
                }
                cursor[pos] = 0;
            }
        }
    }
    let refined = Structure::new(sorts, rels)?;
    // `Structure::new` orders sorts and relations by name; realign the
    // companion tables to refined indices.
    let sort_of_domain: Vec<usize> = domains
        .iter()
        .map(|d| refined.sort_index(&d.name).expect("sort was just created"))
        .collect();
    let mut embeddings = vec![(0usize, Vec::new()); domains.len()];
    for (d, emb) in input_emb.into_iter().enumerate() {
        embeddings[sort_of_domain[d]] = emb;
    }
    let mut provenance = vec![(0usize, Vec::new()); generated.len()];
    for (name, src, combo) in generated {
        let idx = refined.rel_index(&name).expect("relation was just created");
        provenance[idx] = (src, combo.into_iter().map(|d| sort_of_domain[d]).collect());
    }
    Ok(Refinement {
        source: h.clone(),
        refined,
        embeddings,
        provenance,
    })
}

/// Relabels an instance through a refinement: each variable moves to the
/// refined sort `assign[name]` (which must refine the variable's sort), and
/// each constraint relation is replaced by its restriction to the scope's
/// refined sorts. Equalities survive only between variables on the same
/// refined sort. Lossless whenever every solution keeps each variable
/// inside its assigned domain (as the domain pipelines guarantee).
pub fn refine_instance(
    inst: &Instance,
    refinement: &Refinement,
    assign: &BTreeMap<String, String>,
) -> Result<Instance> {
    let g = refinement.refined();
    let h = refinement.source();
    let mut vars: Vec<(String, String)> = Vec::new();
    let mut var_dom: Vec<usize> = Vec::new();
    for v in 0..inst.var_count() {
        let name = inst.var_name(v);
        let Some(dom_name) = assign.get(name) else {
            return Err(Error::Precondition(format!(
                "variable `{name}` has no refined sort assigned"
            )));
        };
        let Some(dom) = g.sort_index(dom_name) else {
            return Err(Error::Precondition(format!(
                "no refined sort named `{dom_name}`"
            )));
        };
        if refinement.embeddings[dom].0 != inst.var_sort(v) {
            return Err(Error::Precondition(format!(
                "refined sort `{dom_name}` does not refine the sort of `{name}`"
            )));
        }
        vars.push((name.to_string(), dom_name.to_string()));
        var_dom.push(dom);
    }
    let mut constraints: Vec<(Vec<String>, String)> = Vec::new();
    for c in inst.constraints() {
        let scope_names: Vec<String> = c
            .scope
            .iter()
            .map(|&v| inst.var_name(v).to_string())
            .collect();
        match c.rel {
            ConstraintRel::Eq => {
                if var_dom[c.scope[0]] != var_dom[c.scope[1]] {
                    return Err(Error::Precondition(format!(
                        "equality between `{}` and `{}` spans different refined sorts",
                        scope_names[0], scope_names[1]
                    )));
                }
                constraints.push((scope_names, "=".to_string()));
            }
            ConstraintRel::Sym(r) => {
                let doms: Vec<&str> = c
                    .scope
                    .iter()
                    .map(|&v| g.sort_name(var_dom[v]))
                    .collect();
                let Some(rr) = refinement.relation_for(h.rel_name(r), &doms) else {
                    return Err(Error::Precondition(format!(
                        "refinement lacks the restriction of `{}` to ({})",
                        h.rel_name(r),
                        doms.join(", ")
                    )));
                };
                constraints.push((scope_names, g.rel_name(rr).to_string()));
            }
        }
    }
    Ok(Instance::new(g, vars, constraints)?)
}

// ---------------------------------------------------------------------------
// The staircase-template solver
// ---------------------------------------------------------------------------

struct TpRoles {
    /// The element the low elements may not precede.
    q: u32,
    /// The unconstrained top element.
    r: u32,
}

/// Structural recognition: a single sort of `p+2` elements, all constants,
/// and one binary relation equal to the full square minus `low × {q}` with
/// `|low| = p` and `q ∉ low`.
fn recognize_tp(h: &Structure, p: u64) -> Result<TpRoles> {
    crate::require_prime(p)?;
    let fail = |why: &str| {
        Err(Error::Precondition(format!(
            "structure is not the staircase template for p={p}: {why}"
        )))
    };
    if h.sort_count() != 1 {
        return fail("more than one sort");
    }
    let n = h.sort_size(0) as u32;
    if n as u64 != p + 2 {
        return fail("wrong domain size");
    }
    if !h.has_all_constants() {
        return fail("missing constants");
    }
    let binary: Vec<usize> = (0..h.rel_count()).filter(|&r| h.rel_sig(r).len() == 2).collect();
    if binary.len() != 1 || h.rel_count() != 1 + n as usize {
        return fail("relation inventory is not one binary plus the constants");
    }
    for r in 0..h.rel_count() {
        if r != binary[0] && (h.rel_sig(r).len() != 1 || h.rel_tuples(r).len() != 1) {
            return fail("extra non-constant relation");
        }
    }
    let rel = binary[0];
    let mut missing: Vec<(u32, u32)> = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if !h.rel_contains(rel, &[a, b]) {
                missing.push((a, b));
            }
        }
    }
    if missing.len() as u64 != p {
        return fail("wrong number of missing pairs");
    }
    let q = missing[0].1;
    if missing.iter().any(|&(_, b)| b != q) {
        return fail("missing pairs do not share their second element");
    }
    let low: Vec<u32> = missing.iter().map(|&(a, _)| a).collect();
    if low.contains(&q) {
        return fail("the blocked element blocks itself");
    }
    let r = (0..n)
        .find(|e| !low.contains(e) && *e != q)
        .expect("p+2 elements leave one over");
    Ok(TpRoles { q, r })
}

/// End-to-end counting mod p over the staircase template: propagate,
/// discard forced variables, and repeatedly intersect every undecided
/// domain with the top pair `{q, r}` — solutions touching a low element
/// come in orbits of size p under the cycle on the low elements, so the
/// count mod p survives. What remains is free: `2^{undecided}`.
pub fn solve_tp(inst: &Instance, h: &Structure, p: u64) -> Result<u64> {
    let roles = recognize_tp(h, p)?;
    if inst.var_count() == 0 {
        return Ok(1 % p);
    }
    let mut domains: Vec<Vec<u32>> = (0..inst.var_count())
        .map(|v| (0..h.sort_size(inst.var_sort(v)) as u32).collect())
        .collect();
    loop {
        let ac = ac_from(inst, h, domains);
        if ac.assignment.unsat {
            return Ok(0);
        }
        domains = ac.assignment.domains;
        let mut changed = false;
        for d in domains.iter_mut() {
            if d.len() < 2 {
                continue;
            }
            let stripped: Vec<u32> = d
                .iter()
                .copied()
                .filter(|e| *e == roles.q || *e == roles.r)
                .collect();
            if stripped.len() != d.len() {
                if stripped.is_empty() {
                    return Err(Error::Precondition(
                        "propagation produced a domain outside the orbit pattern".into(),
                    ));
                }
                *d = stripped;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut free = 0u32;
    for d in &domains {
        if d.len() == 2 {
            if d != &vec![roles.q.min(roles.r), roles.q.max(roles.r)] {
                return Err(Error::Precondition(
                    "propagation produced a domain outside the orbit pattern".into(),
                ));
            }
            free += 1;
        }
    }
    Ok(pow_mod(2, free as u64, p))
}

fn pow_mod(base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    let mut b = base % m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = ((acc as u128 * b as u128) % m as u128) as u64;
        }
        b = ((b as u128 * b as u128) % m as u128) as u64;
        exp >>= 1;
    }
    acc
}

// ---------------------------------------------------------------------------
// Refine-and-reduce pipeline
// ---------------------------------------------------------------------------

/// Outcome of [`refine_and_reduce`]: the residue, how it was obtained
/// (`"unsat"`, `"product"`, or `"fallback"`), and — except on the unsat
/// short-circuit — the refinement artifacts.
#[derive(Debug)]
pub struct RefineOutcome {
    pub residue: u64,
    pub method: String,
    pub detail: Option<RefineDetail>,
}

/// The artifacts of a completed refine-and-reduce run.
#[derive(Debug)]
pub struct RefineDetail {
    pub refinement: Refinement,
    pub refined_instance: Instance,
    pub reduced: Structure,
    pub reduction_steps: usize,
}

/// Rebuilds an instance, by names, over another structure carrying the same
/// sort and relation names (possibly with fewer elements or relations).
fn reinterpret(inst: &Instance, from: &Structure, to: &Structure) -> Result<Instance> {
    let vars: Vec<(String, String)> = (0..inst.var_count())
        .map(|v| {
            (
                inst.var_name(v).to_string(),
                from.sort_name(inst.var_sort(v)).to_string(),
            )
        })
        .collect();
    let cons: Vec<(Vec<String>, String)> = inst
        .constraints()
        .iter()
        .map(|c| {
            let scope = c.scope.iter().map(|&v| inst.var_name(v).to_string()).collect();
            let rel = match c.rel {
                ConstraintRel::Eq => "=".to_string(),
                ConstraintRel::Sym(r) => from.rel_name(r).to_string(),
            };
            (scope, rel)
        })
        .collect();
    Ok(Instance::new(to, vars, cons)?)
}

fn is_full_product(h: &Structure, r: usize) -> bool {
    let expect: usize = h.rel_sig(r).iter().map(|&s| h.sort_size(s)).product();
    h.rel_tuples(r).len() == expect
}

/// The full pipeline: solver-based domains, a refinement over the distinct
/// domains, relabeling, pruning of template relations the instance never
/// uses, stripping of order-p automorphisms, and finally the count — read
/// directly as a product of sort sizes when every remaining relation is the
/// full product of its signature (and no equalities are present), and from
/// the counting oracle otherwise.
pub fn refine_and_reduce(inst: &Instance, h: &Structure, p: u64) -> Result<RefineOutcome> {
    let doms = solver_based_domains(inst, h)?;
    refine_and_reduce_with(inst, h, p, &doms)
}

/// [`refine_and_reduce`] over a caller-supplied domain assignment, which
/// must be lossless (keep every solution) — e.g. arc-consistency domains
/// when the template lacks the constants the solver-based domains need.
pub fn refine_and_reduce_with(
    inst: &Instance,
    h: &Structure,
    p: u64,
    doms: &DomainAssignment,
) -> Result<RefineOutcome> {
    crate::require_prime(p)?;
    if doms.unsat {
        return Ok(RefineOutcome {
            residue: 0,
            method: "unsat".into(),
            detail: None,
        });
    }
    // One refined sort per distinct domain, deterministically named.
    let distinct: BTreeSet<(usize, Vec<u32>)> = (0..inst.var_count())
        .map(|v| (inst.var_sort(v), doms.domains[v].clone()))
        .collect();
    let family: Vec<RefineDomain> = distinct
        .iter()
        .enumerate()
        .map(|(k, (sort, elems))| RefineDomain {
            name: format!("d{k}"),
            sort: *sort,
            elems: elems.clone(),
        })
        .collect();
    let refinement = build_refinement(h, &family)?;
    let assign: BTreeMap<String, String> = (0..inst.var_count())
        .map(|v| {
            let key = (inst.var_sort(v), doms.domains[v].clone());
            let k = distinct.iter().position(|d| *d == key).expect("own domain");
            (inst.var_name(v).to_string(), format!("d{k}"))
        })
        .collect();
    let refined_inst = refine_instance(inst, &refinement, &assign)?;
    // Unused relations only obstruct the automorphism search; drop them.
    let g = refinement.refined();
    let used: BTreeSet<&str> = refined_inst
        .constraints()
        .iter()
        .filter_map(|c| match c.rel {
            ConstraintRel::Eq => None,
            ConstraintRel::Sym(r) => Some(g.rel_name(r)),
        })
        .collect();
    let unused: Vec<&str> = (0..g.rel_count())
        .map(|r| g.rel_name(r))
        .filter(|n| !used.contains(n))
        .collect();
    let pruned = g.without_relations(&unused);
    let pruned_inst = reinterpret(&refined_inst, g, &pruned)?;
    let (reduced, trace) = crate::automorphism::p_reduce(&pruned, p)?;
    let reduced_inst = reinterpret(&pruned_inst, &pruned, &reduced)?;
    let all_products = (0..reduced.rel_count()).all(|r| is_full_product(&reduced, r));
    let any_eq = reduced_inst
        .constraints()
        .iter()
        .any(|c| matches!(c.rel, ConstraintRel::Eq));
    let (residue, method) = if all_products && !any_eq {
        let mut acc = 1u64;
        for v in 0..reduced_inst.var_count() {
            acc = acc * (reduced.sort_size(reduced_inst.var_sort(v)) as u64 % p) % p;
        }
        (acc, "product".to_string())
    } else {
        (
            oracle::count_solutions_mod(&reduced_inst, &reduced, p)?,
            "fallback".to_string(),
        )
    };
    Ok(RefineOutcome {
        residue,
        method,
        detail: Some(RefineDetail {
            refinement,
            refined_instance: refined_inst,
            reduced,
            reduction_steps: trace.steps.len(),
        }),
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn tp_instance(h: &Structure, cons: &[(&[&str], &str)]) -> Instance {
        let mut vars: BTreeSet<&str> = BTreeSet::new();
        for (scope, _) in cons {
            vars.extend(scope.iter().copied());
        }
        Instance::new(
            h,
            vars.iter().map(|v| (v.to_string(), "T".into())).collect(),
            cons.iter()
                .map(|(sc, r)| (sc.iter().map(|s| s.to_string()).collect(), r.to_string()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn arc_consistency_drops_unsupported_values() {
        let h = fixtures::t_p(2).unwrap();
        // v is pinned to 2; w must precede it, which low elements cannot.
        let inst = tp_instance(&h, &[(&["v"], "c2"), (&["w", "v"], "R")]);
        let ac = arc_consistency(&inst, &h);
        assert!(!ac.assignment.unsat);
        let v = inst.var_index("v").unwrap();
        let w = inst.var_index("w").unwrap();
        assert_eq!(ac.assignment.domains[v], vec![2]);
        assert_eq!(ac.assignment.domains[w], vec![2, 3]);
        for (c, rows) in inst.constraints().iter().zip(&ac.rows) {
            for (j, &var) in c.scope.iter().enumerate() {
                let pr: BTreeSet<u32> = rows.iter().map(|t| t[j]).collect();
                assert_eq!(
                    pr,
                    ac.assignment.domains[var].iter().copied().collect(),
                    "rows project onto domains"
                );
            }
        }
    }

    #[test]
    fn arc_consistency_is_lossless_and_flags_unsat() {
        let h = fixtures::t_p(2).unwrap();
        let inst = tp_instance(&h, &[(&["v"], "c0"), (&["v", "w"], "R"), (&["w"], "c2")]);
        let ac = arc_consistency(&inst, &h);
        assert!(ac.assignment.unsat, "0 cannot precede 2");
        let sat = tp_instance(&h, &[(&["v", "w"], "R")]);
        let ac = arc_consistency(&sat, &h);
        for sol in crate::oracle::solutions(&sat, &h) {
            for (v, &a) in sol.iter().enumerate() {
                assert!(ac.assignment.domains[v].contains(&a), "no solution lost");
            }
        }
    }

    #[test]
    fn singleton_elimination_preserves_counts() {
        let h = fixtures::t_p(2).unwrap();
        let inst = tp_instance(&h, &[(&["v"], "c2"), (&["w", "v"], "R"), (&["w", "u"], "R")]);
        let ac = arc_consistency(&inst, &h);
        let red = eliminate_singletons(&inst, &h, &ac).unwrap();
        assert_eq!(red.fixed, vec![("v".to_string(), 2)]);
        assert!(red.instance.var_count() == 2);
        let before = crate::oracle::count_solutions(&inst, &h).exact;
        let after = crate::oracle::count_solutions(&red.instance, &red.template).exact;
        assert_eq!(before, after);
        // All variables forced: the instance empties out and counts one.
        let all_fixed = tp_instance(&h, &[(&["v"], "c2"), (&["w"], "c3"), (&["v", "w"], "R")]);
        let ac = arc_consistency(&all_fixed, &h);
        let red = eliminate_singletons(&all_fixed, &h, &ac).unwrap();
        assert_eq!(red.instance.var_count(), 0);
        assert_eq!(
            crate::oracle::count_solutions(&red.instance, &red.template)
                .exact
                .to_string(),
            "1"
        );
        // No singletons: everything unchanged.
        let open = tp_instance(&h, &[(&["v", "w"], "R")]);
        let ac = arc_consistency(&open, &h);
        let red = eliminate_singletons(&open, &h, &ac).unwrap();
        assert!(red.fixed.is_empty());
        assert_eq!(red.instance.var_count(), 2);
    }

    #[test]
    fn solver_domains_refine_arc_consistency() {
        let h = fixtures::t_p(2).unwrap();
        let inst = tp_instance(&h, &[(&["v", "w"], "R"), (&["w", "x"], "R")]);
        let ac = arc_consistency(&inst, &h).assignment;
        let solver = solver_based_domains(&inst, &h).unwrap();
        for v in 0..inst.var_count() {
            for a in &solver.domains[v] {
                assert!(ac.domains[v].contains(a), "solver ⊆ arc-consistency");
            }
        }
        // A pinned variable gets a singleton, an unconstrained one the full
        // sort.
        let pinned = tp_instance(&h, &[(&["v"], "c1"), (&["w", "w"], "R")]);
        let solver = solver_based_domains(&pinned, &h).unwrap();
        let v = pinned.var_index("v").unwrap();
        let w = pinned.var_index("w").unwrap();
        assert_eq!(solver.domains[v], vec![1]);
        assert_eq!(solver.domains[w], vec![0, 1, 2, 3]);
    }

    #[test]
    fn staircase_refinement_restricts_as_expected() {
        let h = fixtures::t_p_bare(2).unwrap();
        let family: Vec<RefineDomain> = fixtures::t_p_refinement_domains(2)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(k, (sort, elems))| RefineDomain {
                name: match k {
                    0 => "all".to_string(),
                    5 => "top".to_string(),
                    6 => "mix".to_string(),
                    _ => format!("e{}", k - 1),
                },
                sort,
                elems,
            })
            .collect();
        let refinement = build_refinement(&h, &family).unwrap();
        let g = refinement.refined();
        // 7 domains for a binary relation: 49 restrictions.
        assert_eq!(g.rel_count(), 49);
        let rr = refinement.relation_for("R", &["all", "top"]).unwrap();
        let sig = g.rel_sig(rr).to_vec();
        let mapped: BTreeSet<Vec<u32>> = g
            .rel_tuples(rr)
            .iter()
            .map(|t| refinement.embed(&sig, t))
            .collect();
        let expect: BTreeSet<Vec<u32>> = [(0, 3), (1, 3), (2, 3), (3, 3), (2, 2), (3, 2)]
            .iter()
            .map(|&(a, b)| vec![a, b])
            .collect();
        assert_eq!(mapped, expect, "full-by-top restriction");
        let empty = refinement.relation_for("R", &["e0", "e2"]).unwrap();
        assert!(g.rel_tuples(empty).is_empty(), "0 before 2 is forbidden");
    }

    #[test]
    fn identity_refinement_is_a_relabeled_copy() {
        let h = fixtures::five_elem_skew();
        let family = vec![RefineDomain {
            name: "all".into(),
            sort: 0,
            elems: (0..5).collect(),
        }];
        let refinement = build_refinement(&h, &family).unwrap();
        let g = refinement.refined();
        assert_eq!(g.rel_count(), h.rel_count());
        let rr = refinement.relation_for("R", &["all", "all", "all"]).unwrap();
        assert_eq!(g.rel_tuples(rr), h.rel_tuples(h.rel_index("R").unwrap()));
        // Relabeling an instance through it preserves the count.
        let inst = Instance::new(
            &h,
            vec![("x".into(), "H".into()), ("y".into(), "H".into()), ("z".into(), "H".into())],
            vec![(vec!["x".into(), "y".into(), "z".into()], "R".into())],
        )
        .unwrap();
        let assign: BTreeMap<String, String> =
            [("x", "all"), ("y", "all"), ("z", "all")]
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect();
        let refined = refine_instance(&inst, &refinement, &assign).unwrap();
        assert_eq!(
            crate::oracle::count_solutions(&inst, &h).exact,
            crate::oracle::count_solutions(&refined, g).exact
        );
    }

    #[test]
    fn staircase_solver_agrees_with_oracle() {
        for p in [2u64, 3] {
            let h = fixtures::t_p(p).unwrap();
            let forbidden = tp_instance(&h, &[(&["v"], "c0"), (&["v", "w"], "R"), (&["w"], &format!("c{p}"))]);
            assert_eq!(solve_tp(&forbidden, &h, p).unwrap(), 0);
            let free = Instance::new(
                &h,
                (0..3).map(|i| (format!("v{i}"), "T".into())).collect(),
                vec![],
            )
            .unwrap();
            let got = solve_tp(&free, &h, p).unwrap();
            assert_eq!(got, crate::oracle::count_solutions_mod(&free, &h, p).unwrap());
            let empty = Instance::new(&h, vec![], vec![]).unwrap();
            assert_eq!(solve_tp(&empty, &h, p).unwrap(), 1 % p);
            let chain = tp_instance(&h, &[(&["v", "w"], "R"), (&["w", "x"], "R"), (&["x"], "c2")]);
            assert_eq!(
                solve_tp(&chain, &h, p).unwrap(),
                crate::oracle::count_solutions_mod(&chain, &h, p).unwrap()
            );
        }
        let not_tp = fixtures::five_elem_skew();
        let inst = Instance::new(&not_tp, vec![], vec![]).unwrap();
        assert!(solve_tp(&inst, &not_tp, 2).is_err());
    }

    #[test]
    fn pipeline_fires_the_product_shortcut() {
        let h = fixtures::t_p(2).unwrap();
        // v forced to 0; w anything 0 may precede — a mixed domain whose
        // refined copy reduces to a product structure.
        let inst = tp_instance(&h, &[(&["v"], "c0"), (&["v", "w"], "R")]);
        let out = refine_and_reduce(&inst, &h, 2).unwrap();
        assert_eq!(out.method, "product");
        let detail = out.detail.unwrap();
        assert!(detail.reduction_steps >= 1, "the mixed domain collapses");
        assert_eq!(out.residue, 1, "three solutions, odd");
        assert_eq!(
            out.residue,
            crate::oracle::count_solutions_mod(&inst, &h, 2).unwrap()
        );
    }

    #[test]
    fn pipeline_matches_oracle_on_mixed_instances() {
        let h = fixtures::t_p(2).unwrap();
        let cases: Vec<Vec<(&[&str], &str)>> = vec![
            vec![(&["v", "w"], "R")],
            vec![(&["v", "w"], "R"), (&["w", "v"], "R")],
            vec![(&["v"], "c3"), (&["v", "w"], "R"), (&["w", "x"], "R")],
            vec![(&["v"], "c0"), (&["w"], "c1"), (&["v", "x"], "R"), (&["w", "x"], "R")],
        ];
        for cons in cases {
            let inst = tp_instance(&h, &cons);
            let out = refine_and_reduce(&inst, &h, 2).unwrap();
            let expect = crate::oracle::count_solutions_mod(&inst, &h, 2).unwrap();
            assert_eq!(out.residue, expect, "constraints {cons:?}");
        }
        let unsat = tp_instance(&h, &[(&["v"], "c0"), (&["v", "w"], "R"), (&["w"], "c2")]);
        let out = refine_and_reduce(&unsat, &h, 2).unwrap();
        assert_eq!((out.residue, out.method.as_str()), (0, "unsat"));
    }
}
