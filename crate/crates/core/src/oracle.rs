//! Brute-force exact counting: the ground truth everything else is tested
//! against.
//!
//! All counters here enumerate assignments exhaustively with early constraint
//! pruning and count in arbitrary precision; nothing in this module is
//! allowed to be clever, because every other module's correctness argument
//! bottoms out in a comparison against these numbers. Variables are assigned
//! in descending constraint-degree order (a pure speedup: the result does not
//! depend on the order), and each constraint is checked as soon as its scope
//! is fully assigned.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::Zero;

use crate::structure::{
    factor_structure, structure_to_instance, Anchored, Assignment, Constraint, ConstraintRel,
    Instance, SortMaps, Structure,
};
use crate::{Error, Result};

/// An exact homomorphism or solution count, optionally with a residue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HomCount {
    pub exact: BigUint,
    /// `(residue, modulus)` when a modulus was requested.
    pub reduced: Option<(u64, u64)>,
}

impl HomCount {
    pub fn exact(exact: BigUint) -> HomCount {
        HomCount {
            exact,
            reduced: None,
        }
    }

    pub fn with_mod(exact: BigUint, p: u64) -> HomCount {
        let residue = (&exact % p)
            .try_into()
            .expect("residue below a u64 modulus fits in u64");
        HomCount {
            exact,
            reduced: Some((residue, p)),
        }
    }
}

// ---------------------------------------------------------------------------
// The one backtracking engine
// ---------------------------------------------------------------------------

/// Exhaustive assignment search over instance variables with optional
/// injectivity (per sort) and pinned variables. `visit` sees each satisfying
/// assignment (in the instance's variable indexing) and returns `false` to
/// stop early.
fn search_assignments(
    h: &Structure,
    inst: &Instance,
    pinned: &[Option<u32>],
    injective: bool,
    visit: &mut dyn FnMut(&[u32]) -> bool,
) {
    let n = inst.var_count();
    debug_assert_eq!(pinned.len(), n);
    // Pinned variables first, then descending constraint degree.
    let mut degree = vec![0usize; n];
    for c in inst.constraints() {
        for &v in &c.scope {
            degree[v] += 1;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (pinned[v].is_none(), std::cmp::Reverse(degree[v]), v));
    let mut pos_of = vec![0usize; n];
    for (pos, &v) in order.iter().enumerate() {
        pos_of[v] = pos;
    }
    // Constraints become checkable at the position where their scope closes.
    let mut ready: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (ci, c) in inst.constraints().iter().enumerate() {
        let last = c.scope.iter().map(|&v| pos_of[v] + 1).max().unwrap_or(0);
        ready[last].push(ci);
    }
    let check = |c: &Constraint, asg: &[u32]| -> bool {
        match c.rel {
            ConstraintRel::Eq => asg[c.scope[0]] == asg[c.scope[1]],
            ConstraintRel::Sym(r) => {
                let t: Vec<u32> = c.scope.iter().map(|&v| asg[v]).collect();
                h.rel_contains(r, &t)
            }
        }
    };
    if !ready[0]
        .iter()
        .all(|&ci| check(&inst.constraints()[ci], &[]))
    {
        return;
    }

    let mut asg = vec![0u32; n];
    let mut used: Vec<Vec<bool>> = (0..h.sort_count())
        .map(|s| vec![false; h.sort_size(s)])
        .collect();

    struct Ctx<'a> {
        h: &'a Structure,
        inst: &'a Instance,
        order: &'a [usize],
        ready: &'a [Vec<usize>],
        pinned: &'a [Option<u32>],
        injective: bool,
    }

    fn rec(
        cx: &Ctx<'_>,
        pos: usize,
        asg: &mut [u32],
        used: &mut [Vec<bool>],
        visit: &mut dyn FnMut(&[u32]) -> bool,
        stop: &mut bool,
    ) {
        if pos == cx.order.len() {
            if !visit(asg) {
                *stop = true;
            }
            return;
        }
        let v = cx.order[pos];
        let s = cx.inst.var_sort(v);
        let candidates: Vec<u32> = match cx.pinned[v] {
            Some(e) => vec![e],
            None => (0..cx.h.sort_size(s) as u32).collect(),
        };
        for e in candidates {
            if cx.injective && used[s][e as usize] {
                continue;
            }
            asg[v] = e;
            let ok = cx.ready[pos + 1].iter().all(|&ci| {
                let c = &cx.inst.constraints()[ci];
                match c.rel {
                    ConstraintRel::Eq => asg[c.scope[0]] == asg[c.scope[1]],
                    ConstraintRel::Sym(r) => {
                        let t: Vec<u32> = c.scope.iter().map(|&vv| asg[vv]).collect();
                        cx.h.rel_contains(r, &t)
                    }
                }
            });
            if ok {
                if cx.injective {
                    used[s][e as usize] = true;
                }
                rec(cx, pos + 1, asg, used, visit, stop);
                if cx.injective {
                    used[s][e as usize] = false;
                }
                if *stop {
                    return;
                }
            }
        }
    }

    let cx = Ctx {
        h,
        inst,
        order: &order,
        ready: &ready,
        pinned,
        injective,
    };
    let mut stop = false;
    rec(&cx, 0, &mut asg, &mut used, visit, &mut stop);
}

// ---------------------------------------------------------------------------
// Instance counting
// ---------------------------------------------------------------------------

/// Exact number of solutions of `inst` over `h`.
pub fn count_solutions(inst: &Instance, h: &Structure) -> HomCount {
    let mut count = BigUint::zero();
    search_assignments(h, inst, &vec![None; inst.var_count()], false, &mut |_| {
        count += 1u32;
        true
    });
    HomCount::exact(count)
}

/// Solution count mod a prime `p`.
pub fn count_solutions_mod(inst: &Instance, h: &Structure, p: u64) -> Result<u64> {
    crate::require_prime(p)?;
    let c = count_solutions(inst, h);
    Ok((&c.exact % p).try_into().expect("residue fits"))
}

/// Materializes every solution (in instance variable order).
pub fn solutions(inst: &Instance, h: &Structure) -> Vec<Assignment> {
    let mut out = Vec::new();
    search_assignments(h, inst, &vec![None; inst.var_count()], false, &mut |a| {
        out.push(a.to_vec());
        true
    });
    out
}

/// First solution (in search order) consistent with the pinned values,
/// `pinned[v] = Some(e)` forcing variable `v` to element `e`.
pub fn first_solution_pinned(
    inst: &Instance,
    h: &Structure,
    pinned: &[Option<u32>],
) -> Result<Option<Assignment>> {
    if pinned.len() != inst.var_count() {
        return Err(Error::Precondition(
            "pin vector length must equal the variable count".into(),
        ));
    }
    for (v, pin) in pinned.iter().enumerate() {
        if let Some(e) = pin {
            if *e as usize >= h.sort_size(inst.var_sort(v)) {
                return Err(Error::Precondition(format!(
                    "pinned value {e} outside the sort of variable `{}`",
                    inst.var_name(v)
                )));
            }
        }
    }
    let mut found = None;
    search_assignments(h, inst, pinned, false, &mut |a| {
        found = Some(a.to_vec());
        false
    });
    Ok(found)
}

// ---------------------------------------------------------------------------
// Decision search with propagation
// ---------------------------------------------------------------------------
//
// The counters above stay deliberately naive; the search below is the one
// place where propagation is allowed, because it only ever answers "is there
// a solution, and which one comes first" — a question the naive engine can
// re-answer in tests. Construction algorithms (polymorphism search, witness
// functions) call this; no counting function does.

/// Removes every domain value without support in some constraint, to a
/// fixpoint. Returns `false` iff a domain wiped out.
fn ac_fixpoint(h: &Structure, inst: &Instance, doms: &mut [Vec<bool>]) -> bool {
    loop {
        let mut changed = false;
        for c in inst.constraints() {
            match c.rel {
                ConstraintRel::Eq => {
                    let (u, v) = (c.scope[0], c.scope[1]);
                    for e in 0..doms[u].len() {
                        if doms[u][e] != doms[v][e] {
                            doms[u][e] = false;
                            doms[v][e] = false;
                            changed = true;
                        }
                    }
                }
                ConstraintRel::Sym(r) => {
                    let k = c.scope.len();
                    let mut support: Vec<Vec<bool>> = c
                        .scope
                        .iter()
                        .map(|&v| vec![false; doms[v].len()])
                        .collect();
                    for t in h.rel_tuples(r) {
                        if (0..k).all(|i| doms[c.scope[i]][t[i] as usize]) {
                            for i in 0..k {
                                support[i][t[i] as usize] = true;
                            }
                        }
                    }
                    for i in 0..k {
                        let v = c.scope[i];
                        for e in 0..doms[v].len() {
                            if doms[v][e] && !support[i][e] {
                                doms[v][e] = false;
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
        if doms.iter().any(|d| d.iter().all(|&x| !x)) {
            return false;
        }
        if !changed {
            return true;
        }
    }
}

/// First solution in variable-index order with ascending element values —
/// i.e. the lexicographically least solution in the instance's coordinate
/// order — consistent with the pins, or `None`. Complete search: assignment
/// in index order with arc-consistency re-established after every choice, so
/// large tree-shaped instances solve without backtracking while the result
/// is exactly what [`first_solution_pinned`] would find under a lex-order
/// scan.
pub fn first_solution_propagated(
    inst: &Instance,
    h: &Structure,
    pinned: &[Option<u32>],
) -> Result<Option<Assignment>> {
    let n = inst.var_count();
    if pinned.len() != n {
        return Err(Error::Precondition(
            "pin vector length must equal the variable count".into(),
        ));
    }
    let mut doms: Vec<Vec<bool>> = (0..n)
        .map(|v| vec![true; h.sort_size(inst.var_sort(v))])
        .collect();
    for (v, pin) in pinned.iter().enumerate() {
        if let Some(e) = pin {
            if *e as usize >= doms[v].len() {
                return Err(Error::Precondition(format!(
                    "pinned value {e} outside the sort of variable `{}`",
                    inst.var_name(v)
                )));
            }
            for x in doms[v].iter_mut() {
                *x = false;
            }
            doms[v][*e as usize] = true;
        }
    }
    if !ac_fixpoint(h, inst, &mut doms) {
        return Ok(None);
    }

    fn rec(h: &Structure, inst: &Instance, v: usize, doms: &[Vec<bool>]) -> Option<Assignment> {
        if v == inst.var_count() {
            return Some(
                doms.iter()
                    .map(|d| d.iter().position(|&x| x).expect("nonempty domain") as u32)
                    .collect(),
            );
        }
        let values: Vec<usize> = (0..doms[v].len()).filter(|&e| doms[v][e]).collect();
        for e in values {
            let mut next = doms.to_vec();
            for x in next[v].iter_mut() {
                *x = false;
            }
            next[v][e] = true;
            if ac_fixpoint(h, inst, &mut next) {
                if let Some(sol) = rec(h, inst, v + 1, &next) {
                    return Some(sol);
                }
            }
        }
        None
    }
    Ok(rec(h, inst, 0, &doms))
}

// ---------------------------------------------------------------------------
// Homomorphism counting
// ---------------------------------------------------------------------------

fn hom_instance(g: &Structure, h: &Structure) -> Result<Instance> {
    structure_to_instance(g, h).map_err(Error::from)
}

/// Variable index of element `(s, e)` of `g` in the instance built by
/// [`structure_to_instance`]: variables are named `"<sort>.<element>"` and
/// sorted by name.
fn hom_var_table(g: &Structure, inst: &Instance) -> SortMaps {
    (0..g.sort_count())
        .map(|s| {
            (0..g.sort_size(s) as u32)
                .map(|e| {
                    inst.var_index(&format!("{}.{}", g.sort_name(s), g.elem_name(s, e)))
                        .expect("hom instance names every element") as u32
                })
                .collect()
        })
        .collect()
}

/// Exact number of homomorphisms from `g` to `h`.
pub fn count_hom(g: &Structure, h: &Structure) -> Result<HomCount> {
    Ok(count_solutions(&hom_instance(g, h)?, h))
}

/// Homomorphism count mod a prime `p`.
pub fn count_hom_mod(g: &Structure, h: &Structure, p: u64) -> Result<u64> {
    crate::require_prime(p)?;
    let c = count_hom(g, h)?;
    Ok((&c.exact % p).try_into().expect("residue fits"))
}

/// Materializes every homomorphism `g -> h` as per-sort image tables.
pub fn enumerate_homs(g: &Structure, h: &Structure) -> Result<Vec<SortMaps>> {
    let inst = hom_instance(g, h)?;
    let table = hom_var_table(g, &inst);
    let mut out = Vec::new();
    search_assignments(h, &inst, &vec![None; inst.var_count()], false, &mut |a| {
        out.push(
            table
                .iter()
                .map(|row| row.iter().map(|&v| a[v as usize]).collect())
                .collect(),
        );
        true
    });
    Ok(out)
}

fn anchored_pins(
    k: &Anchored,
    g: &Anchored,
    inst: &Instance,
    table: &SortMaps,
) -> Option<Vec<Option<u32>>> {
    if k.anchors.len() != g.anchors.len() {
        return None;
    }
    let mut pinned = vec![None; inst.var_count()];
    for (&(sk, ek), &(sg, eg)) in k.anchors.iter().zip(&g.anchors) {
        if sk != sg {
            return None;
        }
        let v = table[sk][ek as usize] as usize;
        match pinned[v] {
            None => pinned[v] = Some(eg),
            Some(prev) if prev != eg => return None,
            _ => {}
        }
    }
    Some(pinned)
}

/// Homomorphisms `(K,z) -> (G,x)` sending each anchor to its counterpart.
pub fn count_hom_anchored(k: &Anchored, g: &Anchored) -> Result<HomCount> {
    let inst = hom_instance(&k.structure, &g.structure)?;
    let table = hom_var_table(&k.structure, &inst);
    let pinned = match anchored_pins(k, g, &inst, &table) {
        Some(p) => p,
        None => return Ok(HomCount::exact(BigUint::zero())),
    };
    let mut count = BigUint::zero();
    search_assignments(&g.structure, &inst, &pinned, false, &mut |_| {
        count += 1u32;
        true
    });
    Ok(HomCount::exact(count))
}

/// Injective homomorphisms `(K,z) -> (G,x)`: sort-respecting, injective on
/// every sort, anchors mapped pointwise. Anchor tuples of different equality
/// type give 0 (a conflicting pin or an injectivity clash).
pub fn count_inj(k: &Anchored, g: &Anchored) -> Result<BigUint> {
    let inst = hom_instance(&k.structure, &g.structure)?;
    let table = hom_var_table(&k.structure, &inst);
    let pinned = match anchored_pins(k, g, &inst, &table) {
        Some(p) => p,
        None => return Ok(BigUint::zero()),
    };
    let mut count = BigUint::zero();
    search_assignments(&g.structure, &inst, &pinned, true, &mut |_| {
        count += 1u32;
        true
    });
    Ok(count)
}

// ---------------------------------------------------------------------------
// Extension counts over explicit tuple sets
// ---------------------------------------------------------------------------

/// Number of tuples of `rel` agreeing with `partial` on `positions`.
pub fn count_ext(rel: &[Vec<u32>], positions: &[usize], partial: &[u32]) -> u64 {
    debug_assert_eq!(positions.len(), partial.len());
    rel.iter()
        .filter(|t| positions.iter().zip(partial).all(|(&i, &v)| t[i] == v))
        .count() as u64
}

/// Extension count mod a prime.
pub fn count_ext_mod(rel: &[Vec<u32>], positions: &[usize], partial: &[u32], p: u64) -> Result<u64> {
    crate::require_prime(p)?;
    Ok(count_ext(rel, positions, partial) % p)
}

/// Classical projection of a tuple set to `positions` (deduplicated, sorted).
pub fn proj(rel: &[Vec<u32>], positions: &[usize]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = rel
        .iter()
        .map(|t| positions.iter().map(|&i| t[i]).collect())
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Modular projection: keeps a projected tuple iff its extension count is
/// nonzero mod `p`.
pub fn proj_mod(rel: &[Vec<u32>], positions: &[usize], p: u64) -> Result<Vec<Vec<u32>>> {
    crate::require_prime(p)?;
    Ok(proj(rel, positions)
        .into_iter()
        .filter(|t| count_ext(rel, positions, t) % p != 0)
        .collect())
}

// ---------------------------------------------------------------------------
// Injective counts via the partition-lattice recurrence
// ---------------------------------------------------------------------------

/// All partitions of `{0..n}` as restricted-growth strings (block index per
/// element, blocks numbered by first occurrence). The first entry is the
/// all-singletons partition.
pub fn set_partitions(n: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut rgs = vec![0u32; n];
    // Restricted growth: the first element opens block 0, and element i may
    // join an existing block or open the next one.
    fn rec(rgs: &mut Vec<u32>, i: usize, next: u32, out: &mut Vec<Vec<u32>>) {
        if i == rgs.len() {
            out.push(rgs.clone());
            return;
        }
        for b in 0..=next {
            rgs[i] = b;
            rec(rgs, i + 1, next.max(b + 1), out);
        }
    }
    if n == 0 {
        return vec![Vec::new()];
    }
    rgs[0] = 0;
    rec(&mut rgs, 1, 1, &mut out);
    // All-singletons first, then by increasing coarseness (block count
    // descending groups it roughly; exact order is irrelevant to callers
    // beyond the first entry).
    out.sort_by_key(|r| {
        let blocks = r.iter().max().map_or(0, |&m| m + 1);
        (std::cmp::Reverse(blocks), r.clone())
    });
    out
}

fn is_discrete(rgs: &[u32]) -> bool {
    rgs.iter().enumerate().all(|(i, &b)| b == i as u32)
}

/// Computes `inj((K,z),(G,x))` from homomorphism counts alone, by the
/// recurrence `hom(K,G) = Σ_θ inj(K/θ, G)` over partitions θ of K's universe
/// (anchors project to their blocks): subtracting the strictly-coarser terms
/// isolates the injective count. Must agree with [`count_inj`] exactly; the
/// two are kept as independent routes on purpose.
pub fn inj_from_hom_by_mobius(
    k: &Anchored,
    g: &Anchored,
    hom: &mut dyn FnMut(&Anchored, &Anchored) -> Result<BigUint>,
) -> Result<BigUint> {
    let mut total = BigInt::from_biguint(Sign::Plus, hom(k, g)?);
    let sizes: Vec<usize> = (0..k.structure.sort_count())
        .map(|s| k.structure.sort_size(s))
        .collect();
    let per_sort: Vec<Vec<Vec<u32>>> = sizes.iter().map(|&n| set_partitions(n)).collect();
    let mut pick: Vec<usize> = vec![0; per_sort.len()];
    loop {
        let discrete = pick
            .iter()
            .zip(&per_sort)
            .all(|(&i, ps)| is_discrete(&ps[i]));
        if !discrete {
            // Build the factor structure for this combined partition.
            let part: crate::structure::Partition = pick
                .iter()
                .zip(&per_sort)
                .map(|(&i, ps)| {
                    let rgs = &ps[i];
                    let nb = rgs.iter().max().map_or(0, |&m| m + 1);
                    (0..nb)
                        .map(|b| {
                            rgs.iter()
                                .enumerate()
                                .filter(|(_, &bb)| bb == b)
                                .map(|(e, _)| e as u32)
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let (fk, projm) = factor_structure(&k.structure, &part)?;
            let anchors = k
                .anchors
                .iter()
                .map(|&(s, e)| (s, projm[s][e as usize]))
                .collect();
            let fk = Anchored::new(fk, anchors)?;
            let sub = inj_from_hom_by_mobius(&fk, g, hom)?;
            total -= BigInt::from_biguint(Sign::Plus, sub);
        }
        // odometer over per-sort partition choices
        let mut pos = pick.len();
        loop {
            if pos == 0 {
                let (sign, mag) = total.into_parts();
                if sign == Sign::Minus {
                    return Err(Error::Precondition(
                        "partition recurrence produced a negative count".into(),
                    ));
                }
                return Ok(mag);
            }
            pos -= 1;
            pick[pos] += 1;
            if pick[pos] < per_sort[pos].len() {
                break;
            }
            pick[pos] = 0;
        }
    }
}

/// `inj` computed through the recurrence with the default hom oracle.
pub fn count_inj_by_mobius(k: &Anchored, g: &Anchored) -> Result<BigUint> {
    inj_from_hom_by_mobius(k, g, &mut |a, b| Ok(count_hom_anchored(a, b)?.exact))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::direct_product;

    fn digraph(n: usize, edges: &[(usize, usize)]) -> Structure {
        let elems: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        Structure::new(
            vec![("V".into(), elems.clone())],
            vec![(
                "E".into(),
                vec!["V".into(), "V".into()],
                edges
                    .iter()
                    .map(|&(a, b)| vec![elems[a].clone(), elems[b].clone()])
                    .collect(),
            )],
        )
        .unwrap()
    }

    #[test]
    fn free_variables_contribute_domain_factors() {
        let h = digraph(4, &[]);
        let p = Instance::new(
            &h,
            (0..3)
                .map(|i| (format!("x{i}"), "V".to_string()))
                .collect(),
            vec![],
        )
        .unwrap();
        assert_eq!(count_solutions(&p, &h).exact, BigUint::from(64u32));
    }

    #[test]
    fn hom_count_multiplies_over_products() {
        let g = digraph(3, &[(0, 1), (1, 2)]);
        let h1 = digraph(2, &[(0, 1), (1, 0)]);
        let h2 = digraph(3, &[(0, 1), (1, 2), (2, 0)]);
        let prod = direct_product(&h1, &h2).unwrap();
        let lhs = count_hom(&g, &prod).unwrap().exact;
        let rhs = count_hom(&g, &h1).unwrap().exact * count_hom(&g, &h2).unwrap().exact;
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn extension_counts_match_hand_enumeration() {
        // Tuples over indices: {(1,0,2),(1,0,3),(0,1,1)}
        let rel = vec![vec![1, 0, 2], vec![1, 0, 3], vec![0, 1, 1]];
        assert_eq!(count_ext(&rel, &[0, 1], &[1, 0]), 2);
        assert_eq!(count_ext(&rel, &[0, 1, 2], &[1, 0, 2]), 1);
        assert_eq!(count_ext(&rel, &[0], &[2]), 0);
        assert_eq!(proj(&rel, &[0, 1]), vec![vec![0, 1], vec![1, 0]]);
        // mod 2: (1,0) has 2 extensions -> dropped
        assert_eq!(proj_mod(&rel, &[0, 1], 2).unwrap(), vec![vec![0, 1]]);
    }

    #[test]
    fn mobius_route_matches_direct_injective_count() {
        let k = digraph(3, &[(0, 1), (1, 2)]);
        let g = digraph(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (1, 0)]);
        for anchors in [vec![], vec![(0usize, 0u32)]] {
            let ka = Anchored::new(k.clone(), anchors.clone()).unwrap();
            for target in 0..4u32 {
                let ga = Anchored::new(
                    g.clone(),
                    anchors.iter().map(|&(s, _)| (s, target)).collect(),
                )
                .unwrap();
                let direct = count_inj(&ka, &ga).unwrap();
                let via = count_inj_by_mobius(&ka, &ga).unwrap();
                assert_eq!(direct, via);
            }
        }
    }

    #[test]
    fn mismatched_anchor_equality_types_count_zero() {
        let g = digraph(2, &[(0, 1)]);
        // K anchored at (v0, v0); G anchored at (v0, v1): no map can send one
        // element to two.
        let ka = Anchored::new(g.clone(), vec![(0, 0), (0, 0)]).unwrap();
        let ga = Anchored::new(g.clone(), vec![(0, 0), (0, 1)]).unwrap();
        assert_eq!(count_inj(&ka, &ga).unwrap(), BigUint::zero());
        assert!(count_hom_anchored(&ka, &ga).unwrap().exact.is_zero());
    }

    #[test]
    fn composite_modulus_rejected() {
        let h = digraph(2, &[]);
        let p = Instance::new(&h, vec![("x".into(), "V".into())], vec![]).unwrap();
        assert!(count_solutions_mod(&p, &h, 4).is_err());
        assert!(count_solutions_mod(&p, &h, 2).is_ok());
    }
}
