//! Instance transformations that trade template features for instance
//! structure: equality elimination by variable merging, quantifier-free
//! relation expansion, the indicator construction whose solutions are the
//! n-ary polymorphisms, a Mal'tsev polymorphism search, and the
//! constants-elimination counting reduction driven by Möbius inversion over
//! the partition lattice.
//!
//! The counting reduction follows a fixed pipeline: adjoin one variable per
//! template element, tie them together with the endomorphism-graph relation,
//! replace constant constraints by equality links, score every partition of
//! the new variables with an oracle call, combine the scores with
//! Möbius-inversion weights to isolate the injective (automorphic) case, and
//! divide by the automorphism count mod p. No step is allowed to assume more
//! than p-rigidity of the template.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::mpp::MppFormula;
use crate::oracle;
use crate::structure::{Constraint, ConstraintRel, Instance, SortMaps, Structure};
use crate::{Error, Guards, Result};

// ---------------------------------------------------------------------------
// Equality elimination
// ---------------------------------------------------------------------------

/// Removes every equality constraint by merging the variables it links,
/// keeping the lexicographically least name of each merged class. The
/// solution count is preserved exactly: merged variables were forced equal,
/// so solutions correspond one-to-one.
pub fn eliminate_equality(inst: &Instance, h: &Structure) -> Result<Instance> {
    let n = inst.var_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let r = find(parent, parent[x]);
            parent[x] = r;
        }
        parent[x]
    }
    for c in inst.constraints() {
        if c.rel == ConstraintRel::Eq {
            if inst.var_sort(c.scope[0]) != inst.var_sort(c.scope[1]) {
                return Err(Error::Precondition(
                    "equality links variables of different sorts".into(),
                ));
            }
            let a = find(&mut parent, c.scope[0]);
            let b = find(&mut parent, c.scope[1]);
            // Variables are name-sorted, so the least index is the least name.
            let (keep, drop) = if a < b { (a, b) } else { (b, a) };
            parent[drop] = keep;
        }
    }
    let rep: Vec<usize> = (0..n).map(|v| find(&mut parent, v)).collect();
    let vars: Vec<(String, String)> = (0..n)
        .filter(|&v| rep[v] == v)
        .map(|v| {
            (
                inst.var_name(v).to_string(),
                h.sort_name(inst.var_sort(v)).to_string(),
            )
        })
        .collect();
    let constraints: Vec<(Vec<String>, String)> = inst
        .constraints()
        .iter()
        .filter_map(|c| match c.rel {
            ConstraintRel::Eq => None,
            ConstraintRel::Sym(r) => Some((
                c.scope
                    .iter()
                    .map(|&v| inst.var_name(rep[v]).to_string())
                    .collect(),
                h.rel_name(r).to_string(),
            )),
        })
        .collect();
    Ok(Instance::new(h, vars, constraints)?)
}

// ---------------------------------------------------------------------------
// Quantifier-free expansion
// ---------------------------------------------------------------------------

/// Replaces every constraint on `rel` by the atoms of its quantifier-free
/// conjunctive definition, on the same variables. The count is preserved
/// exactly (no variables are added or removed).
pub fn conjunctive_expand(
    inst: &Instance,
    h_ext: &Structure,
    rel: &str,
    def: &MppFormula,
    h: &Structure,
    guards: &Guards,
) -> Result<Instance> {
    if !def.blocks().is_empty() {
        return Err(Error::Precondition(
            "conjunctive expansion requires a quantifier-free definition".into(),
        ));
    }
    crate::mpp::rewrite_instance(inst, h_ext, rel, def, h, guards)
}

// ---------------------------------------------------------------------------
// The indicator construction and polymorphisms
// ---------------------------------------------------------------------------

fn tuple_var_name(h: &Structure, s: usize, t: &[u32]) -> String {
    let names: Vec<&str> = t.iter().map(|&e| h.elem_name(s, e)).collect();
    format!("{}({})", h.sort_name(s), names.join(","))
}

fn tuples_of_len(size: usize, n: usize) -> Vec<Vec<u32>> {
    if size == 0 && n > 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur = vec![0u32; n];
    loop {
        out.push(cur.clone());
        let mut pos = n;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            cur[pos] += 1;
            if (cur[pos] as usize) < size {
                break;
            }
            cur[pos] = 0;
        }
    }
}

/// Builds the instance whose solutions are exactly the n-ary polymorphisms:
/// one variable per n-tuple over each sort, and for every relation and every
/// ordered n-tuple of its rows, the constraint applying the relation to the
/// column tuples.
pub fn indicator_problem(h: &Structure, n: usize, guards: &Guards) -> Result<Instance> {
    if n == 0 {
        return Err(Error::Precondition("indicator order must be at least 1".into()));
    }
    let var_total: usize = (0..h.sort_count())
        .map(|s| h.sort_size(s).pow(n as u32))
        .sum();
    if var_total > 4096 {
        return Err(Error::Guard(format!(
            "indicator instance would have {var_total} variables (limit 4096)"
        )));
    }
    guards.check_universe(h.universe_size(), "indicator construction")?;
    let mut vars = Vec::with_capacity(var_total);
    for s in 0..h.sort_count() {
        for t in tuples_of_len(h.sort_size(s), n) {
            vars.push((tuple_var_name(h, s, &t), h.sort_name(s).to_string()));
        }
    }
    let mut constraints: Vec<(Vec<String>, String)> = Vec::new();
    for r in 0..h.rel_count() {
        let sig = h.rel_sig(r).to_vec();
        let rows = h.rel_tuples(r);
        if rows.is_empty() {
            continue;
        }
        let combos = rows.len().checked_pow(n as u32).ok_or_else(|| {
            Error::Guard("indicator constraint count overflows".into())
        })?;
        if constraints.len() + combos > 200_000 {
            return Err(Error::Guard(
                "indicator instance would exceed 200000 constraints".into(),
            ));
        }
        let mut pick = vec![0usize; n];
        loop {
            let scope: Vec<String> = (0..sig.len())
                .map(|j| {
                    let col: Vec<u32> = pick.iter().map(|&i| rows[i][j]).collect();
                    tuple_var_name(h, sig[j], &col)
                })
                .collect();
            constraints.push((scope, h.rel_name(r).to_string()));
            let mut pos = n;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                pick[pos] += 1;
                if pick[pos] < rows.len() {
                    break;
                }
                pick[pos] = 0;
            }
            if pick.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    constraints.sort();
    constraints.dedup();
    Ok(Instance::new(h, vars, constraints)?)
}

/// An n-ary operation family: per sort, a total map from n-tuples of
/// elements to an element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polymorphism {
    pub n: usize,
    pub tables: Vec<BTreeMap<Vec<u32>, u32>>,
}

impl Polymorphism {
    /// Applies the sort-`s` operation.
    pub fn apply(&self, s: usize, args: &[u32]) -> u32 {
        *self.tables[s].get(args).expect("total operation table")
    }

    /// Decodes an indicator-instance solution back into operation tables.
    pub fn from_indicator_solution(
        h: &Structure,
        n: usize,
        inst: &Instance,
        asg: &[u32],
    ) -> Result<Polymorphism> {
        let mut tables = Vec::with_capacity(h.sort_count());
        for s in 0..h.sort_count() {
            let mut table = BTreeMap::new();
            for t in tuples_of_len(h.sort_size(s), n) {
                let v = inst
                    .var_index(&tuple_var_name(h, s, &t))
                    .ok_or_else(|| Error::Input("assignment is not over an indicator instance".into()))?;
                table.insert(t, asg[v]);
            }
            tables.push(table);
        }
        Ok(Polymorphism { n, tables })
    }

    /// The i-th n-ary projection family (returns argument `i`).
    pub fn projection(h: &Structure, n: usize, i: usize) -> Polymorphism {
        let tables = (0..h.sort_count())
            .map(|s| {
                tuples_of_len(h.sort_size(s), n)
                    .into_iter()
                    .map(|t| {
                        let v = t[i];
                        (t, v)
                    })
                    .collect()
            })
            .collect();
        Polymorphism { n, tables }
    }
}

/// True iff applying `f` coordinate-wise to any n rows of any relation lands
/// back in the relation (and the tables are total).
pub fn is_polymorphism(h: &Structure, f: &Polymorphism) -> bool {
    for s in 0..h.sort_count() {
        for t in tuples_of_len(h.sort_size(s), f.n) {
            match f.tables[s].get(&t) {
                Some(&v) if (v as usize) < h.sort_size(s) => {}
                _ => return false,
            }
        }
    }
    for r in 0..h.rel_count() {
        let sig = h.rel_sig(r);
        let rows = h.rel_tuples(r);
        let mut pick = vec![0usize; f.n];
        if rows.is_empty() {
            continue;
        }
        loop {
            let image: Vec<u32> = (0..sig.len())
                .map(|j| {
                    let col: Vec<u32> = pick.iter().map(|&i| rows[i][j]).collect();
                    f.apply(sig[j], &col)
                })
                .collect();
            if !h.rel_contains(r, &image) {
                return false;
            }
            let mut pos = f.n;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                pick[pos] += 1;
                if pick[pos] < rows.len() {
                    break;
                }
                pick[pos] = 0;
            }
            if pick.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    true
}

/// True iff the ternary family satisfies f(a,a,b) = f(b,a,a) = b on every
/// sort.
pub fn satisfies_maltsev_identities(h: &Structure, f: &Polymorphism) -> bool {
    if f.n != 3 {
        return false;
    }
    for s in 0..h.sort_count() {
        for a in 0..h.sort_size(s) as u32 {
            for b in 0..h.sort_size(s) as u32 {
                if f.apply(s, &[a, a, b]) != b || f.apply(s, &[b, a, a]) != b {
                    return false;
                }
            }
        }
    }
    true
}

/// Searches for a Mal'tsev polymorphism: a ternary polymorphism with
/// f(a,a,b) = f(b,a,a) = b. A cheap sound screen runs first: a Mal'tsev
/// polymorphism forces every relation, and every classical product of
/// compatible binary relations, to be rectangular in every view (products
/// are definable from the template by a conjunction and one existential
/// variable, so they inherit the polymorphism). If a screen fails, no search
/// is needed.
pub fn find_maltsev(h: &Structure, guards: &Guards) -> Result<Option<Polymorphism>> {
    guards.check_universe(h.universe_size(), "Mal'tsev search")?;
    for r in 0..h.rel_count() {
        if crate::properties::is_relation_rectangular(h.rel_tuples(r), h.rel_arity(r))?.is_some() {
            return Ok(None);
        }
    }
    for r1 in 0..h.rel_count() {
        for r2 in 0..h.rel_count() {
            let (s1, s2) = (h.rel_sig(r1), h.rel_sig(r2));
            if s1.len() != 2 || s2.len() != 2 || s1[1] != s2[0] {
                continue;
            }
            let prod =
                crate::properties::compose_tuples(h.rel_tuples(r1), h.rel_tuples(r2));
            if !crate::properties::is_rectangular(&prod, 2, &[0])?.is_ok() {
                return Ok(None);
            }
        }
    }
    let inst = indicator_problem(h, 3, guards)?;
    let mut pinned: Vec<Option<u32>> = vec![None; inst.var_count()];
    for s in 0..h.sort_count() {
        for a in 0..h.sort_size(s) as u32 {
            for b in 0..h.sort_size(s) as u32 {
                for t in [vec![a, a, b], vec![b, a, a]] {
                    let v = inst
                        .var_index(&tuple_var_name(h, s, &t))
                        .expect("indicator variable");
                    pinned[v] = Some(b);
                }
            }
        }
    }
    let Some(asg) = oracle::first_solution_propagated(&inst, h, &pinned)? else {
        return Ok(None);
    };
    let f = Polymorphism::from_indicator_solution(h, 3, &inst, &asg)?;
    if !is_polymorphism(h, &f) || !satisfies_maltsev_identities(h, &f) {
        return Err(Error::Precondition(
            "internal check failed: indicator solution is not a Mal'tsev polymorphism".into(),
        ));
    }
    Ok(Some(f))
}

// ---------------------------------------------------------------------------
// Möbius weights on the partition lattice
// ---------------------------------------------------------------------------

/// A partition of the template universe (one set partition per sort, blocks
/// of element indices) with its Möbius-inversion weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionWeight {
    pub blocks: Vec<Vec<Vec<u32>>>,
    pub weight: i64,
}

fn rgs_to_blocks(rgs: &[u32]) -> Vec<Vec<u32>> {
    let nb = rgs.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut blocks = vec![Vec::new(); nb];
    for (e, &b) in rgs.iter().enumerate() {
        blocks[b as usize].push(e as u32);
    }
    blocks
}

fn closed_form_weight(blocks: &[Vec<u32>]) -> i64 {
    let mut w = 1i64;
    for b in blocks {
        let k = b.len() as i64;
        let mut f = 1i64;
        for i in 1..k {
            f *= i;
        }
        w *= if (k - 1) % 2 == 0 { f } else { -f };
    }
    w
}

/// `fine` refines `coarse`: every block of `fine` lies inside a block of
/// `coarse`. Partitions given as restricted-growth strings.
fn refines(fine: &[u32], coarse: &[u32]) -> bool {
    // Same fine-block elements must share a coarse block.
    let mut coarse_of_fine: BTreeMap<u32, u32> = BTreeMap::new();
    for i in 0..fine.len() {
        match coarse_of_fine.get(&fine[i]) {
            Some(&c) => {
                if c != coarse[i] {
                    return false;
                }
            }
            None => {
                coarse_of_fine.insert(fine[i], coarse[i]);
            }
        }
    }
    true
}

/// Recursive Möbius values from the finest partition: μ(finest) = 1 and each
/// coarser θ gets minus the sum over its strict refinements.
fn recursive_mobius(n: usize) -> Vec<(Vec<u32>, i64)> {
    let parts = oracle::set_partitions(n);
    // Order by decreasing block count so refinements come first.
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by_key(|&i| {
        std::cmp::Reverse(parts[i].iter().copied().max().unwrap_or(0))
    });
    let mut mu: BTreeMap<usize, i64> = BTreeMap::new();
    for &i in &order {
        let mut v = if parts[i].iter().copied().max().unwrap_or(0) as usize == n - 1 {
            1
        } else {
            0
        };
        for &j in &order {
            if j != i && mu.contains_key(&j) && refines(&parts[j], &parts[i]) {
                v -= mu[&j];
            }
        }
        mu.insert(i, v);
    }
    parts
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, mu[&i]))
        .collect()
}

static VERIFIED_MOBIUS_SIZES: Mutex<Option<Vec<usize>>> = Mutex::new(None);

fn check_mobius_closed_form(n: usize) {
    let mut guard = VERIFIED_MOBIUS_SIZES.lock().unwrap();
    let seen = guard.get_or_insert_with(Vec::new);
    if seen.contains(&n) {
        return;
    }
    for (rgs, mu) in recursive_mobius(n) {
        let cf = closed_form_weight(&rgs_to_blocks(&rgs));
        assert_eq!(
            cf, mu,
            "Möbius closed form disagrees with recursive inversion at size {n}"
        );
    }
    seen.push(n);
}

/// Every partition of the template universe with its inversion weight; the
/// weighted sum of coarser-or-equal scores recovers the injective score.
/// The closed form is cross-checked against a direct recursive inversion
/// once per process for each sort size encountered.
pub fn partition_mobius_weights(h: &Structure, guards: &Guards) -> Result<Vec<PartitionWeight>> {
    guards.check_universe(h.universe_size(), "partition-lattice enumeration")?;
    for s in 0..h.sort_count() {
        if h.sort_size(s) > 0 {
            check_mobius_closed_form(h.sort_size(s));
        }
    }
    let per_sort: Vec<Vec<Vec<Vec<u32>>>> = (0..h.sort_count())
        .map(|s| {
            oracle::set_partitions(h.sort_size(s))
                .iter()
                .map(|rgs| rgs_to_blocks(rgs))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut cursor = vec![0usize; h.sort_count()];
    loop {
        let blocks: Vec<Vec<Vec<u32>>> = cursor
            .iter()
            .enumerate()
            .map(|(s, &i)| per_sort[s][i].clone())
            .collect();
        let weight = blocks.iter().map(|b| closed_form_weight(b)).product();
        out.push(PartitionWeight { blocks, weight });
        let mut pos = h.sort_count();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            cursor[pos] += 1;
            if cursor[pos] < per_sort[pos].len() {
                break;
            }
            cursor[pos] = 0;
        }
        if cursor.iter().all(|&i| i == 0) {
            return Ok(out);
        }
    }
}

// ---------------------------------------------------------------------------
// Constant elimination by counting reduction
// ---------------------------------------------------------------------------

fn fresh_prefix(inst: &Instance, base: char) -> String {
    let mut prefix = format!("_{base}");
    while (0..inst.var_count()).any(|v| inst.var_name(v).starts_with(&prefix)) {
        prefix.push(base);
    }
    prefix
}

fn fresh_rel_name(h: &Structure, base: &str) -> String {
    let mut name = base.to_string();
    while h.rel_index(&name).is_some() {
        name.push('_');
    }
    name
}

/// Counts solutions of an instance over the constant-expanded template
/// `h_c`, mod p, using only solution counts over the constant-free template
/// `h`. Constant relations are the relations of `h_c` missing from `h`; each
/// must be a unary singleton. The pipeline: adjoin a variable per template
/// element, constrain the family to be an endomorphism graph, replace
/// constant constraints by equality links, score every partition of the new
/// variables by an oracle count with intra-block equalities added, combine
/// with Möbius weights (isolating injective, i.e. automorphic, families),
/// and divide by the automorphism count.
pub fn count_with_constants(
    inst: &Instance,
    h_c: &Structure,
    h: &Structure,
    p: u64,
    guards: &Guards,
) -> Result<u64> {
    crate::require_prime(p)?;
    guards.check_universe(h.universe_size(), "constants reduction")?;
    for s in 0..h.sort_count().max(h_c.sort_count()) {
        if s >= h.sort_count()
            || s >= h_c.sort_count()
            || h.sort_name(s) != h_c.sort_name(s)
            || h.elem_names(s) != h_c.elem_names(s)
        {
            return Err(Error::Precondition(
                "the two templates must share sorts and elements".into(),
            ));
        }
    }
    if !crate::automorphism::is_p_rigid(h, p)? {
        return Err(Error::Precondition(format!(
            "template has an order-{p} automorphism; the reduction needs p-rigidity"
        )));
    }
    // Classify h_c's relations: shared with h, or constants to eliminate.
    let mut constants: BTreeMap<String, (usize, u32)> = BTreeMap::new();
    for r in 0..h_c.rel_count() {
        let name = h_c.rel_name(r);
        match h.rel_index(name) {
            Some(hr) => {
                if h.rel_sig(hr) != h_c.rel_sig(r) || h.rel_tuples(hr) != h_c.rel_tuples(r) {
                    return Err(Error::Precondition(format!(
                        "relation `{name}` differs between the templates"
                    )));
                }
            }
            None => {
                let sig = h_c.rel_sig(r);
                let tuples = h_c.rel_tuples(r);
                if sig.len() != 1 || tuples.len() != 1 {
                    return Err(Error::Precondition(format!(
                        "extra relation `{name}` is not a unary singleton constant"
                    )));
                }
                constants.insert(name.to_string(), (sig[0], tuples[0][0]));
            }
        }
    }
    // The endomorphism-graph relation over h, one position per element.
    let endos: Vec<SortMaps> = oracle::enumerate_homs(h, h)?;
    let mut endo_sig = Vec::new();
    for s in 0..h.sort_count() {
        for _ in 0..h.sort_size(s) {
            endo_sig.push(s);
        }
    }
    let endo_tuples: Vec<Vec<u32>> = endos
        .iter()
        .map(|maps| maps.iter().flatten().copied().collect())
        .collect();
    let endo_name = fresh_rel_name(h, "endo_graph");
    let h_q = h.with_relation(&endo_name, endo_sig, endo_tuples)?;
    // Rebuild the instance over h_q with the element variables adjoined.
    let prefix = fresh_prefix(inst, 'v');
    let elem_var = |s: usize, e: u32| format!("{prefix}.{}.{}", h.sort_name(s), h.elem_name(s, e));
    let mut vars: Vec<(String, String)> = (0..inst.var_count())
        .map(|v| {
            (
                inst.var_name(v).to_string(),
                h.sort_name(inst.var_sort(v)).to_string(),
            )
        })
        .collect();
    for s in 0..h.sort_count() {
        for e in 0..h.sort_size(s) as u32 {
            vars.push((elem_var(s, e), h.sort_name(s).to_string()));
        }
    }
    let mut constraints: Vec<(Vec<String>, String)> = Vec::new();
    for c in inst.constraints() {
        let scope: Vec<String> = c
            .scope
            .iter()
            .map(|&v| inst.var_name(v).to_string())
            .collect();
        match c.rel {
            ConstraintRel::Eq => constraints.push((scope, "=".to_string())),
            ConstraintRel::Sym(r) => {
                let name = h_c.rel_name(r);
                match constants.get(name) {
                    Some(&(s, e)) => {
                        constraints.push((vec![scope[0].clone(), elem_var(s, e)], "=".to_string()));
                    }
                    None => constraints.push((scope, name.to_string())),
                }
            }
        }
    }
    let endo_scope: Vec<String> = (0..h.sort_count())
        .flat_map(|s| (0..h.sort_size(s) as u32).map(move |e| (s, e)))
        .map(|(s, e)| elem_var(s, e))
        .collect();
    constraints.push((endo_scope, endo_name.clone()));
    let base = Instance::new(&h_q, vars, constraints)?;
    // Element-variable indices in the rebuilt instance, per sort.
    let elem_var_idx: Vec<Vec<usize>> = (0..h.sort_count())
        .map(|s| {
            (0..h.sort_size(s) as u32)
                .map(|e| base.var_index(&elem_var(s, e)).expect("adjoined variable"))
                .collect()
        })
        .collect();
    // Score every partition and combine with the inversion weights.
    let weights = partition_mobius_weights(h, guards)?;
    let mut injective_score: u64 = 0;
    for pw in &weights {
        let mut extra = Vec::new();
        for (s, sort_blocks) in pw.blocks.iter().enumerate() {
            for block in sort_blocks {
                for pair in block.windows(2) {
                    extra.push(Constraint {
                        scope: vec![
                            elem_var_idx[s][pair[0] as usize],
                            elem_var_idx[s][pair[1] as usize],
                        ],
                        rel: ConstraintRel::Eq,
                    });
                }
            }
        }
        let score = oracle::count_solutions_mod(&base.with_constraints(extra), &h_q, p)?;
        let w = pw.weight.rem_euclid(p as i64) as u64;
        injective_score = (injective_score + w * score) % p;
    }
    // Injective endomorphisms are automorphisms; each automorphism twists
    // the constants into an equivalent instance, so divide its count out.
    let aut = crate::automorphism::enumerate_automorphisms(h).len() as u64;
    let aut_mod = aut % p;
    debug_assert_ne!(aut_mod, 0, "p-rigidity keeps the automorphism count invertible");
    let mut inv = 1u64;
    let mut base_pow = aut_mod;
    let mut exp = p - 2;
    while exp > 0 {
        if exp & 1 == 1 {
            inv = ((inv as u128 * base_pow as u128) % p as u128) as u64;
        }
        base_pow = ((base_pow as u128 * base_pow as u128) % p as u128) as u64;
        exp >>= 1;
    }
    Ok(((injective_score as u128 * inv as u128) % p as u128) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::Structure;

    fn two_elem() -> Structure {
        // One binary relation: the order relation of a two-element chain.
        Structure::new(
            vec![("H".into(), vec!["0".into(), "1".into()])],
            vec![(
                "le".into(),
                vec!["H".into(), "H".into()],
                vec![
                    vec!["0".into(), "0".into()],
                    vec!["0".into(), "1".into()],
                    vec!["1".into(), "1".into()],
                ],
            )],
        )
        .unwrap()
    }

    #[test]
    fn equality_merge_preserves_counts() {
        let h = two_elem();
        let inst = Instance::new(
            &h,
            vec![
                ("a".into(), "H".into()),
                ("b".into(), "H".into()),
                ("c".into(), "H".into()),
            ],
            vec![
                (vec!["a".into(), "b".into()], "=".into()),
                (vec!["b".into(), "c".into()], "=".into()),
                (vec!["a".into(), "c".into()], "le".into()),
            ],
        )
        .unwrap();
        let merged = eliminate_equality(&inst, &h).unwrap();
        assert_eq!(merged.var_count(), 1);
        assert!(!merged.has_equality());
        assert_eq!(
            oracle::count_solutions(&inst, &h).exact,
            oracle::count_solutions(&merged, &h).exact
        );
    }

    #[test]
    fn unary_indicator_solutions_are_endomorphisms() {
        let h = two_elem();
        let guards = Guards::default();
        let inst = indicator_problem(&h, 1, &guards).unwrap();
        let sols = oracle::solutions(&inst, &h);
        let endos = oracle::enumerate_homs(&h, &h).unwrap();
        assert_eq!(sols.len(), endos.len());
        // Projections solve every indicator instance.
        let i3 = indicator_problem(&h, 3, &guards).unwrap();
        for i in 0..3 {
            let pr = Polymorphism::projection(&h, 3, i);
            assert!(is_polymorphism(&h, &pr));
            let asg: Vec<u32> = (0..i3.var_count())
                .map(|v| {
                    let name = i3.var_name(v);
                    let inner = &name[2..name.len() - 1];
                    let parts: Vec<u32> = inner
                        .split(',')
                        .map(|en| h.elem_index(0, en).unwrap())
                        .collect();
                    pr.apply(0, &parts)
                })
                .collect();
            assert!(i3.satisfied_by(&h, &asg));
        }
    }

    #[test]
    fn chain_template_has_maltsev_only_without_order() {
        let guards = Guards::default();
        // The full binary relation: any Mal'tsev table works, search succeeds.
        let mut full = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                full.push(vec![a.to_string(), b.to_string()]);
            }
        }
        let h_full = Structure::new(
            vec![("H".into(), vec!["0".into(), "1".into()])],
            vec![("r".into(), vec!["H".into(), "H".into()], full)],
        )
        .unwrap();
        let f = find_maltsev(&h_full, &guards).unwrap().unwrap();
        assert!(satisfies_maltsev_identities(&h_full, &f));
        assert!(is_polymorphism(&h_full, &f));
    }

    #[test]
    fn mobius_weights_invert_block_scores() {
        let h = two_elem();
        let guards = Guards::default();
        let w = partition_mobius_weights(&h, &guards).unwrap();
        // Two partitions of a 2-element sort: singletons (weight 1) and the
        // merged block (weight -1).
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].weight * w[1].weight, -1);
        assert_eq!(w.iter().map(|pw| pw.weight).sum::<i64>(), 0);
    }

    #[test]
    fn constants_reduction_matches_direct_count() {
        let h = two_elem();
        let h_c = h
            .with_relation("c0", vec![0], vec![vec![0]])
            .unwrap()
            .with_relation("c1", vec![0], vec![vec![1]])
            .unwrap();
        let guards = Guards::default();
        // x <= y with x pinned to 0: two solutions; mod 2 -> 0.
        let inst = Instance::new(
            &h_c,
            vec![("x".into(), "H".into()), ("y".into(), "H".into())],
            vec![
                (vec!["x".into(), "y".into()], "le".into()),
                (vec!["x".into()], "c0".into()),
            ],
        )
        .unwrap();
        let direct = oracle::count_solutions_mod(&inst, &h_c, 2).unwrap();
        let via = count_with_constants(&inst, &h_c, &h, 2, &guards).unwrap();
        assert_eq!(direct, via);
        // Pinned to a full valid solution -> exactly 1.
        let pinned = Instance::new(
            &h_c,
            vec![("x".into(), "H".into()), ("y".into(), "H".into())],
            vec![
                (vec!["x".into(), "y".into()], "le".into()),
                (vec!["x".into()], "c0".into()),
                (vec!["y".into()], "c1".into()),
            ],
        )
        .unwrap();
        assert_eq!(count_with_constants(&pinned, &h_c, &h, 2, &guards).unwrap(), 1);
        // Pinned to a non-solution -> 0.
        let broken = Instance::new(
            &h_c,
            vec![("x".into(), "H".into()), ("y".into(), "H".into())],
            vec![
                (vec!["x".into(), "y".into()], "le".into()),
                (vec!["x".into()], "c1".into()),
                (vec!["y".into()], "c0".into()),
            ],
        )
        .unwrap();
        assert_eq!(count_with_constants(&broken, &h_c, &h, 2, &guards).unwrap(), 0);
    }
}
