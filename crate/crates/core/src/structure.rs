//! Multi-sorted relational structures and CSP instances.
//!
//! A [`Structure`] is a finite family of disjoint sorts plus typed relations:
//! every relation symbol carries a signature (a list of sorts) and an
//! interpretation (a set of tuples). Element names are interned to dense
//! per-sort indices; all stored orders are canonical (names sorted, tuples
//! sorted lexicographically), so equal structures compare equal and every
//! iteration in the crate is deterministic.
//!
//! An [`Instance`] is the variables/constraints view of a CSP over a fixed
//! template structure; [`instance_to_structure`] and [`structure_to_instance`]
//! translate between that view and the homomorphism view. Anchored
//! (distinguished-vertex) structures, products, powers, induced substructures,
//! factor structures, and gluing along anchors live here as well.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StructureError {
    #[error("duplicate sort name `{0}`")]
    DuplicateSort(String),
    #[error("duplicate element `{0}` in sort `{1}`")]
    DuplicateElement(String, String),
    #[error("duplicate relation name `{0}`")]
    DuplicateRelation(String),
    #[error("relation `{0}` names unknown sort `{1}`")]
    UnknownSort(String, String),
    #[error("relation `{0}`: tuple {1:?} does not match arity {2}")]
    ArityMismatch(String, Vec<String>, usize),
    #[error("relation `{0}`: element `{1}` not in sort `{2}`")]
    UnknownElement(String, String, String),
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("constraint references unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("constraint scope {0:?} does not fit relation `{1}`")]
    ScopeMismatch(Vec<String>, String),
    #[error("equality constraint must bind two variables of one sort, got {0:?}")]
    BadEquality(Vec<String>),
    #[error("{0}")]
    Other(String),
}

type SResult<T> = std::result::Result<T, StructureError>;

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
struct SortData {
    name: String,
    elems: Vec<String>, // sorted
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct RelData {
    name: String,
    sig: Vec<usize>,
    tuples: Vec<Vec<u32>>, // sorted lexicographically, deduplicated
}

/// A finite multi-sorted relational structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Structure {
    sorts: Vec<SortData>, // sorted by name
    rels: Vec<RelData>,   // sorted by name
}

impl Structure {
    /// Builds a structure from name-based raw parts, validating sorts,
    /// element membership, and arities. Input order is irrelevant: the
    /// result is canonical.
    pub fn new(
        sorts: Vec<(String, Vec<String>)>,
        rels: Vec<(String, Vec<String>, Vec<Vec<String>>)>,
    ) -> SResult<Structure> {
        let mut sort_data: Vec<SortData> = Vec::new();
        for (name, mut elems) in sorts {
            if sort_data.iter().any(|s| s.name == name) {
                return Err(StructureError::DuplicateSort(name));
            }
            elems.sort();
            for w in elems.windows(2) {
                if w[0] == w[1] {
                    return Err(StructureError::DuplicateElement(w[0].clone(), name));
                }
            }
            sort_data.push(SortData { name, elems });
        }
        sort_data.sort_by(|a, b| a.name.cmp(&b.name));

        let sort_idx = |n: &str| sort_data.iter().position(|s| s.name == n);
        let mut rel_data: Vec<RelData> = Vec::new();
        for (name, sig_names, tuples) in rels {
            if rel_data.iter().any(|r| r.name == name) {
                return Err(StructureError::DuplicateRelation(name));
            }
            let mut sig = Vec::with_capacity(sig_names.len());
            for sn in &sig_names {
                match sort_idx(sn) {
                    Some(i) => sig.push(i),
                    None => return Err(StructureError::UnknownSort(name, sn.clone())),
                }
            }
            let mut enc: Vec<Vec<u32>> = Vec::with_capacity(tuples.len());
            for t in tuples {
                if t.len() != sig.len() {
                    return Err(StructureError::ArityMismatch(name, t, sig.len()));
                }
                let mut row = Vec::with_capacity(t.len());
                for (pos, e) in t.iter().enumerate() {
                    let sd = &sort_data[sig[pos]];
                    match sd.elems.binary_search(e) {
                        Ok(i) => row.push(i as u32),
                        Err(_) => {
                            return Err(StructureError::UnknownElement(
                                name,
                                e.clone(),
                                sd.name.clone(),
                            ))
                        }
                    }
                }
                enc.push(row);
            }
            enc.sort();
            enc.dedup();
            rel_data.push(RelData {
                name,
                sig,
                tuples: enc,
            });
        }
        rel_data.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(Structure {
            sorts: sort_data,
            rels: rel_data,
        })
    }

    /// Internal constructor from already-encoded parts; re-canonicalizes
    /// tuple order but trusts indices to be in range.
    pub(crate) fn from_encoded(
        sorts: Vec<(String, Vec<String>)>,
        rels: Vec<(String, Vec<usize>, Vec<Vec<u32>>)>,
    ) -> Structure {
        let mut sort_data: Vec<(usize, SortData)> = sorts
            .into_iter()
            .enumerate()
            .map(|(i, (name, elems))| (i, SortData { name, elems }))
            .collect();
        // Sorts must keep their index meaning: callers pass sorted-by-name
        // sorts with sorted element lists.
        debug_assert!(sort_data.windows(2).all(|w| w[0].1.name <= w[1].1.name));
        debug_assert!(sort_data
            .iter()
            .all(|(_, s)| s.elems.windows(2).all(|w| w[0] < w[1])));
        let mut rel_data: Vec<RelData> = rels
            .into_iter()
            .map(|(name, sig, mut tuples)| {
                tuples.sort();
                tuples.dedup();
                RelData { name, sig, tuples }
            })
            .collect();
        rel_data.sort_by(|a, b| a.name.cmp(&b.name));
        Structure {
            sorts: sort_data.drain(..).map(|(_, s)| s).collect(),
            rels: rel_data,
        }
    }

    // -- accessors ---------------------------------------------------------

    pub fn sort_count(&self) -> usize {
        self.sorts.len()
    }

    pub fn sort_name(&self, s: usize) -> &str {
        &self.sorts[s].name
    }

    pub fn sort_index(&self, name: &str) -> Option<usize> {
        self.sorts.iter().position(|s| s.name == name)
    }

    pub fn sort_size(&self, s: usize) -> usize {
        self.sorts[s].elems.len()
    }

    pub fn universe_size(&self) -> usize {
        self.sorts.iter().map(|s| s.elems.len()).sum()
    }

    pub fn elem_name(&self, s: usize, e: u32) -> &str {
        &self.sorts[s].elems[e as usize]
    }

    pub fn elem_index(&self, s: usize, name: &str) -> Option<u32> {
        self.sorts[s].elems.binary_search_by(|x| x.as_str().cmp(name)).ok().map(|i| i as u32)
    }

    pub fn elem_names(&self, s: usize) -> &[String] {
        &self.sorts[s].elems
    }

    pub fn rel_count(&self) -> usize {
        self.rels.len()
    }

    pub fn rel_name(&self, r: usize) -> &str {
        &self.rels[r].name
    }

    pub fn rel_index(&self, name: &str) -> Option<usize> {
        self.rels.iter().position(|r| r.name == name)
    }

    pub fn rel_sig(&self, r: usize) -> &[usize] {
        &self.rels[r].sig
    }

    pub fn rel_arity(&self, r: usize) -> usize {
        self.rels[r].sig.len()
    }

    pub fn rel_tuples(&self, r: usize) -> &[Vec<u32>] {
        &self.rels[r].tuples
    }

    pub fn rel_contains(&self, r: usize, t: &[u32]) -> bool {
        self.rels[r].tuples.binary_search_by(|x| x.as_slice().cmp(t)).is_ok()
    }

    /// True when both structures have identical sort names and relation
    /// names/signatures (interpretations may differ).
    pub fn same_signature(&self, other: &Structure) -> bool {
        self.sorts.len() == other.sorts.len()
            && self
                .sorts
                .iter()
                .zip(&other.sorts)
                .all(|(a, b)| a.name == b.name)
            && self.rels.len() == other.rels.len()
            && self
                .rels
                .iter()
                .zip(&other.rels)
                .all(|(a, b)| a.name == b.name && a.sig == b.sig)
    }

    /// Returns a copy with one relation added (name must be fresh).
    pub fn with_relation(
        &self,
        name: &str,
        sig: Vec<usize>,
        tuples: Vec<Vec<u32>>,
    ) -> SResult<Structure> {
        if self.rel_index(name).is_some() {
            return Err(StructureError::DuplicateRelation(name.to_string()));
        }
        let mut rels: Vec<(String, Vec<usize>, Vec<Vec<u32>>)> = self
            .rels
            .iter()
            .map(|r| (r.name.clone(), r.sig.clone(), r.tuples.clone()))
            .collect();
        rels.push((name.to_string(), sig, tuples));
        Ok(Structure::from_encoded(
            self.sorts
                .iter()
                .map(|s| (s.name.clone(), s.elems.clone()))
                .collect(),
            rels,
        ))
    }

    /// Returns a copy without the named relations.
    pub fn without_relations(&self, names: &[&str]) -> Structure {
        Structure::from_encoded(
            self.sorts
                .iter()
                .map(|s| (s.name.clone(), s.elems.clone()))
                .collect(),
            self.rels
                .iter()
                .filter(|r| !names.contains(&r.name.as_str()))
                .map(|r| (r.name.clone(), r.sig.clone(), r.tuples.clone()))
                .collect(),
        )
    }

    /// Unary singleton relations, i.e. constants: relation names paired with
    /// the (sort, element) they pin.
    pub fn constant_relations(&self) -> Vec<(String, usize, u32)> {
        let mut out = Vec::new();
        for r in &self.rels {
            if r.sig.len() == 1 && r.tuples.len() == 1 {
                out.push((r.name.clone(), r.sig[0], r.tuples[0][0]));
            }
        }
        out
    }

    /// True when every element of every sort is pinned by some constant
    /// relation.
    pub fn has_all_constants(&self) -> bool {
        let consts: BTreeSet<(usize, u32)> = self
            .constant_relations()
            .into_iter()
            .map(|(_, s, e)| (s, e))
            .collect();
        (0..self.sort_count())
            .all(|s| (0..self.sort_size(s) as u32).all(|e| consts.contains(&(s, e))))
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.sorts {
            writeln!(f, "sort {}: {{{}}}", s.name, s.elems.join(", "))?;
        }
        for r in &self.rels {
            let sig: Vec<&str> = r.sig.iter().map(|&i| self.sort_name(i)).collect();
            writeln!(f, "rel {}({}): {} tuples", r.name, sig.join(", "), r.tuples.len())?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Maps between structures
// ---------------------------------------------------------------------------

/// A sort-respecting map `G -> H`: for each sort, the image of every element.
pub type SortMaps = Vec<Vec<u32>>;

/// Applies a map to one tuple of relation `r` of `g`.
pub fn map_tuple(g: &Structure, map: &SortMaps, r: usize, t: &[u32]) -> Vec<u32> {
    g.rel_sig(r)
        .iter()
        .zip(t)
        .map(|(&s, &e)| map[s][e as usize])
        .collect()
}

/// True iff `map` is a homomorphism from `g` to `h` (same signature assumed
/// checked by the caller for relation identity; sorts are matched by index).
pub fn is_homomorphism(map: &SortMaps, g: &Structure, h: &Structure) -> bool {
    if !g.same_signature(h) {
        return false;
    }
    for r in 0..g.rel_count() {
        for t in g.rel_tuples(r) {
            if !h.rel_contains(r, &map_tuple(g, map, r, t)) {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Products, powers, substructures, factors
// ---------------------------------------------------------------------------

fn pair_name(a: &str, b: &str) -> String {
    format!("({a},{b})")
}

/// Direct product `A x B` of two same-signature structures. Elements of sort
/// `S` are pairs `(a,b)`; a relation holds on a tuple of pairs iff it holds
/// componentwise.
pub fn direct_product(a: &Structure, b: &Structure) -> SResult<Structure> {
    if !a.same_signature(b) {
        return Err(StructureError::SignatureMismatch(
            "direct_product requires identical signatures".into(),
        ));
    }
    // Per sort: pair names, sorted; remember (ia, ib) -> new index.
    let mut sorts = Vec::new();
    let mut maps: Vec<BTreeMap<(u32, u32), u32>> = Vec::new();
    for s in 0..a.sort_count() {
        let mut names = Vec::new();
        for (ia, ea) in a.elem_names(s).iter().enumerate() {
            for (ib, eb) in b.elem_names(s).iter().enumerate() {
                names.push((pair_name(ea, eb), ia as u32, ib as u32));
            }
        }
        names.sort();
        let mut map = BTreeMap::new();
        for (idx, (_, ia, ib)) in names.iter().enumerate() {
            map.insert((*ia, *ib), idx as u32);
        }
        maps.push(map);
        sorts.push((
            a.sort_name(s).to_string(),
            names.into_iter().map(|(n, _, _)| n).collect(),
        ));
    }
    let mut rels = Vec::new();
    for r in 0..a.rel_count() {
        let sig = a.rel_sig(r).to_vec();
        let mut tuples = Vec::new();
        for ta in a.rel_tuples(r) {
            for tb in b.rel_tuples(r) {
                let t: Vec<u32> = sig
                    .iter()
                    .zip(ta.iter().zip(tb))
                    .map(|(&s, (&x, &y))| maps[s][&(x, y)])
                    .collect();
                tuples.push(t);
            }
        }
        rels.push((a.rel_name(r).to_string(), sig, tuples));
    }
    Ok(Structure::from_encoded(sorts, rels))
}

/// `k`-th direct power of `h` (`k >= 1`). Elements are `k`-tuples named
/// `(a1,...,ak)`; relations hold componentwise.
pub fn power(h: &Structure, k: usize) -> SResult<Structure> {
    if k == 0 {
        return Err(StructureError::Other("power requires k >= 1".into()));
    }
    let mut sorts = Vec::new();
    let mut maps: Vec<BTreeMap<Vec<u32>, u32>> = Vec::new();
    for s in 0..h.sort_count() {
        let n = h.sort_size(s);
        let mut names: Vec<(String, Vec<u32>)> = Vec::new();
        let mut idx = vec![0u32; k];
        loop {
            let name = format!(
                "({})",
                idx.iter()
                    .map(|&i| h.elem_name(s, i))
                    .collect::<Vec<_>>()
                    .join(",")
            );
            names.push((name, idx.clone()));
            // odometer over element indices
            let mut pos = k;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                idx[pos] += 1;
                if (idx[pos] as usize) < n {
                    break;
                }
                idx[pos] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
            if n == 0 {
                break;
            }
        }
        if n == 0 {
            names.clear();
        }
        names.sort();
        let mut map = BTreeMap::new();
        for (i, (_, t)) in names.iter().enumerate() {
            map.insert(t.clone(), i as u32);
        }
        maps.push(map);
        sorts.push((
            h.sort_name(s).to_string(),
            names.into_iter().map(|(n, _)| n).collect(),
        ));
    }
    let mut rels = Vec::new();
    for r in 0..h.rel_count() {
        let sig = h.rel_sig(r).to_vec();
        let m = h.rel_tuples(r).len();
        let mut tuples = Vec::new();
        if m > 0 {
            let mut pick = vec![0usize; k];
            loop {
                let chosen: Vec<&Vec<u32>> = pick.iter().map(|&i| &h.rel_tuples(r)[i]).collect();
                let t: Vec<u32> = (0..sig.len())
                    .map(|pos| {
                        let comp: Vec<u32> = chosen.iter().map(|tu| tu[pos]).collect();
                        maps[sig[pos]][&comp]
                    })
                    .collect();
                tuples.push(t);
                let mut pos = k;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    pick[pos] += 1;
                    if pick[pos] < m {
                        break;
                    }
                    pick[pos] = 0;
                }
                if pick.iter().all(|&i| i == 0) {
                    break;
                }
            }
        }
        rels.push((h.rel_name(r).to_string(), sig, tuples));
    }
    Ok(Structure::from_encoded(sorts, rels))
}

/// Substructure of `h` induced by a subset of each sort (indices into the
/// sorts of `h`). Relation tuples survive iff all coordinates survive.
pub fn induced_substructure(h: &Structure, keep: &[Vec<u32>]) -> SResult<Structure> {
    if keep.len() != h.sort_count() {
        return Err(StructureError::Other(
            "induced_substructure: one subset per sort required".into(),
        ));
    }
    let mut sorts = Vec::new();
    let mut remap: Vec<BTreeMap<u32, u32>> = Vec::new();
    for (s, ks) in keep.iter().enumerate() {
        let mut ks = ks.clone();
        ks.sort();
        ks.dedup();
        if let Some(&bad) = ks.iter().find(|&&e| e as usize >= h.sort_size(s)) {
            return Err(StructureError::Other(format!(
                "induced_substructure: element index {bad} out of range in sort {}",
                h.sort_name(s)
            )));
        }
        let mut map = BTreeMap::new();
        let names: Vec<String> = ks
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                map.insert(e, i as u32);
                h.elem_name(s, e).to_string()
            })
            .collect();
        remap.push(map);
        sorts.push((h.sort_name(s).to_string(), names));
    }
    let mut rels = Vec::new();
    for r in 0..h.rel_count() {
        let sig = h.rel_sig(r).to_vec();
        let tuples: Vec<Vec<u32>> = h
            .rel_tuples(r)
            .iter()
            .filter_map(|t| {
                sig.iter()
                    .zip(t)
                    .map(|(&s, e)| remap[s].get(e).copied())
                    .collect::<Option<Vec<u32>>>()
            })
            .collect();
        rels.push((h.rel_name(r).to_string(), sig, tuples));
    }
    Ok(Structure::from_encoded(sorts, rels))
}

/// A partition of the universe of a structure: per sort, a list of disjoint
/// covering blocks (element indices).
pub type Partition = Vec<Vec<Vec<u32>>>;

/// Validates a partition of `h`'s universe and returns it with blocks sorted
/// canonically (each block ascending, blocks ordered by first member).
pub fn normalize_partition(h: &Structure, part: &Partition) -> SResult<Partition> {
    if part.len() != h.sort_count() {
        return Err(StructureError::Other(
            "partition: one block list per sort required".into(),
        ));
    }
    let mut out = Vec::new();
    for (s, blocks) in part.iter().enumerate() {
        let mut seen = vec![false; h.sort_size(s)];
        let mut bs: Vec<Vec<u32>> = Vec::new();
        for b in blocks {
            let mut b = b.clone();
            b.sort();
            b.dedup();
            if b.is_empty() {
                continue;
            }
            for &e in &b {
                if e as usize >= h.sort_size(s) || seen[e as usize] {
                    return Err(StructureError::Other(format!(
                        "partition: bad or repeated element {e} in sort {}",
                        h.sort_name(s)
                    )));
                }
                seen[e as usize] = true;
            }
            bs.push(b);
        }
        if !seen.iter().all(|&x| x) {
            return Err(StructureError::Other(format!(
                "partition does not cover sort {}",
                h.sort_name(s)
            )));
        }
        bs.sort();
        out.push(bs);
    }
    Ok(out)
}

/// Factor structure `h / part`: elements are blocks, relations are images of
/// the projection. Returns the structure and, per sort, the block index of
/// every original element.
pub fn factor_structure(h: &Structure, part: &Partition) -> SResult<(Structure, SortMaps)> {
    let part = normalize_partition(h, part)?;
    let mut sorts = Vec::new();
    let mut proj: SortMaps = Vec::new();
    // Block names sort as "[m1,m2,...]"; blocks are ordered by first member,
    // which need not agree with name order, so build names first and re-sort.
    let mut renames: Vec<BTreeMap<u32, u32>> = Vec::new();
    for (s, blocks) in part.iter().enumerate() {
        let mut named: Vec<(String, usize)> = blocks
            .iter()
            .enumerate()
            .map(|(bi, b)| {
                let name = format!(
                    "[{}]",
                    b.iter()
                        .map(|&e| h.elem_name(s, e))
                        .collect::<Vec<_>>()
                        .join(",")
                );
                (name, bi)
            })
            .collect();
        named.sort();
        let mut rename = BTreeMap::new();
        for (new_idx, (_, bi)) in named.iter().enumerate() {
            rename.insert(*bi as u32, new_idx as u32);
        }
        let mut p = vec![0u32; h.sort_size(s)];
        for (bi, b) in blocks.iter().enumerate() {
            for &e in b {
                p[e as usize] = rename[&(bi as u32)];
            }
        }
        proj.push(p);
        renames.push(rename);
        sorts.push((
            h.sort_name(s).to_string(),
            named.into_iter().map(|(n, _)| n).collect(),
        ));
    }
    let mut rels = Vec::new();
    for r in 0..h.rel_count() {
        let sig = h.rel_sig(r).to_vec();
        let tuples: Vec<Vec<u32>> = h
            .rel_tuples(r)
            .iter()
            .map(|t| {
                sig.iter()
                    .zip(t)
                    .map(|(&s, &e)| proj[s][e as usize])
                    .collect()
            })
            .collect();
        rels.push((h.rel_name(r).to_string(), sig, tuples));
    }
    Ok((Structure::from_encoded(sorts, rels), proj))
}

// ---------------------------------------------------------------------------
// Isomorphism search
// ---------------------------------------------------------------------------

/// Per-element invariant used to prune the isomorphism search: for every
/// (relation, position), the number of tuples holding the element there.
fn occurrence_profile(h: &Structure) -> Vec<Vec<Vec<u32>>> {
    let mut prof: Vec<Vec<Vec<u32>>> = (0..h.sort_count())
        .map(|s| vec![Vec::new(); h.sort_size(s)])
        .collect();
    for r in 0..h.rel_count() {
        let sig = h.rel_sig(r);
        for (s, counts) in prof.iter_mut().enumerate() {
            let slots: Vec<usize> = sig
                .iter()
                .enumerate()
                .filter(|(_, &ss)| ss == s)
                .map(|(p, _)| p)
                .collect();
            for c in counts.iter_mut() {
                c.extend(std::iter::repeat(0).take(slots.len()));
            }
            for t in h.rel_tuples(r) {
                for (k, &p) in slots.iter().enumerate() {
                    let base = counts[t[p] as usize].len() - slots.len() + k;
                    counts[t[p] as usize][base] += 1;
                }
            }
        }
    }
    prof
}

/// Backtracking search for sort-respecting bijections `g -> h` that preserve
/// every relation forward (with equal tuple counts this forces preservation
/// both ways). Candidates are tried in canonical element order; `visit`
/// receives each bijection found and returns `false` to stop the search.
pub fn search_isomorphisms(
    g: &Structure,
    h: &Structure,
    visit: &mut dyn FnMut(&SortMaps) -> bool,
) {
    if !g.same_signature(h) {
        return;
    }
    for s in 0..g.sort_count() {
        if g.sort_size(s) != h.sort_size(s) {
            return;
        }
    }
    for r in 0..g.rel_count() {
        if g.rel_tuples(r).len() != h.rel_tuples(r).len() {
            return;
        }
    }
    let gp = occurrence_profile(g);
    let hp = occurrence_profile(h);
    // Flattened assignment slots in canonical order.
    let slots: Vec<(usize, u32)> = (0..g.sort_count())
        .flat_map(|s| (0..g.sort_size(s) as u32).map(move |e| (s, e)))
        .collect();
    // Tuples indexed by participating (sort, elem) for incremental checks.
    let mut touching: BTreeMap<(usize, u32), Vec<(usize, usize)>> = BTreeMap::new();
    for r in 0..g.rel_count() {
        let sig = g.rel_sig(r);
        for (ti, t) in g.rel_tuples(r).iter().enumerate() {
            let mut seen = BTreeSet::new();
            for (pos, &e) in t.iter().enumerate() {
                if seen.insert((sig[pos], e)) {
                    touching.entry((sig[pos], e)).or_default().push((r, ti));
                }
            }
        }
    }
    let mut map: SortMaps = (0..g.sort_count())
        .map(|s| vec![u32::MAX; g.sort_size(s)])
        .collect();
    let mut used: Vec<Vec<bool>> = (0..h.sort_count())
        .map(|s| vec![false; h.sort_size(s)])
        .collect();

    fn fully_mapped(g: &Structure, map: &SortMaps, r: usize, t: &[u32]) -> Option<Vec<u32>> {
        let sig = g.rel_sig(r);
        let mut out = Vec::with_capacity(t.len());
        for (pos, &e) in t.iter().enumerate() {
            let v = map[sig[pos]][e as usize];
            if v == u32::MAX {
                return None;
            }
            out.push(v);
        }
        Some(out)
    }

    fn rec(
        g: &Structure,
        h: &Structure,
        slots: &[(usize, u32)],
        k: usize,
        gp: &[Vec<Vec<u32>>],
        hp: &[Vec<Vec<u32>>],
        touching: &BTreeMap<(usize, u32), Vec<(usize, usize)>>,
        map: &mut SortMaps,
        used: &mut Vec<Vec<bool>>,
        visit: &mut dyn FnMut(&SortMaps) -> bool,
        stop: &mut bool,
    ) {
        if *stop {
            return;
        }
        if k == slots.len() {
            if !visit(map) {
                *stop = true;
            }
            return;
        }
        let (s, e) = slots[k];
        for y in 0..g.sort_size(s) as u32 {
            if used[s][y as usize] || gp[s][e as usize] != hp[s][y as usize] {
                continue;
            }
            map[s][e as usize] = y;
            used[s][y as usize] = true;
            let ok = touching.get(&(s, e)).map_or(true, |ts| {
                ts.iter().all(|&(r, ti)| {
                    match fully_mapped(g, map, r, &g.rel_tuples(r)[ti]) {
                        Some(img) => h.rel_contains(r, &img),
                        None => true,
                    }
                })
            });
            if ok {
                rec(g, h, slots, k + 1, gp, hp, touching, map, used, visit, stop);
            }
            map[s][e as usize] = u32::MAX;
            used[s][y as usize] = false;
            if *stop {
                return;
            }
        }
    }

    let mut stop = false;
    rec(
        g, h, &slots, 0, &gp, &hp, &touching, &mut map, &mut used, visit, &mut stop,
    );
}

/// First isomorphism `g -> h` in canonical order, if any.
pub fn find_isomorphism(g: &Structure, h: &Structure) -> Option<SortMaps> {
    let mut found = None;
    search_isomorphisms(g, h, &mut |m| {
        found = Some(m.clone());
        false
    });
    found
}

// ---------------------------------------------------------------------------
// Anchored structures and gluing
// ---------------------------------------------------------------------------

/// A structure with a tuple of distinguished elements, each typed by sort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchored {
    pub structure: Structure,
    /// (sort, element) per anchor position.
    pub anchors: Vec<(usize, u32)>,
}

impl Anchored {
    pub fn new(structure: Structure, anchors: Vec<(usize, u32)>) -> SResult<Anchored> {
        for &(s, e) in &anchors {
            if s >= structure.sort_count() || e as usize >= structure.sort_size(s) {
                return Err(StructureError::Other(format!(
                    "anchor ({s},{e}) out of range"
                )));
            }
        }
        Ok(Anchored { structure, anchors })
    }

    /// Equality type: for each anchor position, the earliest position holding
    /// the same (sort, element). Two anchor tuples are compatible for gluing
    /// or nonzero injective counts iff these patterns and the positional
    /// sorts agree.
    pub fn equality_type(&self) -> Vec<usize> {
        self.anchors
            .iter()
            .enumerate()
            .map(|(i, a)| self.anchors.iter().position(|b| b == a).unwrap_or(i))
            .collect()
    }

    /// Positional anchor sorts.
    pub fn anchor_sorts(&self) -> Vec<usize> {
        self.anchors.iter().map(|&(s, _)| s).collect()
    }
}

/// Anchored direct product: `(A,x) x (B,y)` anchored at the pairs
/// `((x_i,y_i))`. Anchor tuples must agree positionally in sort.
pub fn direct_product_anchored(a: &Anchored, b: &Anchored) -> SResult<Anchored> {
    if a.anchor_sorts() != b.anchor_sorts() {
        return Err(StructureError::SignatureMismatch(
            "anchored product requires positionally equal anchor sorts".into(),
        ));
    }
    let prod = direct_product(&a.structure, &b.structure)?;
    let anchors = a
        .anchors
        .iter()
        .zip(&b.anchors)
        .map(|(&(s, ea), &(_, eb))| {
            let name = pair_name(a.structure.elem_name(s, ea), b.structure.elem_name(s, eb));
            (s, prod.elem_index(s, &name).expect("product element"))
        })
        .collect();
    Anchored::new(prod, anchors)
}

/// Glues two anchored structures by identifying their anchor tuples
/// pointwise. Requires equal equality types (and positional sorts); the
/// result is anchored at the merged tuple. Non-anchor elements are kept
/// disjoint and renamed `l.<name>` / `r.<name>`; merged anchors keep the
/// left name.
pub fn glue(a: &Anchored, b: &Anchored) -> SResult<Anchored> {
    if !a.structure.same_signature(&b.structure) {
        return Err(StructureError::SignatureMismatch(
            "glue requires identical signatures".into(),
        ));
    }
    if a.anchor_sorts() != b.anchor_sorts() || a.equality_type() != b.equality_type() {
        return Err(StructureError::Other(
            "glue requires equal equality types".into(),
        ));
    }
    let k = a.structure.sort_count();
    // Right anchor element -> left anchor element at the same position.
    let right_anchor: Vec<BTreeMap<u32, u32>> = {
        let mut maps: Vec<BTreeMap<u32, u32>> = vec![BTreeMap::new(); k];
        for (&(s, ea), &(_, eb)) in a.anchors.iter().zip(&b.anchors) {
            maps[s].insert(eb, ea);
        }
        maps
    };
    let name_left = |s: usize, e: u32| format!("l.{}", a.structure.elem_name(s, e));
    let name_right = |s: usize, e: u32| match right_anchor[s].get(&e) {
        Some(&ea) => name_left(s, ea),
        None => format!("r.{}", b.structure.elem_name(s, e)),
    };
    let mut sorts2 = Vec::new();
    for s in 0..k {
        let mut names = Vec::new();
        for e in 0..a.structure.sort_size(s) as u32 {
            names.push(name_left(s, e));
        }
        for e in 0..b.structure.sort_size(s) as u32 {
            if !right_anchor[s].contains_key(&e) {
                names.push(format!("r.{}", b.structure.elem_name(s, e)));
            }
        }
        sorts2.push((a.structure.sort_name(s).to_string(), names));
    }
    let mut rels2 = Vec::new();
    for r in 0..a.structure.rel_count() {
        let signames: Vec<String> = a
            .structure
            .rel_sig(r)
            .iter()
            .map(|&s| a.structure.sort_name(s).to_string())
            .collect();
        let mut tuples: Vec<Vec<String>> = Vec::new();
        for t in a.structure.rel_tuples(r) {
            tuples.push(
                a.structure
                    .rel_sig(r)
                    .iter()
                    .zip(t)
                    .map(|(&s, &e)| name_left(s, e))
                    .collect(),
            );
        }
        for t in b.structure.rel_tuples(r) {
            tuples.push(
                a.structure
                    .rel_sig(r)
                    .iter()
                    .zip(t)
                    .map(|(&s, &e)| name_right(s, e))
                    .collect(),
            );
        }
        rels2.push((a.structure.rel_name(r).to_string(), signames, tuples));
    }
    let st = Structure::new(sorts2, rels2)?;
    let anchors = a
        .anchors
        .iter()
        .map(|&(s, e)| (s, st.elem_index(s, &name_left(s, e)).unwrap()))
        .collect();
    Anchored::new(st, anchors)
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

/// Relation reference inside a constraint: a template relation, or built-in
/// equality on one sort.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintRel {
    Sym(usize),
    Eq,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub scope: Vec<usize>,
    pub rel: ConstraintRel,
}

/// A CSP instance in the variables/constraints view, bound to a template
/// structure. Variables are kept sorted by name; the variable order is the
/// coordinate order wherever the solution set is viewed as a relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    vars: Vec<(String, usize)>,
    constraints: Vec<Constraint>,
}

/// A total assignment of elements to the variables of an instance, indexed
/// by variable position.
pub type Assignment = Vec<u32>;

impl Instance {
    /// Builds an instance over `h` from named variables and constraints.
    /// The relation name `"="` denotes equality (scope: two variables of one
    /// sort).
    pub fn new(
        h: &Structure,
        vars: Vec<(String, String)>,
        constraints: Vec<(Vec<String>, String)>,
    ) -> SResult<Instance> {
        let mut vlist: Vec<(String, usize)> = Vec::with_capacity(vars.len());
        for (name, sortname) in vars {
            let s = h
                .sort_index(&sortname)
                .ok_or_else(|| StructureError::UnknownSort(name.clone(), sortname.clone()))?;
            if vlist.iter().any(|(n, _)| *n == name) {
                return Err(StructureError::DuplicateVariable(name));
            }
            vlist.push((name, s));
        }
        vlist.sort();
        let vidx = |n: &str| vlist.iter().position(|(vn, _)| vn == n);
        let mut clist = Vec::with_capacity(constraints.len());
        for (scope_names, relname) in constraints {
            let mut scope = Vec::with_capacity(scope_names.len());
            for vn in &scope_names {
                scope.push(
                    vidx(vn).ok_or_else(|| StructureError::UnknownVariable(vn.clone()))?,
                );
            }
            let rel = if relname == "=" {
                if scope.len() != 2 || vlist[scope[0]].1 != vlist[scope[1]].1 {
                    return Err(StructureError::BadEquality(scope_names));
                }
                ConstraintRel::Eq
            } else {
                let r = h
                    .rel_index(&relname)
                    .ok_or_else(|| StructureError::UnknownRelation(relname.clone()))?;
                let sig = h.rel_sig(r);
                if sig.len() != scope.len()
                    || scope.iter().zip(sig).any(|(&v, &s)| vlist[v].1 != s)
                {
                    return Err(StructureError::ScopeMismatch(scope_names, relname));
                }
                ConstraintRel::Sym(r)
            };
            clist.push(Constraint { scope, rel });
        }
        Ok(Instance {
            vars: vlist,
            constraints: clist,
        })
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn var_name(&self, v: usize) -> &str {
        &self.vars[v].0
    }

    pub fn var_sort(&self, v: usize) -> usize {
        self.vars[v].1
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|(n, _)| n == name)
    }

    pub fn vars(&self) -> &[(String, usize)] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn has_equality(&self) -> bool {
        self.constraints.iter().any(|c| c.rel == ConstraintRel::Eq)
    }

    /// True iff `asg` (one element index per variable) satisfies every
    /// constraint over template `h`.
    pub fn satisfied_by(&self, h: &Structure, asg: &[u32]) -> bool {
        self.constraints.iter().all(|c| match c.rel {
            ConstraintRel::Eq => asg[c.scope[0]] == asg[c.scope[1]],
            ConstraintRel::Sym(r) => {
                let t: Vec<u32> = c.scope.iter().map(|&v| asg[v]).collect();
                h.rel_contains(r, &t)
            }
        })
    }

    /// Copy with extra constraints appended.
    pub fn with_constraints(&self, extra: Vec<Constraint>) -> Instance {
        let mut c = self.constraints.clone();
        c.extend(extra);
        Instance {
            vars: self.vars.clone(),
            constraints: c,
        }
    }
}

/// Homomorphism view of an instance: a structure whose elements are the
/// variables and whose relation tuples are the constraint scopes. Fails if
/// the instance contains equality constraints (eliminate them first).
pub fn instance_to_structure(p: &Instance, h: &Structure) -> SResult<Structure> {
    if p.has_equality() {
        return Err(StructureError::Other(
            "instance_to_structure: eliminate equality constraints first".into(),
        ));
    }
    let mut sorts: Vec<(String, Vec<String>)> = (0..h.sort_count())
        .map(|s| (h.sort_name(s).to_string(), Vec::new()))
        .collect();
    for (name, s) in p.vars() {
        sorts[*s].1.push(name.clone());
    }
    let tmp = Structure::new(sorts.clone(), Vec::new())?;
    let mut rels: Vec<(String, Vec<usize>, Vec<Vec<u32>>)> = (0..h.rel_count())
        .map(|r| (h.rel_name(r).to_string(), h.rel_sig(r).to_vec(), Vec::new()))
        .collect();
    for c in p.constraints() {
        if let ConstraintRel::Sym(r) = c.rel {
            let t: Vec<u32> = c
                .scope
                .iter()
                .map(|&v| tmp.elem_index(p.var_sort(v), p.var_name(v)).unwrap())
                .collect();
            rels[r].2.push(t);
        }
    }
    Ok(Structure::from_encoded(
        (0..tmp.sort_count())
            .map(|s| (tmp.sort_name(s).to_string(), tmp.elem_names(s).to_vec()))
            .collect(),
        rels,
    ))
}

/// Variables/constraints view of a structure `g` over the signature of `h`:
/// one variable `"<sort>.<element>"` per element, one constraint per tuple.
pub fn structure_to_instance(g: &Structure, h: &Structure) -> SResult<Instance> {
    if !g.same_signature(h) {
        return Err(StructureError::SignatureMismatch(
            "structure_to_instance requires the template signature".into(),
        ));
    }
    let vars: Vec<(String, String)> = (0..g.sort_count())
        .flat_map(|s| {
            g.elem_names(s).iter().map(move |e| {
                (
                    format!("{}.{}", g.sort_name(s), e),
                    g.sort_name(s).to_string(),
                )
            })
        })
        .collect();
    let constraints: Vec<(Vec<String>, String)> = (0..g.rel_count())
        .flat_map(|r| {
            let sig = g.rel_sig(r).to_vec();
            g.rel_tuples(r)
                .iter()
                .map(move |t| {
                    let scope: Vec<String> = sig
                        .iter()
                        .zip(t)
                        .map(|(&s, &e)| format!("{}.{}", g.sort_name(s), g.elem_name(s, e)))
                        .collect();
                    (scope, g.rel_name(r).to_string())
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Instance::new(h, vars, constraints)
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn canonical_order_is_stable() {
        let a = Structure::new(
            vec![("B".into(), vec!["y".into(), "x".into()]), ("A".into(), vec!["q".into()])],
            vec![("R".into(), vec!["B".into()], vec![vec!["y".into()], vec!["x".into()]])],
        )
        .unwrap();
        assert_eq!(a.sort_name(0), "A");
        assert_eq!(a.elem_names(1), &["x".to_string(), "y".to_string()]);
        assert_eq!(a.rel_tuples(0), &[vec![0], vec![1]]);
    }

    #[test]
    fn product_counts_multiply() {
        let g = digraph(2, &[(0, 1)]);
        let h = digraph(3, &[(0, 1), (1, 2), (2, 0)]);
        let p = direct_product(&g, &h).unwrap();
        assert_eq!(p.sort_size(0), 6);
        assert_eq!(p.rel_tuples(0).len(), 3);
        let pw = power(&h, 2).unwrap();
        assert_eq!(pw.sort_size(0), 9);
        assert_eq!(pw.rel_tuples(0).len(), 9);
    }

    #[test]
    fn iso_finds_cycle_rotation() {
        let g = digraph(3, &[(0, 1), (1, 2), (2, 0)]);
        let h = digraph(3, &[(1, 0), (0, 2), (2, 1)]);
        let iso = find_isomorphism(&g, &h).expect("cycles isomorphic");
        assert!(is_homomorphism(&iso, &g, &h));
        let bad = digraph(3, &[(0, 1), (1, 2), (0, 2)]);
        assert!(find_isomorphism(&g, &bad).is_none());
    }

    #[test]
    fn factor_collapses_blocks() {
        let g = digraph(4, &[(0, 1), (2, 3)]);
        let (q, proj) = factor_structure(&g, &vec![vec![vec![0, 2], vec![1, 3]]]).unwrap();
        assert_eq!(q.sort_size(0), 2);
        assert_eq!(q.rel_tuples(0).len(), 1);
        assert_eq!(proj[0][0], proj[0][2]);
    }

    #[test]
    fn instance_round_trip_preserves_shape() {
        let h = digraph(2, &[(0, 1), (1, 0)]);
        let p = Instance::new(
            &h,
            vec![("a".into(), "V".into()), ("b".into(), "V".into())],
            vec![(vec!["a".into(), "b".into()], "E".into())],
        )
        .unwrap();
        let g = instance_to_structure(&p, &h).unwrap();
        assert_eq!(g.sort_size(0), 2);
        assert_eq!(g.rel_tuples(0).len(), 1);
        let p2 = structure_to_instance(&g, &h).unwrap();
        assert_eq!(p2.var_count(), 2);
        assert_eq!(p2.constraints().len(), 1);
    }

    #[test]
    fn glue_identifies_anchors() {
        let g = digraph(2, &[(0, 1)]);
        let a = Anchored::new(g.clone(), vec![(0, 1)]).unwrap();
        let b = Anchored::new(g, vec![(0, 1)]).unwrap();
        let glued = glue(&a, &b).unwrap();
        // two edges sharing their target: 3 vertices, 2 edges
        assert_eq!(glued.structure.sort_size(0), 3);
        assert_eq!(glued.structure.rel_tuples(0).len(), 2);
    }
}
