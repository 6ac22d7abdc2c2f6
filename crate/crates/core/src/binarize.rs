//! Binary encoding of a template and its count-preserving instance
//! translations.
//!
//! The encoding turns every relation of the source into a domain of its own
//! (one element per tuple) and records how tuples overlap through a family
//! of binary *link* relations: the link for `(Qi, s, Qj, t)` relates a tuple
//! of `Qi` and a tuple of `Qj` exactly when the coordinate at position `s`
//! of the first equals the coordinate at position `t` of the second. Every
//! source sort is represented among the domains by a full unary membership
//! relation (added automatically when the source has none), so single
//! elements survive as the one-coordinate tuples of that relation.
//!
//! Instances translate in both directions without changing their solution
//! count. Forward, each constraint becomes one variable over the domain of
//! its relation, a membership constraint covers every source variable, and
//! links pin shared coordinates together. Backward, the coordinate
//! positions of the encoded variables are glued into equivalence classes by
//! the link constraints, each class becomes a variable, and each encoded
//! variable contributes one constraint over its source relation. Operations
//! and permutations transport across the encoding coordinate-wise, in both
//! directions; order, polymorphism validity, and the Mal'tsev identities
//! all carry over.

use std::collections::BTreeMap;

use crate::automorphism::Automorphism;
use crate::expansion::{eliminate_equality, Polymorphism};
use crate::structure::{Constraint, ConstraintRel, Instance, SortMaps, Structure};
use crate::{Error, Result};

/// Cap on the number of generated link relations.
const LINK_RELATION_LIMIT: usize = 10_000;

/// Identifies a link relation: tuples of relation `qi` whose coordinate `s`
/// equals coordinate `t` of a tuple of relation `qj`. Always `qi <= qj`;
/// for `qi == qj` all ordered position pairs are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LinkKey {
    pub qi: usize,
    pub s: usize,
    pub qj: usize,
    pub t: usize,
}

fn tuple_elem_name(h: &Structure, sig: &[usize], t: &[u32]) -> String {
    let names: Vec<&str> = sig.iter().zip(t).map(|(&s, &e)| h.elem_name(s, e)).collect();
    format!("({})", names.join(","))
}

fn link_name(h: &Structure, key: LinkKey) -> String {
    format!(
        "{}.{}-{}.{}",
        h.rel_name(key.qi),
        key.s,
        h.rel_name(key.qj),
        key.t
    )
}

/// All length-`n` tuples over `0..size` in odometer order.
fn all_tuples(size: usize, n: usize) -> Vec<Vec<u32>> {
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

/// A template together with its binary encoding and the bookkeeping needed
/// to move instances, operations, and permutations across it.
#[derive(Debug, Clone)]
pub struct Binarization {
    /// Source template, extended with membership relations where missing.
    source: Structure,
    /// The encoded template: one sort per source relation, link relations.
    binarized: Structure,
    /// Per encoded sort: the source relation it is the tuple set of.
    sort_rel: Vec<usize>,
    /// Per source sort: its full unary membership relation in `source`.
    membership: Vec<usize>,
    /// Per source sort: the encoded sort of its membership relation.
    membership_sort: Vec<usize>,
    /// Per encoded sort and element: the source tuple it stands for.
    elem_tuples: Vec<Vec<Vec<u32>>>,
    /// Per encoded sort: source tuple -> element index.
    encoders: Vec<BTreeMap<Vec<u32>, u32>>,
    /// Per encoded relation: which link it is.
    links: Vec<LinkKey>,
}

impl Binarization {
    /// Source template (with membership relations present).
    pub fn source(&self) -> &Structure {
        &self.source
    }

    /// The encoded template.
    pub fn binarized(&self) -> &Structure {
        &self.binarized
    }

    /// Source relation whose tuples form encoded sort `k`.
    pub fn sort_relation(&self, k: usize) -> usize {
        self.sort_rel[k]
    }

    /// Membership relation of source sort `s` (full unary).
    pub fn membership_relation(&self, s: usize) -> usize {
        self.membership[s]
    }

    /// Encoded sort holding the membership tuples of source sort `s`.
    pub fn membership_sort(&self, s: usize) -> usize {
        self.membership_sort[s]
    }

    /// Which link encoded relation `r` is.
    pub fn link(&self, r: usize) -> LinkKey {
        self.links[r]
    }

    /// Encoded relation for a link key, if the key is in range.
    pub fn link_relation(&self, key: LinkKey) -> Option<usize> {
        self.links.iter().position(|&k| k == key)
    }

    /// Source tuple behind element `e` of encoded sort `k`.
    pub fn decode(&self, k: usize, e: u32) -> &[u32] {
        &self.elem_tuples[k][e as usize]
    }

    /// Element of encoded sort `k` standing for `tuple`, if present.
    pub fn encode(&self, k: usize, tuple: &[u32]) -> Option<u32> {
        self.encoders[k].get(tuple).copied()
    }
}

/// Builds the binary encoding of `h`: sorts are the relations of `h` (every
/// source sort represented by a full unary membership relation, added as
/// `dom_<sort>` when missing), and the relations are the complete family of
/// coordinate links for `qi <= qj` — empty ones included, so the shape of
/// the encoding depends only on the signature.
pub fn binarize(h: &Structure) -> Result<Binarization> {
    let mut source = h.clone();
    for s in 0..source.sort_count() {
        let covered = (0..source.rel_count())
            .any(|r| source.rel_sig(r) == [s] && source.rel_tuples(r).len() == source.sort_size(s));
        if !covered {
            let full: Vec<Vec<u32>> = (0..source.sort_size(s) as u32).map(|e| vec![e]).collect();
            let name = format!("dom_{}", source.sort_name(s));
            source = source.with_relation(&name, vec![s], full)?;
        }
    }
    let membership: Vec<usize> = (0..source.sort_count())
        .map(|s| {
            (0..source.rel_count())
                .find(|&r| {
                    source.rel_sig(r) == [s] && source.rel_tuples(r).len() == source.sort_size(s)
                })
                .expect("membership relation present by construction")
        })
        .collect();

    let n = source.rel_count();
    let mut link_keys: Vec<LinkKey> = Vec::new();
    for qi in 0..n {
        for qj in qi..n {
            for s in 0..source.rel_sig(qi).len() {
                for t in 0..source.rel_sig(qj).len() {
                    link_keys.push(LinkKey { qi, s, qj, t });
                }
            }
        }
    }
    if link_keys.len() > LINK_RELATION_LIMIT {
        return Err(Error::Guard(format!(
            "binary encoding needs {} link relations (limit {LINK_RELATION_LIMIT})",
            link_keys.len()
        )));
    }

    let mut sorts_spec: Vec<(String, Vec<String>)> = Vec::new();
    for r in 0..n {
        let names = source
            .rel_tuples(r)
            .iter()
            .map(|t| tuple_elem_name(&source, source.rel_sig(r), t))
            .collect();
        sorts_spec.push((source.rel_name(r).to_string(), names));
    }
    let mut rels_spec: Vec<(String, Vec<String>, Vec<Vec<String>>)> = Vec::new();
    for &key in &link_keys {
        let (sig_i, sig_j) = (source.rel_sig(key.qi), source.rel_sig(key.qj));
        let mut tuples: Vec<Vec<String>> = Vec::new();
        if sig_i[key.s] == sig_j[key.t] {
            for a in source.rel_tuples(key.qi) {
                for b in source.rel_tuples(key.qj) {
                    if a[key.s] == b[key.t] {
                        tuples.push(vec![
                            tuple_elem_name(&source, sig_i, a),
                            tuple_elem_name(&source, sig_j, b),
                        ]);
                    }
                }
            }
        }
        rels_spec.push((
            link_name(&source, key),
            vec![
                source.rel_name(key.qi).to_string(),
                source.rel_name(key.qj).to_string(),
            ],
            tuples,
        ));
    }
    let binarized = Structure::new(sorts_spec, rels_spec)?;

    // The constructor re-sorts sorts and relations by name; realign the
    // bookkeeping to the canonical order.
    let sort_rel: Vec<usize> = (0..binarized.sort_count())
        .map(|k| {
            source
                .rel_index(binarized.sort_name(k))
                .expect("encoded sort named after a source relation")
        })
        .collect();
    let membership_sort: Vec<usize> = membership
        .iter()
        .map(|&m| {
            sort_rel
                .iter()
                .position(|&r| r == m)
                .expect("membership relation has an encoded sort")
        })
        .collect();
    let mut elem_tuples: Vec<Vec<Vec<u32>>> = Vec::with_capacity(binarized.sort_count());
    let mut encoders: Vec<BTreeMap<Vec<u32>, u32>> = Vec::with_capacity(binarized.sort_count());
    for k in 0..binarized.sort_count() {
        let r = sort_rel[k];
        let sig = source.rel_sig(r);
        let mut by_elem = vec![Vec::new(); binarized.sort_size(k)];
        let mut enc = BTreeMap::new();
        for t in source.rel_tuples(r) {
            let e = binarized
                .elem_index(k, &tuple_elem_name(&source, sig, t))
                .expect("every tuple is an element of its encoded sort");
            by_elem[e as usize] = t.clone();
            enc.insert(t.clone(), e);
        }
        elem_tuples.push(by_elem);
        encoders.push(enc);
    }
    let mut links = vec![None; binarized.rel_count()];
    for &key in &link_keys {
        let r = binarized
            .rel_index(&link_name(&source, key))
            .expect("every link key has an encoded relation");
        links[r] = Some(key);
    }
    let links = links
        .into_iter()
        .map(|k| k.expect("every encoded relation is a link"))
        .collect();

    Ok(Binarization {
        source,
        binarized,
        sort_rel,
        membership,
        membership_sort,
        elem_tuples,
        encoders,
        links,
    })
}

/// Result of the forward instance translation.
#[derive(Debug, Clone)]
pub struct BinarizedInstance {
    /// The source instance actually translated: equalities merged away and
    /// a membership constraint covering every variable. Its count equals
    /// the original count exactly.
    pub normalized: Instance,
    /// The translated instance over the encoded template.
    pub instance: Instance,
    /// Encoded variable name for each constraint of `normalized`, in order.
    pub constraint_vars: Vec<String>,
}

/// Translates `inst` (over `h`, which must share names with the
/// binarization source) into an instance over the encoded template with
/// exactly the same solution count: equalities are merged away, every
/// variable gets a membership constraint if it lacks one, each constraint
/// becomes one encoded variable, and every shared coordinate becomes a link
/// constraint.
pub fn binarize_instance(
    inst: &Instance,
    h: &Structure,
    bz: &Binarization,
) -> Result<BinarizedInstance> {
    let source = &bz.source;
    let vars: Vec<(String, String)> = inst
        .vars()
        .iter()
        .map(|(name, s)| (name.clone(), h.sort_name(*s).to_string()))
        .collect();
    let constraints: Vec<(Vec<String>, String)> = inst
        .constraints()
        .iter()
        .map(|c| {
            let scope = c.scope.iter().map(|&v| inst.var_name(v).to_string()).collect();
            let rel = match c.rel {
                ConstraintRel::Eq => "=".to_string(),
                ConstraintRel::Sym(r) => h.rel_name(r).to_string(),
            };
            (scope, rel)
        })
        .collect();
    let re = Instance::new(source, vars, constraints)?;
    let flat = eliminate_equality(&re, source)?;

    let mut extra: Vec<Constraint> = Vec::new();
    for v in 0..flat.var_count() {
        let m = bz.membership[flat.var_sort(v)];
        let covered = flat
            .constraints()
            .iter()
            .any(|c| c.rel == ConstraintRel::Sym(m) && c.scope == [v]);
        if !covered {
            extra.push(Constraint {
                scope: vec![v],
                rel: ConstraintRel::Sym(m),
            });
        }
    }
    let normalized = flat.with_constraints(extra);

    let rel_of = |c: &Constraint| match c.rel {
        ConstraintRel::Sym(r) => r,
        ConstraintRel::Eq => unreachable!("equalities were eliminated"),
    };
    let cons = normalized.constraints();
    let bvars: Vec<(String, String)> = cons
        .iter()
        .enumerate()
        .map(|(idx, c)| (format!("k{idx:03}"), source.rel_name(rel_of(c)).to_string()))
        .collect();
    let mut bcons: Vec<(Vec<String>, String)> = Vec::new();
    for c1 in 0..cons.len() {
        for c2 in c1..cons.len() {
            let (r1, r2) = (rel_of(&cons[c1]), rel_of(&cons[c2]));
            for s in 0..cons[c1].scope.len() {
                for t in 0..cons[c2].scope.len() {
                    if c1 == c2 && t <= s {
                        continue;
                    }
                    if cons[c1].scope[s] != cons[c2].scope[t] {
                        continue;
                    }
                    let (key, names) = if r1 <= r2 {
                        (
                            LinkKey { qi: r1, s, qj: r2, t },
                            vec![bvars[c1].0.clone(), bvars[c2].0.clone()],
                        )
                    } else {
                        (
                            LinkKey { qi: r2, s: t, qj: r1, t: s },
                            vec![bvars[c2].0.clone(), bvars[c1].0.clone()],
                        )
                    };
                    bcons.push((names, link_name(source, key)));
                }
            }
        }
    }
    bcons.sort();
    bcons.dedup();
    let instance = Instance::new(&bz.binarized, bvars.clone(), bcons)?;
    Ok(BinarizedInstance {
        normalized,
        instance,
        constraint_vars: bvars.into_iter().map(|(n, _)| n).collect(),
    })
}

/// Result of the backward instance translation.
#[derive(Debug, Clone)]
pub struct Debinarization {
    /// The translated instance over the binarization source.
    pub instance: Instance,
    /// Class variable for every (encoded variable, coordinate) pair.
    pub classes: BTreeMap<(String, usize), String>,
}

/// Translates an instance over the encoded template back to the source with
/// exactly the same solution count: link constraints glue (variable,
/// coordinate) pairs into classes, each class becomes a source variable
/// named after its least member, and each encoded variable contributes one
/// constraint over its source relation. Fails if a link glues positions of
/// different source sorts (only possible through an empty link relation,
/// which makes the instance trivially unsatisfiable).
pub fn debinarize_instance(binst: &Instance, bz: &Binarization) -> Result<Debinarization> {
    let source = &bz.source;
    let nvars = binst.var_count();
    let rel_of_var: Vec<usize> = (0..nvars).map(|v| bz.sort_rel[binst.var_sort(v)]).collect();
    let arity: Vec<usize> = rel_of_var.iter().map(|&r| source.rel_sig(r).len()).collect();
    let mut offset = vec![0usize; nvars + 1];
    for v in 0..nvars {
        offset[v + 1] = offset[v] + arity[v];
    }
    let total = offset[nvars];

    let mut parent: Vec<usize> = (0..total).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let r = find(parent, parent[x]);
            parent[x] = r;
        }
        parent[x]
    }
    let unite = |parent: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(parent, a), find(parent, b));
        // Keep the least flat id as root so the class is named after its
        // lexicographically least member (variables are name-sorted).
        let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[drop] = keep;
    };
    for c in binst.constraints() {
        match c.rel {
            ConstraintRel::Eq => {
                for k in 0..arity[c.scope[0]] {
                    unite(&mut parent, offset[c.scope[0]] + k, offset[c.scope[1]] + k);
                }
            }
            ConstraintRel::Sym(r) => {
                let key = bz.links[r];
                unite(
                    &mut parent,
                    offset[c.scope[0]] + key.s,
                    offset[c.scope[1]] + key.t,
                );
            }
        }
    }

    let class_name = |v: usize, pos: usize| format!("{}.{pos}", binst.var_name(v));
    let var_pos = |flat: usize| {
        let v = offset.partition_point(|&o| o <= flat) - 1;
        (v, flat - offset[v])
    };
    let mut rep_name = vec![String::new(); total];
    let mut rep_sort: Vec<Option<usize>> = vec![None; total];
    let mut vars: Vec<(String, String)> = Vec::new();
    let mut classes = BTreeMap::new();
    for flat in 0..total {
        let (v, pos) = var_pos(flat);
        let root = find(&mut parent, flat);
        let sort = source.rel_sig(rel_of_var[v])[pos];
        match rep_sort[root] {
            None => {
                // First member reached is the least one: flat ids ascend.
                rep_sort[root] = Some(sort);
                rep_name[root] = class_name(v, pos);
                vars.push((rep_name[root].clone(), source.sort_name(sort).to_string()));
            }
            Some(s) if s != sort => {
                return Err(Error::Precondition(format!(
                    "a link glues {} (sort {}) to {} (sort {}); the instance has no solutions \
                     and no translation",
                    class_name(v, pos),
                    source.sort_name(sort),
                    rep_name[root],
                    source.sort_name(s),
                )));
            }
            Some(_) => {}
        }
        classes.insert((binst.var_name(v).to_string(), pos), rep_name[root].clone());
    }

    let constraints: Vec<(Vec<String>, String)> = (0..nvars)
        .map(|v| {
            let scope = (0..arity[v])
                .map(|pos| rep_name[find(&mut parent, offset[v] + pos)].clone())
                .collect();
            (scope, source.rel_name(rel_of_var[v]).to_string())
        })
        .collect();
    let instance = Instance::new(source, vars, constraints)?;
    Ok(Debinarization { instance, classes })
}

/// Transports an operation family on the source to the encoded template by
/// acting on tuples coordinate-wise. Fails if the operation maps some rows
/// of a relation outside it (i.e. it is not a polymorphism of the source).
pub fn operation_to_b(f: &Polymorphism, bz: &Binarization) -> Result<Polymorphism> {
    let source = &bz.source;
    let b = &bz.binarized;
    if f.tables.len() != source.sort_count() {
        return Err(Error::Precondition(
            "operation tables do not match the source sorts".into(),
        ));
    }
    let mut tables = Vec::with_capacity(b.sort_count());
    for k in 0..b.sort_count() {
        let sig = source.rel_sig(bz.sort_rel[k]);
        let mut table = BTreeMap::new();
        for args in all_tuples(b.sort_size(k), f.n) {
            let image: Vec<u32> = (0..sig.len())
                .map(|pos| {
                    let col: Vec<u32> = args
                        .iter()
                        .map(|&e| bz.elem_tuples[k][e as usize][pos])
                        .collect();
                    f.apply(sig[pos], &col)
                })
                .collect();
            let enc = bz.encode(k, &image).ok_or_else(|| {
                Error::Precondition(format!(
                    "the operation maps rows of {} outside the relation, so it has no encoded \
                     form",
                    source.rel_name(bz.sort_rel[k])
                ))
            })?;
            table.insert(args, enc);
        }
        tables.push(table);
    }
    Ok(Polymorphism { n: f.n, tables })
}

/// Recovers a source operation family from one on the encoded template by
/// reading it off the membership sorts, whose elements are single source
/// elements.
pub fn operation_from_b(g: &Polymorphism, bz: &Binarization) -> Result<Polymorphism> {
    let source = &bz.source;
    if g.tables.len() != bz.binarized.sort_count() {
        return Err(Error::Precondition(
            "operation tables do not match the encoded sorts".into(),
        ));
    }
    let mut tables = Vec::with_capacity(source.sort_count());
    for s in 0..source.sort_count() {
        let k = bz.membership_sort[s];
        let mut table = BTreeMap::new();
        for args in all_tuples(source.sort_size(s), g.n) {
            let enc_args: Vec<u32> = args
                .iter()
                .map(|&x| bz.encode(k, &[x]).expect("membership relation is full"))
                .collect();
            let out = g.apply(k, &enc_args);
            table.insert(args, bz.elem_tuples[k][out as usize][0]);
        }
        tables.push(table);
    }
    Ok(Polymorphism { n: g.n, tables })
}

/// Transports a permutation family on the source to the encoded template by
/// acting on tuples coordinate-wise. Fails if some relation is not
/// preserved (i.e. the input is not an automorphism of the source). The
/// group order is preserved.
pub fn automorphism_to_b(pi: &Automorphism, bz: &Binarization) -> Result<Automorphism> {
    let source = &bz.source;
    let b = &bz.binarized;
    if pi.maps.len() != source.sort_count()
        || (0..source.sort_count()).any(|s| pi.maps[s].len() != source.sort_size(s))
    {
        return Err(Error::Precondition(
            "permutation family does not match the source sorts".into(),
        ));
    }
    let mut maps: SortMaps = Vec::with_capacity(b.sort_count());
    for k in 0..b.sort_count() {
        let sig = source.rel_sig(bz.sort_rel[k]);
        let mut perm = Vec::with_capacity(b.sort_size(k));
        for e in 0..b.sort_size(k) as u32 {
            let image: Vec<u32> = sig
                .iter()
                .zip(bz.decode(k, e))
                .map(|(&s, &x)| pi.maps[s][x as usize])
                .collect();
            perm.push(bz.encode(k, &image).ok_or_else(|| {
                Error::Precondition(format!(
                    "the permutation maps a tuple outside {}, so it is not an automorphism of \
                     the source",
                    source.rel_name(bz.sort_rel[k])
                ))
            })?);
        }
        maps.push(perm);
    }
    Ok(Automorphism::from_maps(maps))
}

/// Recovers a source permutation family from one on the encoded template by
/// reading it off the membership sorts.
pub fn automorphism_from_b(pb: &Automorphism, bz: &Binarization) -> Result<Automorphism> {
    let source = &bz.source;
    let b = &bz.binarized;
    if pb.maps.len() != b.sort_count()
        || (0..b.sort_count()).any(|k| pb.maps[k].len() != b.sort_size(k))
    {
        return Err(Error::Precondition(
            "permutation family does not match the encoded sorts".into(),
        ));
    }
    let mut maps: SortMaps = Vec::with_capacity(source.sort_count());
    for s in 0..source.sort_count() {
        let k = bz.membership_sort[s];
        let mut perm = Vec::with_capacity(source.sort_size(s));
        for x in 0..source.sort_size(s) as u32 {
            let e = bz.encode(k, &[x]).expect("membership relation is full");
            perm.push(bz.decode(k, pb.maps[k][e as usize])[0]);
        }
        maps.push(perm);
    }
    Ok(Automorphism::from_maps(maps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automorphism::{enumerate_automorphisms, is_p_rigid};
    use crate::expansion::{find_maltsev, is_polymorphism, satisfies_maltsev_identities};
    use crate::fixtures;
    use crate::oracle;
    use crate::properties::{is_rectangular, RectVerdict};
    use crate::structure::is_homomorphism;
    use crate::Guards;

    fn link_tuples<'a>(bz: &'a Binarization, key: LinkKey) -> &'a [Vec<u32>] {
        let r = bz.link_relation(key).expect("link present");
        bz.binarized().rel_tuples(r)
    }

    fn rel_key(bz: &Binarization, qi: &str, s: usize, qj: &str, t: usize) -> LinkKey {
        let src = bz.source();
        LinkKey {
            qi: src.rel_index(qi).expect("relation"),
            s,
            qj: src.rel_index(qj).expect("relation"),
            t,
        }
    }

    #[test]
    fn reuses_or_adds_membership_relations() {
        // A full unary relation doubles as the membership relation, and its
        // only link is equality on the sort.
        let h = Structure::new(
            vec![("H".into(), vec!["0".into(), "1".into(), "2".into()])],
            vec![(
                "U".into(),
                vec!["H".into()],
                vec![vec!["0".into()], vec!["1".into()], vec!["2".into()]],
            )],
        )
        .unwrap();
        let bz = binarize(&h).unwrap();
        assert_eq!(bz.source().rel_count(), 1, "no relation added");
        assert_eq!(bz.binarized().sort_count(), 1);
        assert_eq!(bz.binarized().rel_count(), 1);
        assert_eq!(
            link_tuples(&bz, rel_key(&bz, "U", 0, "U", 0)),
            &[vec![0, 0], vec![1, 1], vec![2, 2]]
        );

        // A bare template gets a fresh full membership relation.
        let bare = fixtures::five_elem_skew();
        let bz = binarize(&bare).unwrap();
        let dom = bz.source().rel_index("dom_H").expect("added relation");
        assert_eq!(bz.membership_relation(0), dom);
        assert_eq!(bz.source().rel_tuples(dom).len(), 5);
    }

    #[test]
    fn binarized_shape_matches_the_source() {
        let h = fixtures::five_elem_skew_with_constants();
        let bz = binarize(&h).unwrap();
        let b = bz.binarized();
        // One sort per relation: R (5 tuples), five constants, membership.
        assert_eq!(b.sort_count(), 7);
        assert_eq!(b.sort_size(b.sort_index("R").unwrap()), 5);
        assert_eq!(b.sort_size(b.sort_index("dom_H").unwrap()), 5);
        for c in 0..5 {
            assert_eq!(b.sort_size(b.sort_index(&format!("c{c}")).unwrap()), 1);
        }
        // Complete link family over 7 relations: 9 within R, 3 from R to
        // each unary relation (6 of them), and one per unordered pair of
        // unary relations (21).
        assert_eq!(b.rel_count(), 9 + 3 * 6 + 21);
        // One membership partner per tuple's first coordinate.
        assert_eq!(link_tuples(&bz, rel_key(&bz, "R", 0, "dom_H", 0)).len(), 5);
        // Same-relation same-position links contain the diagonal.
        for r in 0..b.rel_count() {
            let key = bz.link(r);
            if key.qi == key.qj && key.s == key.t {
                for e in 0..b.sort_size(b.rel_sig(r)[0]) as u32 {
                    assert!(b.rel_contains(r, &[e, e]), "diagonal at {}", b.rel_name(r));
                }
            }
        }
        // Links between distinct constants are legally empty.
        assert!(link_tuples(&bz, rel_key(&bz, "c0", 0, "c1", 0)).is_empty());
    }

    #[test]
    fn every_link_relation_is_rectangular() {
        for h in [
            fixtures::five_elem_skew_with_constants(),
            fixtures::six_point_interchangeable(),
        ] {
            let bz = binarize(&h).unwrap();
            let b = bz.binarized();
            for r in 0..b.rel_count() {
                assert!(
                    matches!(
                        is_rectangular(b.rel_tuples(r), 2, &[0]).unwrap(),
                        RectVerdict::Ok
                    ),
                    "link {} is not rectangular",
                    b.rel_name(r)
                );
            }
        }
    }

    #[test]
    fn instance_translation_preserves_counts_exactly() {
        let h = fixtures::five_elem_skew_with_constants();
        let bz = binarize(&h).unwrap();
        let hv = |n: &str| (n.to_string(), "H".to_string());
        let cases: Vec<(Instance, Option<u64>)> = vec![
            // Pinned first coordinate: two rows start with 0.
            (
                Instance::new(
                    &h,
                    vec![hv("x"), hv("y"), hv("z")],
                    vec![
                        (vec!["x".into(), "y".into(), "z".into()], "R".into()),
                        (vec!["x".into()], "c0".into()),
                    ],
                )
                .unwrap(),
                Some(2),
            ),
            // Repeated variable: rows with equal first coordinates.
            (
                Instance::new(
                    &h,
                    vec![hv("x"), hv("y")],
                    vec![(vec!["x".into(), "x".into(), "y".into()], "R".into())],
                )
                .unwrap(),
                Some(2),
            ),
            // Two constraints sharing two variables crosswise.
            (
                Instance::new(
                    &h,
                    vec![hv("x"), hv("y"), hv("z"), hv("w")],
                    vec![
                        (vec!["x".into(), "y".into(), "z".into()], "R".into()),
                        (vec!["y".into(), "x".into(), "w".into()], "R".into()),
                    ],
                )
                .unwrap(),
                None,
            ),
            // A variable with no constraint at all stays a free factor.
            (
                Instance::new(&h, vec![hv("x"), hv("y")], vec![(vec!["x".into()], "c0".into())])
                    .unwrap(),
                Some(5),
            ),
            // Equalities are merged away before encoding.
            (
                Instance::new(
                    &h,
                    vec![hv("x"), hv("y"), hv("z")],
                    vec![
                        (vec!["x".into(), "y".into()], "=".into()),
                        (vec!["x".into(), "y".into(), "z".into()], "R".into()),
                    ],
                )
                .unwrap(),
                Some(2),
            ),
        ];
        for (inst, expect) in cases {
            let original = oracle::count_solutions(&inst, &h).exact;
            let bi = binarize_instance(&inst, &h, &bz).unwrap();
            let normalized = oracle::count_solutions(&bi.normalized, bz.source()).exact;
            let encoded = oracle::count_solutions(&bi.instance, bz.binarized()).exact;
            assert_eq!(original, normalized, "normalization changed the count");
            assert_eq!(original, encoded, "encoding changed the count");
            if let Some(e) = expect {
                assert_eq!(original, e.into());
            }
        }
    }

    #[test]
    fn debinarization_inverts_the_translation() {
        let h = fixtures::five_elem_skew_with_constants();
        let bz = binarize(&h).unwrap();
        // Round-trip the translated instances.
        let inst = Instance::new(
            &h,
            vec![
                ("x".to_string(), "H".to_string()),
                ("y".to_string(), "H".to_string()),
                ("z".to_string(), "H".to_string()),
            ],
            vec![
                (vec!["x".into(), "y".into(), "z".into()], "R".into()),
                (vec!["x".into()], "c0".into()),
            ],
        )
        .unwrap();
        let bi = binarize_instance(&inst, &h, &bz).unwrap();
        let db = debinarize_instance(&bi.instance, &bz).unwrap();
        assert_eq!(
            oracle::count_solutions(&db.instance, bz.source()).exact,
            oracle::count_solutions(&inst, &h).exact
        );

        // No links: independent variables multiply out.
        let free = Instance::new(
            bz.binarized(),
            vec![
                ("u".to_string(), "R".to_string()),
                ("v".to_string(), "dom_H".to_string()),
            ],
            vec![],
        )
        .unwrap();
        assert_eq!(oracle::count_solutions(&free, bz.binarized()).exact, 25u32.into());
        let db = debinarize_instance(&free, &bz).unwrap();
        assert_eq!(oracle::count_solutions(&db.instance, bz.source()).exact, 25u32.into());
        assert_eq!(db.classes[&("u".to_string(), 0)], "u.0");
        assert_eq!(db.classes[&("v".to_string(), 0)], "v.0");

        // A single encoded variable counts its relation's tuples.
        let single = Instance::new(
            bz.binarized(),
            vec![("u".to_string(), "R".to_string())],
            vec![],
        )
        .unwrap();
        let db = debinarize_instance(&single, &bz).unwrap();
        assert_eq!(oracle::count_solutions(&db.instance, bz.source()).exact, 5u32.into());

        // Equality between encoded variables glues all coordinates.
        let eq = Instance::new(
            bz.binarized(),
            vec![
                ("u".to_string(), "R".to_string()),
                ("v".to_string(), "R".to_string()),
            ],
            vec![(vec!["u".into(), "v".into()], "=".into())],
        )
        .unwrap();
        let db = debinarize_instance(&eq, &bz).unwrap();
        assert_eq!(oracle::count_solutions(&db.instance, bz.source()).exact, 5u32.into());

        // A link between positions of different sorts has no translation.
        let two = Structure::new(
            vec![
                ("A".into(), vec!["a0".into(), "a1".into()]),
                ("B".into(), vec!["b0".into(), "b1".into()]),
            ],
            vec![
                ("P".into(), vec!["A".into()], vec![vec!["a0".into()], vec!["a1".into()]]),
                ("Q".into(), vec!["B".into()], vec![vec!["b0".into()], vec!["b1".into()]]),
            ],
        )
        .unwrap();
        let bz2 = binarize(&two).unwrap();
        let crossed = Instance::new(
            bz2.binarized(),
            vec![
                ("u".to_string(), "P".to_string()),
                ("v".to_string(), "Q".to_string()),
            ],
            vec![(vec!["u".into(), "v".into()], "P.0-Q.0".into())],
        )
        .unwrap();
        assert_eq!(oracle::count_solutions(&crossed, bz2.binarized()).exact, 0u32.into());
        assert!(matches!(
            debinarize_instance(&crossed, &bz2),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn operation_transport_round_trips() {
        let h = fixtures::five_elem_skew_with_constants();
        let bz = binarize(&h).unwrap();
        let f = find_maltsev(&h, &Guards::default())
            .unwrap()
            .expect("the skew template has a Mal'tsev polymorphism");
        // The source operation extends to the membership relation, so it
        // transports as-is.
        let fb = operation_to_b(&f, &bz).unwrap();
        assert!(is_polymorphism(bz.binarized(), &fb));
        assert!(satisfies_maltsev_identities(bz.binarized(), &fb));
        assert_eq!(operation_from_b(&fb, &bz).unwrap(), f);

        // A projection transports to a valid operation that is not Mal'tsev.
        let proj = Polymorphism::projection(bz.source(), 3, 0);
        let pb = operation_to_b(&proj, &bz).unwrap();
        assert!(is_polymorphism(bz.binarized(), &pb));
        assert!(!satisfies_maltsev_identities(bz.binarized(), &pb));
    }

    #[test]
    fn permutation_transport_round_trips() {
        // The bare skew template has one non-trivial automorphism (order 2).
        let bare = fixtures::five_elem_skew();
        let bz = binarize(&bare).unwrap();
        let pi = enumerate_automorphisms(bz.source())
            .into_iter()
            .find(|a| !a.is_identity())
            .expect("swap automorphism");
        assert_eq!(pi.order, 2);
        let pb = automorphism_to_b(&pi, &bz).unwrap();
        assert_eq!(pb.order, 2);
        assert!(is_homomorphism(&pb.maps, bz.binarized(), bz.binarized()));
        for (k, perm) in pb.maps.iter().enumerate() {
            let mut seen: Vec<u32> = perm.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..bz.binarized().sort_size(k) as u32).collect::<Vec<_>>());
        }
        assert_eq!(automorphism_from_b(&pb, &bz).unwrap().maps, pi.maps);

        // Same story on the six-point template with its constants removed.
        let six = fixtures::six_point_interchangeable()
            .without_relations(&["c0", "c1", "c2", "c3", "c4", "c5"]);
        let bz = binarize(&six).unwrap();
        let pi = enumerate_automorphisms(bz.source())
            .into_iter()
            .find(|a| a.order == 2)
            .expect("block swap");
        let pb = automorphism_to_b(&pi, &bz).unwrap();
        assert_eq!(pb.order, 2);
        assert!(is_homomorphism(&pb.maps, bz.binarized(), bz.binarized()));
        assert_eq!(automorphism_from_b(&pb, &bz).unwrap().maps, pi.maps);

        // Rigidity carries across the encoding: the constants pin the
        // membership sort, whose links pin every tuple sort.
        let rigid = fixtures::five_elem_skew_with_constants();
        let bzr = binarize(&rigid).unwrap();
        assert!(is_p_rigid(&rigid, 2).unwrap());
        assert!(is_p_rigid(bzr.binarized(), 2).unwrap());
    }

    #[test]
    fn nonrect_translation_produces_a_source_witness() {
        let h = fixtures::five_elem_skew_with_constants();
        let bz = binarize(&h).unwrap();
        // Encoded instance: one variable over the relation sort, two over
        // the membership sort reading off its first two coordinates.
        let binst = Instance::new(
            bz.binarized(),
            vec![
                ("vR".to_string(), "R".to_string()),
                ("x".to_string(), "dom_H".to_string()),
                ("y".to_string(), "dom_H".to_string()),
            ],
            vec![
                (vec!["vR".into(), "x".into()], "R.0-dom_H.0".into()),
                (vec!["vR".into(), "y".into()], "R.1-dom_H.0".into()),
            ],
        )
        .unwrap();
        // Mod-2 projection to (x, y) over the encoding: the doubled row
        // (1,0,·) cancels and the triangle remains.
        let sols = oracle::solutions(&binst, bz.binarized());
        let (px, py) = (
            binst.var_index("x").unwrap(),
            binst.var_index("y").unwrap(),
        );
        let enc_proj = oracle::proj_mod(&sols, &[px, py], 2).unwrap();
        let k = bz.membership_sort(0);
        let decoded: Vec<Vec<u32>> = enc_proj
            .iter()
            .map(|t| vec![bz.decode(k, t[0])[0], bz.decode(k, t[1])[0]])
            .collect();
        let triangle = vec![vec![0, 0], vec![0, 1], vec![1, 1]];
        assert_eq!(decoded, triangle);
        assert!(matches!(
            is_rectangular(&decoded, 2, &[0]).unwrap(),
            RectVerdict::Witness { .. }
        ));

        // Translate back: the link classes identify the first two
        // coordinates of the relation variable with x and y.
        let db = debinarize_instance(&binst, &bz).unwrap();
        assert_eq!(db.classes[&("x".to_string(), 0)], "vR.0");
        assert_eq!(db.classes[&("y".to_string(), 0)], "vR.1");
        let sols = oracle::solutions(&db.instance, bz.source());
        let (p0, p1) = (
            db.instance.var_index("vR.0").unwrap(),
            db.instance.var_index("vR.1").unwrap(),
        );
        let src_proj = oracle::proj_mod(&sols, &[p0, p1], 2).unwrap();
        assert_eq!(src_proj, triangle);
        assert!(matches!(
            is_rectangular(&src_proj, 2, &[0]).unwrap(),
            RectVerdict::Witness { .. }
        ));
    }
}
