//! Seeded random generators and exhaustive enumerators for templates and
//! instances.
//!
//! Every generator is deterministic in its inputs: the random ones draw
//! from a caller-supplied ChaCha stream (see [`seeded_rng`]), the
//! exhaustive one enumerates in a fixed order. Random structures are built
//! by sampling a signature, then sampling each relation tuple-by-tuple;
//! pairs share a signature so homomorphism counts between them are defined.
//! Non-rigid structures are made symmetric by construction — relations are
//! closed under a cycle on the first sort — rather than by rejection, so
//! generation never retries.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::structure::{Instance, Structure};
use crate::{Error, Result};

/// Fixed-algorithm seeded stream used by all random generators.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Bounds for random template generation.
#[derive(Debug, Clone)]
pub struct StructureConfig {
    /// Most sorts a template may have (at least 1 is always generated).
    pub max_sorts: usize,
    /// Cap on the total element count across all sorts.
    pub max_universe: usize,
    /// Most relations a template may have (at least 1).
    pub max_rels: usize,
    /// Largest relation arity (at least 1).
    pub max_arity: usize,
    /// Probability that any candidate tuple is included in a relation.
    pub density: f64,
}

impl Default for StructureConfig {
    fn default() -> StructureConfig {
        StructureConfig {
            max_sorts: 2,
            max_universe: 5,
            max_rels: 2,
            max_arity: 3,
            density: 0.4,
        }
    }
}

/// A sampled signature: per-relation sort indices, over `n_sorts` sorts.
#[derive(Debug, Clone)]
struct Signature {
    n_sorts: usize,
    rel_sigs: Vec<Vec<usize>>,
}

fn random_signature(rng: &mut impl Rng, cfg: &StructureConfig) -> Signature {
    let n_sorts = rng.gen_range(1..=cfg.max_sorts.max(1));
    let n_rels = rng.gen_range(1..=cfg.max_rels.max(1));
    let rel_sigs = (0..n_rels)
        .map(|_| {
            let arity = rng.gen_range(1..=cfg.max_arity.max(1));
            (0..arity).map(|_| rng.gen_range(0..n_sorts)).collect()
        })
        .collect();
    Signature { n_sorts, rel_sigs }
}

/// Sort sizes: one element guaranteed per sort, the rest of the universe
/// budget distributed at random.
fn random_sizes(rng: &mut impl Rng, n_sorts: usize, max_universe: usize) -> Vec<usize> {
    let mut sizes = vec![1usize; n_sorts];
    let mut left = max_universe.saturating_sub(n_sorts);
    for s in 0..n_sorts {
        let extra = rng.gen_range(0..=left);
        sizes[s] += extra;
        left -= extra;
    }
    sizes
}

fn all_scopes(sizes: &[usize], sig: &[usize]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for &s in sig {
        let mut next = Vec::with_capacity(out.len() * sizes[s]);
        for t in &out {
            for e in 0..sizes[s] as u32 {
                let mut t2 = t.clone();
                t2.push(e);
                next.push(t2);
            }
        }
        out = next;
    }
    out
}

fn build(sig: &Signature, sizes: &[usize], rel_tuples: Vec<Vec<Vec<u32>>>) -> Structure {
    let sorts = (0..sig.n_sorts)
        .map(|s| {
            (
                format!("s{s}"),
                (0..sizes[s]).map(|e| format!("e{e}")).collect(),
            )
        })
        .collect();
    let rels = sig
        .rel_sigs
        .iter()
        .zip(rel_tuples)
        .enumerate()
        .map(|(r, (rsig, tuples))| {
            (
                format!("r{r}"),
                rsig.iter().map(|&s| format!("s{s}")).collect(),
                tuples
                    .into_iter()
                    .map(|t| t.iter().map(|&e| format!("e{e}")).collect())
                    .collect(),
            )
        })
        .collect();
    Structure::new(sorts, rels).expect("generated parts are well-formed")
}

fn random_tuples(rng: &mut impl Rng, sizes: &[usize], sig: &Signature, density: f64) -> Vec<Vec<Vec<u32>>> {
    let p = density.clamp(0.0, 1.0);
    sig.rel_sigs
        .iter()
        .map(|rsig| {
            all_scopes(sizes, rsig)
                .into_iter()
                .filter(|_| rng.gen_bool(p))
                .collect()
        })
        .collect()
}

/// One random template within the configured bounds.
pub fn random_structure(rng: &mut impl Rng, cfg: &StructureConfig) -> Structure {
    let sig = random_signature(rng, cfg);
    let sizes = random_sizes(rng, sig.n_sorts, cfg.max_universe);
    let tuples = random_tuples(rng, &sizes, &sig, cfg.density);
    build(&sig, &sizes, tuples)
}

/// Two random templates over one sampled signature (sizes and tuples are
/// sampled independently), so homomorphism counts between them are defined.
pub fn random_structure_pair(rng: &mut impl Rng, cfg: &StructureConfig) -> (Structure, Structure) {
    let sig = random_signature(rng, cfg);
    let mut side = || {
        let sizes = random_sizes(rng, sig.n_sorts, cfg.max_universe);
        let tuples = random_tuples(rng, &sizes, &sig, cfg.density);
        build(&sig, &sizes, tuples)
    };
    let g = side();
    let h = side();
    (g, h)
}

/// A random template guaranteed non-rigid at `p`: the first sort gets at
/// least `p` elements and every relation is closed under the cycle rotating
/// the first `p` of them, which is therefore an order-`p` automorphism.
pub fn random_nonrigid_structure(rng: &mut impl Rng, cfg: &StructureConfig, p: u64) -> Structure {
    let p = p as usize;
    let sig = random_signature(rng, cfg);
    let mut sizes = random_sizes(rng, sig.n_sorts, cfg.max_universe.max(p));
    sizes[0] = sizes[0].max(p);
    let rotate = |t: &[u32], rsig: &[usize]| -> Vec<u32> {
        rsig.iter()
            .zip(t)
            .map(|(&s, &e)| {
                if s == 0 && (e as usize) < p {
                    (e + 1) % p as u32
                } else {
                    e
                }
            })
            .collect()
    };
    let tuples = random_tuples(rng, &sizes, &sig, cfg.density)
        .into_iter()
        .enumerate()
        .map(|(r, picked)| {
            let rsig = &sig.rel_sigs[r];
            let mut closed: Vec<Vec<u32>> = Vec::new();
            for t in picked {
                let mut cur = t;
                for _ in 0..p {
                    if !closed.contains(&cur) {
                        closed.push(cur.clone());
                    }
                    cur = rotate(&cur, rsig);
                }
            }
            closed
        })
        .collect();
    build(&sig, &sizes, tuples)
}

/// Bounds for random instance generation.
#[derive(Debug, Clone)]
pub struct InstanceConfig {
    /// Most variables an instance may have (at least 1 is generated).
    pub max_vars: usize,
    /// Most constraints (zero is allowed, leaving variables free).
    pub max_constraints: usize,
    /// Probability that a constraint slot becomes an equality between two
    /// same-sort variables (when such a pair exists).
    pub eq_probability: f64,
}

impl Default for InstanceConfig {
    fn default() -> InstanceConfig {
        InstanceConfig {
            max_vars: 4,
            max_constraints: 4,
            eq_probability: 0.15,
        }
    }
}

/// One random instance over `h`: variables get random sorts, constraint
/// slots get random relations with sort-compatible random scopes (slots
/// that cannot be filled are dropped), and occasionally an equality link.
pub fn random_instance(rng: &mut impl Rng, h: &Structure, cfg: &InstanceConfig) -> Instance {
    let n_vars = rng.gen_range(1..=cfg.max_vars.max(1));
    let var_sorts: Vec<usize> = (0..n_vars)
        .map(|_| rng.gen_range(0..h.sort_count()))
        .collect();
    let vars: Vec<(String, String)> = var_sorts
        .iter()
        .enumerate()
        .map(|(v, &s)| (format!("v{v}"), h.sort_name(s).to_string()))
        .collect();
    let mut constraints: Vec<(Vec<String>, String)> = Vec::new();
    let eq_p = cfg.eq_probability.clamp(0.0, 1.0);
    for _ in 0..rng.gen_range(0..=cfg.max_constraints) {
        if rng.gen_bool(eq_p) {
            let u = rng.gen_range(0..n_vars);
            let mates: Vec<usize> = (0..n_vars)
                .filter(|&v| v != u && var_sorts[v] == var_sorts[u])
                .collect();
            if !mates.is_empty() {
                let v = mates[rng.gen_range(0..mates.len())];
                constraints.push((vec![format!("v{u}"), format!("v{v}")], "=".to_string()));
                continue;
            }
        }
        let r = rng.gen_range(0..h.rel_count());
        let scope: Option<Vec<String>> = h
            .rel_sig(r)
            .iter()
            .map(|&s| {
                let fits: Vec<usize> = (0..n_vars).filter(|&v| var_sorts[v] == s).collect();
                if fits.is_empty() {
                    None
                } else {
                    Some(format!("v{}", fits[rng.gen_range(0..fits.len())]))
                }
            })
            .collect();
        if let Some(scope) = scope {
            constraints.push((scope, h.rel_name(r).to_string()));
        }
    }
    Instance::new(h, vars, constraints).expect("generated instance is well-formed")
}

/// Every instance with exactly `n_vars` variables (all over the single
/// sort of `h`) and at most `max_atoms` relation atoms, keeping only those
/// in which every variable occurs in some atom — smaller variable counts
/// already cover the padded instances. Atoms are enumerated relation by
/// relation with scopes in odometer order, and atom sets are ascending
/// index combinations, so the output order is fixed.
pub fn exhaustive_instances(
    h: &Structure,
    n_vars: usize,
    max_atoms: usize,
) -> Result<Vec<Instance>> {
    if h.sort_count() != 1 {
        return Err(Error::Precondition(
            "exhaustive enumeration requires a single-sorted template".into(),
        ));
    }
    if n_vars == 0 || n_vars > 32 {
        return Err(Error::Precondition(
            "exhaustive enumeration needs 1..=32 variables".into(),
        ));
    }
    let vars: Vec<(String, String)> = (0..n_vars)
        .map(|v| (format!("v{v}"), h.sort_name(0).to_string()))
        .collect();
    // Atom pool: (relation, scope, covered-variables bitmask).
    let mut atoms: Vec<(usize, Vec<usize>, u32)> = Vec::new();
    for r in 0..h.rel_count() {
        let arity = h.rel_sig(r).len();
        let mut scope = vec![0usize; arity];
        loop {
            let mask = scope.iter().fold(0u32, |m, &v| m | (1 << v));
            atoms.push((r, scope.clone(), mask));
            let mut pos = arity;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                scope[pos] += 1;
                if scope[pos] < n_vars {
                    break;
                }
                scope[pos] = 0;
            }
            if scope.iter().all(|&v| v == 0) {
                break;
            }
        }
    }
    let full: u32 = if n_vars == 32 { u32::MAX } else { (1 << n_vars) - 1 };
    let mut out = Vec::new();
    let mut picked: Vec<usize> = Vec::new();
    fn descend(
        atoms: &[(usize, Vec<usize>, u32)],
        picked: &mut Vec<usize>,
        start: usize,
        mask: u32,
        left: usize,
        full: u32,
        emit: &mut dyn FnMut(&[usize]),
    ) {
        if mask == full && !picked.is_empty() {
            emit(picked);
        }
        if left == 0 {
            return;
        }
        for i in start..atoms.len() {
            picked.push(i);
            descend(atoms, picked, i + 1, mask | atoms[i].2, left - 1, full, emit);
            picked.pop();
        }
    }
    descend(&atoms, &mut picked, 0, 0, max_atoms, full, &mut |set| {
        let constraints: Vec<(Vec<String>, String)> = set
            .iter()
            .map(|&i| {
                let (r, scope, _) = &atoms[i];
                (
                    scope.iter().map(|&v| format!("v{v}")).collect(),
                    h.rel_name(*r).to_string(),
                )
            })
            .collect();
        out.push(Instance::new(h, vars.clone(), constraints).expect("atoms are well-formed"));
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automorphism::find_order_p_automorphism;
    use crate::oracle;

    #[test]
    fn generators_are_deterministic_in_the_seed() {
        let cfg = StructureConfig::default();
        let icfg = InstanceConfig::default();
        let run = || {
            let mut rng = seeded_rng(7);
            let h = random_structure(&mut rng, &cfg);
            let pair = random_structure_pair(&mut rng, &cfg);
            let nr = random_nonrigid_structure(&mut rng, &cfg, 2);
            let inst = random_instance(&mut rng, &h, &icfg);
            (h, pair, nr, inst)
        };
        let (h1, p1, n1, i1) = run();
        let (h2, p2, n2, i2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert_eq!(n1, n2);
        assert_eq!(i1, i2);
    }

    #[test]
    fn random_structures_respect_the_bounds() {
        let cfg = StructureConfig::default();
        let mut rng = seeded_rng(11);
        for _ in 0..50 {
            let h = random_structure(&mut rng, &cfg);
            assert!(h.sort_count() >= 1 && h.sort_count() <= cfg.max_sorts);
            assert!(h.universe_size() <= cfg.max_universe);
            assert!(h.rel_count() >= 1 && h.rel_count() <= cfg.max_rels);
            for r in 0..h.rel_count() {
                assert!((1..=cfg.max_arity).contains(&h.rel_sig(r).len()));
            }
            let (g, h2) = random_structure_pair(&mut rng, &cfg);
            assert!(g.same_signature(&h2));
        }
    }

    #[test]
    fn nonrigid_structures_carry_an_order_p_automorphism() {
        let cfg = StructureConfig::default();
        for p in [2u64, 3] {
            let mut rng = seeded_rng(13 + p);
            for _ in 0..20 {
                let h = random_nonrigid_structure(&mut rng, &cfg, p);
                assert!(
                    find_order_p_automorphism(&h, p).unwrap().is_some(),
                    "closure under the cycle must leave an order-{p} automorphism"
                );
            }
        }
    }

    #[test]
    fn random_instances_are_well_formed_and_countable() {
        let cfg = StructureConfig::default();
        let icfg = InstanceConfig::default();
        let mut rng = seeded_rng(17);
        for _ in 0..30 {
            let h = random_structure(&mut rng, &cfg);
            let inst = random_instance(&mut rng, &h, &icfg);
            assert!(inst.var_count() >= 1 && inst.var_count() <= icfg.max_vars);
            // The oracle accepts the instance as-is.
            let _ = oracle::count_solutions(&inst, &h);
        }
    }

    #[test]
    fn exhaustive_enumeration_counts_covering_sets() {
        // One binary relation, two variables, single atoms: only the two
        // mixed scopes cover both variables.
        let h = Structure::new(
            vec![("H".into(), vec!["0".into(), "1".into()])],
            vec![("E".into(), vec!["H".into(), "H".into()], vec![vec!["0".into(), "1".into()]])],
        )
        .unwrap();
        let insts = exhaustive_instances(&h, 2, 1).unwrap();
        assert_eq!(insts.len(), 2);
        // With one variable every singleton atom covers.
        let insts = exhaustive_instances(&h, 1, 1).unwrap();
        assert_eq!(insts.len(), 1);
        // Sets are capped by size, not exactly sized: the two covering
        // singletons plus every pair — distinct atoms always cover jointly
        // here, since each variable has only one non-covering atom.
        let insts = exhaustive_instances(&h, 2, 2).unwrap();
        let atoms = 4;
        assert_eq!(insts.len(), 2 + atoms * (atoms - 1) / 2);
        // Multi-sorted templates are rejected.
        let two = Structure::new(
            vec![
                ("A".into(), vec!["a".into()]),
                ("B".into(), vec!["b".into()]),
            ],
            vec![("P".into(), vec!["A".into()], vec![])],
        )
        .unwrap();
        assert!(exhaustive_instances(&two, 2, 1).is_err());
    }
}
