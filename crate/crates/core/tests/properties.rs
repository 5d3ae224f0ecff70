use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use txdiff::chem::{bemis_murcko, morgan_fingerprint, tanimoto, tanimoto_counts, DEFAULT_RADIUS, FINGERPRINT_BITS};
use txdiff::diffusion::{build_schedule, cfg_combine, strided_schedule, TransitionKind};
use txdiff::molgraph::{parse_smiles, write_smiles, MolecularGraph};
use txdiff::splits::{cell_split, record_scaffold, scaffold_split, Partition, DEFAULT_TRIVIAL_MAX_ATOMS};
use txdiff::synth::{fixture_corpus, fixture_index, fixture_tissues};

fn corpus() -> &'static [MolecularGraph] {
    static CORPUS: OnceLock<Vec<MolecularGraph>> = OnceLock::new();
    CORPUS.get_or_init(|| fixture_corpus(60, 17).iter().map(|s| parse_smiles(s).unwrap()).collect())
}

fn molecule() -> impl Strategy<Value = &'static MolecularGraph> {
    (0..corpus().len()).prop_map(|i| &corpus()[i])
}

fn shuffled(g: &MolecularGraph, seed: u64) -> MolecularGraph {
    let mut perm: Vec<usize> = (0..g.atom_count()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    g.permuted(&perm)
}

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0f64..8.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tanimoto_is_symmetric_and_bounded(
        a in prop::collection::vec(0.0f64..5.0, 16),
        b in prop::collection::vec(0.0f64..5.0, 16),
    ) {
        prop_assume!(a.iter().chain(&b).any(|&v| v > 0.0));
        let ab = tanimoto(&a, &b).unwrap();
        let ba = tanimoto(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn fingerprint_similarity_is_symmetric(a in molecule(), b in molecule()) {
        let fa = morgan_fingerprint(a, DEFAULT_RADIUS, FINGERPRINT_BITS).unwrap();
        let fb = morgan_fingerprint(b, DEFAULT_RADIUS, FINGERPRINT_BITS).unwrap();
        let t = tanimoto_counts(&fa, &fb).unwrap();
        prop_assert_eq!(t, tanimoto_counts(&fb, &fa).unwrap());
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert_eq!(tanimoto_counts(&fa, &fa).unwrap(), 1.0);
    }

    #[test]
    fn atom_order_does_not_matter(g in molecule(), seed in any::<u64>()) {
        let h = shuffled(g, seed);
        prop_assert_eq!(
            morgan_fingerprint(g, DEFAULT_RADIUS, FINGERPRINT_BITS).unwrap(),
            morgan_fingerprint(&h, DEFAULT_RADIUS, FINGERPRINT_BITS).unwrap()
        );
        prop_assert_eq!(write_smiles(g), write_smiles(&h));
        prop_assert_eq!(bemis_murcko(g).unwrap(), bemis_murcko(&h).unwrap());
    }

    #[test]
    fn scaffold_of_a_scaffold_is_itself(g in molecule()) {
        let s = bemis_murcko(g).unwrap();
        if !s.is_empty() {
            let again = bemis_murcko(&parse_smiles(s.canonical_smiles()).unwrap()).unwrap();
            prop_assert_eq!(again, s);
        }
    }

    #[test]
    fn guidance_endpoints_and_normalization(c in logits(6), u in logits(6), s in 0.0f64..8.0) {
        let soft = |v: &[f64]| cfg_combine(v, v, 1.0).unwrap();
        prop_assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), soft(&c));
        prop_assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), soft(&u));
        let p = cfg_combine(&c, &u, s).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        // Agreeing models are unaffected by the scale.
        for (a, b) in cfg_combine(&c, &c, s).unwrap().iter().zip(soft(&c)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn strided_chain_visits_the_original_marginals(t in 2usize..120, frac in 0.0f64..1.0) {
        let m = 1 + ((t - 1) as f64 * frac) as usize;
        let full = build_schedule(t, TransitionKind::Uniform, 4, 3).unwrap();
        let (coarse, map) = strided_schedule(&full, m).unwrap();
        prop_assert_eq!(coarse.steps(), m);
        prop_assert_eq!(map.len(), m);
        prop_assert_eq!(*map.last().unwrap(), t);
        prop_assert!(map.windows(2).all(|w| w[0] < w[1]));
        for (i, &orig) in map.iter().enumerate() {
            prop_assert_eq!(coarse.alpha_bar()[i + 1], full.alpha_bar()[orig]);
            for (a, b) in coarse.edges.q_bar(i + 1).data().iter().zip(full.edges.q_bar(orig).data()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn scaffold_split_is_deterministic_and_leak_free(data in 0u64..1000, seed in any::<u64>()) {
        let ds = fixture_index(120, data);
        let a = scaffold_split(&ds, seed, DEFAULT_TRIVIAL_MAX_ATOMS).unwrap();
        prop_assert_eq!(&a, &scaffold_split(&ds, seed, DEFAULT_TRIVIAL_MAX_ATOMS).unwrap());
        let mut home: BTreeMap<_, Partition> = BTreeMap::new();
        for (r, (id, p)) in ds.records().iter().zip(a.assignment.entries()) {
            prop_assert_eq!(&r.id, id);
            if *p == Partition::Excluded {
                continue;
            }
            let s = record_scaffold(&r.smiles).unwrap();
            let first = *home.entry(s).or_insert(*p);
            prop_assert_eq!(first, *p);
        }
    }

    #[test]
    fn cell_split_keeps_cell_lines_together(data in 0u64..1000, pick in 0usize..8) {
        let ds = fixture_index(120, data);
        let held: BTreeSet<String> = [fixture_tissues()[pick].to_string()].into();
        let split = cell_split(&ds, &held).unwrap();
        prop_assert_eq!(&split, &cell_split(&ds, &held).unwrap());
        let mut home: BTreeMap<&str, Partition> = BTreeMap::new();
        for (r, (_, p)) in ds.records().iter().zip(split.entries()) {
            prop_assert_eq!(*p == Partition::Test, held.contains(&r.tissue));
            let first = *home.entry(r.cell_line.as_str()).or_insert(*p);
            prop_assert_eq!(first, *p);
        }
    }
}
