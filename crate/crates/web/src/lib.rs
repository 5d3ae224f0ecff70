//! Browser bindings for the static demo page in `www/`.
//!
//! Every export takes plain strings and numbers and returns a JSON string,
//! either the result object or `{"error": ...}`. The same functions are
//! callable natively, which is how they are tested.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

use txdiff::chem::{bemis_murcko, morgan_fingerprint, tanimoto_counts, DEFAULT_RADIUS, FINGERPRINT_BITS};
use txdiff::diffusion::{build_schedule, cfg_combine, forward_sample, CategoricalGraphState, TransitionKind};
use txdiff::molgraph::{check_valence, is_valid, parse_smiles, write_smiles, Element, MolecularGraph, EDGE_CATEGORIES};

/// Largest chain the demo will build.
const MAX_T: usize = 2000;

fn reply(r: Result<Value, String>) -> String {
    r.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

fn parse(smiles: &str) -> Result<MolecularGraph, String> {
    parse_smiles(smiles.trim()).map_err(|e| e.to_string())
}

/// Hill-order formula including implicit hydrogens.
fn formula(g: &MolecularGraph) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut h = 0usize;
    for a in g.atoms() {
        *counts.entry(a.element.symbol()).or_default() += 1;
        h += a.explicit_h as usize;
    }
    let mut out = String::new();
    let mut push = |sym: &str, n: usize| {
        if n > 0 {
            out.push_str(sym);
            if n > 1 {
                out.push_str(&n.to_string());
            }
        }
    };
    push("C", counts.remove("C").unwrap_or(0));
    push("H", h);
    for (sym, n) in counts {
        push(sym, n);
    }
    out
}

pub fn inspect_json(smiles: &str) -> Result<Value, String> {
    let g = parse(smiles)?;
    let fp = morgan_fingerprint(&g, DEFAULT_RADIUS, FINGERPRINT_BITS).map_err(|e| e.to_string())?;
    let scaffold = bemis_murcko(&g).map_err(|e| e.to_string())?;
    let rings = g.ring_atoms().iter().filter(|&&r| r).count();
    Ok(json!({
        "canonical": write_smiles(&g),
        "formula": formula(&g),
        "atoms": g.atom_count(),
        "bonds": g.bonds().len(),
        "ring_atoms": rings,
        "components": g.components().len(),
        "valence_ok": check_valence(&g).is_ok(),
        "scaffold": scaffold.to_string(),
        "fp_bits_set": fp.nonzero().count(),
        "fp_total": fp.total(),
    }))
}

pub fn similarity_json(a: &str, b: &str) -> Result<Value, String> {
    let fp = |s: &str| morgan_fingerprint(&parse(s)?, DEFAULT_RADIUS, FINGERPRINT_BITS).map_err(|e| e.to_string());
    let t = tanimoto_counts(&fp(a)?, &fp(b)?).map_err(|e| e.to_string())?;
    Ok(json!({ "tanimoto": t }))
}

/// Noises a molecule to step `t` of a `steps`-long chain and reports the
/// schedule curve with the corrupted graph.
pub fn forward_json(smiles: &str, steps: usize, t: usize, kernel: &str, seed: u32) -> Result<Value, String> {
    let g = parse(smiles)?;
    if !(1..=MAX_T).contains(&steps) || t > steps {
        return Err(format!("need 1 <= T <= {MAX_T} and 0 <= t <= T"));
    }
    let kind = match kernel {
        "uniform" => TransitionKind::Uniform,
        "marginal" => TransitionKind::marginal_from(std::slice::from_ref(&g)),
        k => return Err(format!("unknown kernel {k}")),
    };
    let sched = build_schedule(steps, kind, Element::COUNT, EDGE_CATEGORIES).map_err(|e| e.to_string())?;
    let x0 = CategoricalGraphState::from_graph(&g);
    let xt = if t == 0 {
        x0.clone()
    } else {
        forward_sample(&x0, t, &sched, &mut ChaCha8Rng::seed_from_u64(u64::from(seed))).map_err(|e| e.to_string())?
    };
    let nodes_changed = x0.node_categories().iter().zip(xt.node_categories()).filter(|(a, b)| *a != b).count();
    let edges_changed = x0.edge_categories().iter().zip(xt.edge_categories()).filter(|(a, b)| *a != b).count() / 2;
    let noised = xt.to_molecule().map_err(|e| e.to_string())?;
    Ok(json!({
        "alpha_bar": sched.alpha_bar(),
        "t": t,
        "smiles": write_smiles(&noised),
        "valid": is_valid(&noised),
        "nodes_changed": nodes_changed,
        "edges_changed": edges_changed,
    }))
}

fn numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("not a number: {x:?}")))
        .collect()
}

fn softmax(v: &[f64]) -> Result<Vec<f64>, String> {
    cfg_combine(v, v, 1.0).map_err(|e| e.to_string())
}

/// Guided distribution for comma-separated conditional and unconditional
/// logits, with both inputs' own softmax for comparison.
pub fn guidance_json(cond: &str, uncond: &str, s: f64) -> Result<Value, String> {
    let (c, u) = (numbers(cond)?, numbers(uncond)?);
    let guided = cfg_combine(&c, &u, s).map_err(|e| e.to_string())?;
    Ok(json!({
        "guided": guided,
        "cond": softmax(&c)?,
        "uncond": softmax(&u)?,
    }))
}

#[wasm_bindgen]
pub fn inspect(smiles: &str) -> String {
    reply(inspect_json(smiles))
}

#[wasm_bindgen]
pub fn similarity(a: &str, b: &str) -> String {
    reply(similarity_json(a, b))
}

#[wasm_bindgen]
pub fn forward(smiles: &str, steps: usize, t: usize, kernel: &str, seed: u32) -> String {
    reply(forward_json(smiles, steps, t, kernel, seed))
}

#[wasm_bindgen]
pub fn guidance(cond: &str, uncond: &str, s: f64) -> String {
    reply(guidance_json(cond, uncond, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inspect_benzene_and_ethanol() {
        let v = inspect_json("c1ccccc1").unwrap();
        assert_eq!(v["formula"], "C6H6");
        assert_eq!(v["ring_atoms"], 6);
        assert_eq!(v["scaffold"], "c1ccccc1");
        let v = inspect_json("OCC").unwrap();
        assert_eq!(v["canonical"], inspect_json("CCO").unwrap()["canonical"]);
        assert_eq!(v["formula"], "C2H6O");
        assert_eq!(v["scaffold"], "EMPTY");
        assert!(inspect("C1CC").contains("error"));
    }

    #[test]
    fn similarity_of_a_molecule_with_itself() {
        assert_eq!(similarity_json("CCO", "OCC").unwrap()["tanimoto"], 1.0);
    }

    #[test]
    fn forward_noise_endpoints() {
        let v = forward_json("CCO", 100, 0, "uniform", 1).unwrap();
        assert_eq!(v["nodes_changed"], 0);
        assert_eq!(v["alpha_bar"].as_array().unwrap().len(), 101);
        let v = forward_json("c1ccccc1O", 100, 100, "marginal", 1).unwrap();
        assert!(v["smiles"].is_string());
        assert!(forward_json("CCO", 10, 11, "uniform", 1).is_err());
    }

    #[test]
    fn guidance_identities() {
        let v = guidance_json("0,1", "1,0", 1.0).unwrap();
        assert_eq!(v["guided"], v["cond"]);
        let v = guidance_json("0,1", "1,0", 0.0).unwrap();
        assert_eq!(v["guided"], v["uncond"]);
        assert!(guidance_json("0,x", "1,0", 1.0).is_err());
    }
}
