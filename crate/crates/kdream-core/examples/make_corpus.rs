//! Regenerates the bundled SMILES test corpus: a hand-curated block of
//! structural edge cases (rings, branches, heteroatoms, all supported
//! elements) padded with seeded random molecules to 200 unique entries.
//! Output is deterministic; entries are deduplicated by canonical key.

use kdream_core::molgraph::{canonical_key, parse_smiles, random_molecule, write_smiles};
use kdream_core::rng::stream_rng;
use std::collections::HashSet;

const CURATED: &[&str] = &[
    "C",
    "CC",
    "CCO",
    "C=C",
    "C#C",
    "C#N",
    "CC(C)C",
    "CC(C)(C)C",
    "C1CC1",
    "C1CCC1",
    "C1CCCC1",
    "C1CCCCC1",
    "C1CCCCCC1",
    "C1=CC=CC=C1",
    "CC1=CC=CC=C1",
    "OC1=CC=CC=C1",
    "NC1=CC=CC=C1",
    "ClC1=CC=CC=C1",
    "C1=CC=CC=C1C2=CC=CC=C2",
    "C1CC1C2CC2",
    "CCN",
    "CCS",
    "CSSC",
    "CS(=O)(=O)C",
    "CC(=O)O",
    "CC(=O)OC",
    "CC(=O)N",
    "CC=CC",
    "N#CC#N",
    "OCC(O)CO",
    "FC(F)F",
    "BrC(Br)Br",
    "ICl",
    "OP(=O)(O)O",
    "NCCO",
    "CC(=O)NC",
    "C1COCCN1",
    "CC(C)=O",
    "C1=CC2=CC=CC=C2C=C1",
    "OC(=O)C1=CC=CC=C1",
];

fn main() {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in CURATED {
        let g = parse_smiles(s).expect("curated entries are valid");
        if seen.insert(canonical_key(&g)) {
            out.push(s.to_string());
        }
    }
    let mut rng = stream_rng(424_242, "corpus", 0);
    let mut i = 0u64;
    while out.len() < 200 {
        let n = 3 + (i % 10) as usize;
        i += 1;
        let g = random_molecule(&mut rng, n);
        if seen.insert(canonical_key(&g)) {
            out.push(write_smiles(&g));
        }
    }
    for s in out {
        println!("{s}");
    }
}
