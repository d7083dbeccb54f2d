use std::collections::BTreeSet;

use facedepth_core::data::layout::{depth_key, read_dataset};
use facedepth_core::data::pairs::{build_pair_set, write_pair_list, PairRecord};
use facedepth_core::data::FaceSample;
use facedepth_core::data::pairs::VerificationPair;

use crate::{CmdResult, Failure, MakePairsArgs};

/// Pair-list rows with depth paths relative to the dataset root.
pub fn records(samples: &[FaceSample], pairs: &[VerificationPair]) -> Vec<PairRecord> {
    let key = |i: usize| depth_key(samples[i].subject_id, samples[i].frame);
    pairs
        .iter()
        .map(|p| PairRecord {
            path_a: key(p.a),
            path_b: key(p.b),
            label: p.same,
        })
        .collect()
}

pub fn run(a: &MakePairsArgs) -> CmdResult {
    if !a.data.is_dir() {
        return Err(Failure::usage(format!("dataset {} not found", a.data.display())));
    }
    let mut samples = read_dataset(&a.data)?;
    if let Some(list) = &a.subjects {
        let keep: BTreeSet<u32> = list.iter().copied().collect();
        samples.retain(|s| keep.contains(&s.subject_id));
    }
    let pairs = build_pair_set(&samples, a.n, a.balance, a.seed)?;
    write_pair_list(&a.out, &records(&samples, &pairs))?;
    let same = pairs.iter().filter(|p| p.same).count();
    println!("wrote {} pairs ({same} same-subject) to {}", pairs.len(), a.out.display());
    Ok(())
}
