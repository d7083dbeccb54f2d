use std::collections::BTreeSet;
use std::fs;

use facedepth_core::data::layout::read_dataset;
use facedepth_core::data::pairs::{build_pair_set, write_pair_list};
use facedepth_core::data::subsets::split_train_test;
use facedepth_core::data::{DepthMap, FaceSample};
use facedepth_core::metrics::verification_accuracy;
use facedepth_core::verifier::train_verifier;
use facedepth_core::Error;

use super::create_dir;
use super::pairs::records;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::{CmdResult, Failure, TrainVerifierArgs};

pub const VERIFIER_CKPT: &str = "verifier.ckpt";
pub const TEST_PAIRS: &str = "test_pairs.csv";

pub fn run(a: &TrainVerifierArgs) -> CmdResult {
    let (cfg, snapshot) = RunConfig::load(&a.config)?;
    if !cfg.data.root.is_dir() {
        return Err(Failure::usage(format!("dataset {} not found", cfg.data.root.display())));
    }
    let range = cfg.range()?;
    let tests = cfg.test_subjects();
    let samples = read_dataset(&cfg.data.root)?;
    let (train, held_out) = split_train_test(&samples, &tests);
    let train: Vec<FaceSample> = train.into_iter().cloned().collect();
    let held_out: Vec<FaceSample> = held_out.into_iter().cloned().collect();
    let p = &cfg.pairs;
    let pairs = build_pair_set(&train, p.n_pairs, p.balance, p.seed)?;

    let out = &cfg.output.dir;
    create_dir(out)?;
    eprintln!("training verifier on {} pairs from {} samples", pairs.len(), train.len());
    let (mut net, losses) = train_verifier::<f32>(&train, &pairs, &tests, &range, &cfg.verifier)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    let loss_path = out.join("verifier_losses.csv");
    fs::write(&loss_path, csv).map_err(|e| Error::io(&loss_path, e))?;
    Checkpoint::of(&net, cfg.verifier.epochs, 0, &snapshot, None).save(&out.join(VERIFIER_CKPT))?;

    let held_subjects: BTreeSet<u32> = held_out.iter().map(|s| s.subject_id).collect();
    if p.n_test_pairs > 0 && held_subjects.len() < 2 {
        eprintln!("fewer than 2 test subjects present; no held-out pairs written");
    } else if p.n_test_pairs > 0 {
        let test_pairs = build_pair_set(&held_out, p.n_test_pairs, p.balance, p.test_seed)?;
        write_pair_list(&out.join(TEST_PAIRS), &records(&held_out, &test_pairs))?;
        let maps: Vec<&DepthMap> = held_out.iter().map(|s| &s.depth).collect();
        let acc = verification_accuracy(&mut net, &maps, &test_pairs, cfg.verifier.image_size, &range)?;
        println!("held-out verification accuracy on original maps: {acc:.4} ({} pairs)", test_pairs.len());
    }
    println!("final training loss {:.5}; outputs in {}", losses.last().copied().unwrap_or(f64::NAN), out.display());
    Ok(())
}
