use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use facedepth_core::data::layout::{read_annotations, ANNOTATIONS};
use facedepth_core::data::normalize::DepthRange;
use facedepth_core::data::pairs::{read_pair_list, VerificationPair};
use facedepth_core::data::subsets::{pose_subset, sequence_of, AngleSubset, SequenceSubset};
use facedepth_core::data::{pgm, DepthMap};
use facedepth_core::metrics::{accuracy_from_scores, depth_report, pair_scores, subset_grid, MetricReport, SubsetGrid, ValueSpace};
use facedepth_core::nn::ModelKind;
use facedepth_core::{Error, Network, Siamese, WidthMultiplier};

use super::{create_dir, find_files, key_of};
use crate::checkpoint::Checkpoint;
use crate::{CmdResult, EvalArgs, Failure};

const DEPTH_SUFFIX: &str = "_depth.pgm";

pub fn load_verifier(path: &Path) -> CmdResult<Siamese<f32>> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.kind != ModelKind::Siamese {
        return Err(Failure::usage(format!("{} holds a {}, not a verifier", path.display(), ckpt.kind.name())));
    }
    let mut net = Siamese::new(WidthMultiplier::new(ckpt.multiplier)?, ckpt.image_size as usize)?;
    ckpt.restore(&mut net)?;
    Ok(net)
}

/// Subsets of the target map at `rel` (`SS/NNNN_depth.pgm`), read from
/// the subject's annotation file.
fn tag_of(
    target: &Path,
    rel: &Path,
    cache: &mut HashMap<PathBuf, HashMap<u32, (AngleSubset, SequenceSubset)>>,
) -> CmdResult<(AngleSubset, SequenceSubset)> {
    let dir = rel.parent().unwrap_or(Path::new("")).to_path_buf();
    if !cache.contains_key(&dir) {
        let mut tags = HashMap::new();
        for row in read_annotations(&target.join(&dir).join(ANNOTATIONS))? {
            tags.insert(row.frame, (pose_subset(&row.pose()), sequence_of(row.sequence)?));
        }
        cache.insert(dir.clone(), tags);
    }
    let name = rel.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let frame: u32 = name
        .strip_suffix(DEPTH_SUFFIX)
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Failure::runtime(format!("cannot read a frame number from {}", rel.display())))?;
    cache[&dir]
        .get(&frame)
        .copied()
        .ok_or_else(|| Failure::runtime(format!("{} has no annotation row", rel.display())))
}

pub struct Evaluation {
    pub report: MetricReport,
    /// Verification accuracy on the target (original) maps.
    pub original_accuracy: Option<f64>,
    pub grid: Option<SubsetGrid>,
}

pub fn evaluate(a: &EvalArgs) -> CmdResult<Evaluation> {
    if a.pairs.is_some() && a.verifier.is_none() {
        return Err(Failure::usage("--pairs requires --verifier"));
    }
    if a.subsets && a.pairs.is_none() {
        return Err(Failure::usage("--subsets requires --pairs and --verifier"));
    }
    let space = ValueSpace::from_tag(&a.value_space)?;
    let range = DepthRange::new(a.depth_min, a.depth_max)?;
    for d in [&a.pred, &a.target] {
        if !d.is_dir() {
            return Err(Failure::usage(format!("{} not found", d.display())));
        }
    }
    let files = find_files(&a.target, DEPTH_SUFFIX)?;
    if files.is_empty() {
        return Err(Failure::runtime(format!("no *{DEPTH_SUFFIX} files under {}", a.target.display())));
    }
    let pred_files = find_files(&a.pred, DEPTH_SUFFIX)?;
    if pred_files != files {
        let missing = files.iter().find(|f| !pred_files.contains(f));
        let extra = pred_files.iter().find(|f| !files.contains(f));
        return Err(Failure::runtime(format!(
            "prediction and target sets differ ({} vs {} maps; first missing {:?}, first extra {:?})",
            pred_files.len(),
            files.len(),
            missing,
            extra
        )));
    }
    let mut targets = Vec::with_capacity(files.len());
    let mut preds = Vec::with_capacity(files.len());
    for rel in &files {
        let t = pgm::read_depth(&a.target.join(rel))?;
        let p = pgm::read_depth(&a.pred.join(rel))?;
        if (t.width(), t.height()) != (p.width(), p.height()) {
            return Err(Failure::runtime(format!("{}: prediction and target sizes differ", rel.display())));
        }
        targets.push(t);
        preds.push(p);
    }
    let t_refs: Vec<&DepthMap> = targets.iter().collect();
    let p_refs: Vec<&DepthMap> = preds.iter().collect();
    let mut report = depth_report(&p_refs, &t_refs, space, &range)?;

    let (mut original_accuracy, mut grid) = (None, None);
    if let (Some(pairs_path), Some(ckpt)) = (&a.pairs, &a.verifier) {
        let mut net = load_verifier(ckpt)?;
        let index: HashMap<String, usize> = files.iter().enumerate().map(|(i, f)| (key_of(f), i)).collect();
        let lookup = |k: &str| {
            index
                .get(k)
                .copied()
                .ok_or_else(|| Failure::runtime(format!("pair list names {k}, which is not under the target directory")))
        };
        let mut pairs = Vec::new();
        for r in read_pair_list(pairs_path)? {
            pairs.push(VerificationPair {
                a: lookup(&r.path_a)?,
                b: lookup(&r.path_b)?,
                same: r.label,
            });
        }
        let hash = net.param_hash();
        let size = net.image_size();
        let original = pair_scores(&mut net, &t_refs, &pairs, size, &range)?;
        let generated = pair_scores(&mut net, &p_refs, &pairs, size, &range)?;
        if net.param_hash() != hash {
            return Err(Error::Contract("evaluation modified the verifier".into()).into());
        }
        let labels: Vec<bool> = pairs.iter().map(|p| p.same).collect();
        original_accuracy = Some(accuracy_from_scores(&original, &labels)?);
        report.face_verification_acc = Some(accuracy_from_scores(&generated, &labels)?);
        if a.subsets {
            let mut cache = HashMap::new();
            let tags = files
                .iter()
                .map(|rel| tag_of(&a.target, rel, &mut cache))
                .collect::<CmdResult<Vec<_>>>()?;
            grid = Some(subset_grid(&tags, &pairs, &original, &generated)?);
        }
    }
    Ok(Evaluation {
        report,
        original_accuracy,
        grid,
    })
}

pub fn run(a: &EvalArgs) -> CmdResult {
    let ev = evaluate(a)?;
    println!("{}", ev.report);
    if let Some(acc) = ev.original_accuracy {
        println!("face verification on original maps: {acc:.4}");
    }
    if let Some(g) = &ev.grid {
        println!("\n{g}");
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let path = dir.join("report.csv");
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        ev.report.write_csv(f)?;
        if let Some(g) = &ev.grid {
            let path = dir.join("subsets.csv");
            let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            g.write_csv(f)?;
        }
    }
    if !ev.report.complete() {
        let missing: Vec<&str> = ev.report.rows()[..10].iter().filter(|(_, v)| v.is_none()).map(|(n, _)| *n).collect();
        return Err(Failure::runtime(format!("undefined metrics: {}", missing.join(", "))));
    }
    Ok(())
}
