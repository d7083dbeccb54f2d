use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use facedepth_core::data::layout::read_dataset;
use facedepth_core::data::subsets::split_train_test;
use facedepth_core::nn::ModelKind;
use facedepth_core::training::{train_epoch, EpochLosses, PairedSet, TrainState};
use facedepth_core::Error;

use super::create_dir;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::{CmdResult, Failure, TrainArgs};

pub const LOSSES: &str = "losses.csv";
const LOSS_HEADER: &str = "epoch,step,d_loss,g_adv_loss,g_mse_loss";

pub fn checkpoint_name(kind: ModelKind, epoch: u64) -> String {
    format!("{}_e{epoch:04}.ckpt", kind.name())
}

/// Discriminator checkpoint stored next to a generator checkpoint.
pub fn sibling_discriminator(generator: &Path) -> CmdResult<PathBuf> {
    let name = generator.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let rest = name
        .strip_prefix(ModelKind::Generator.name())
        .ok_or_else(|| Failure::usage(format!("{} is not a generator checkpoint file name", generator.display())))?;
    Ok(generator.with_file_name(format!("{}{rest}", ModelKind::Discriminator.name())))
}

fn loss_line(r: &EpochLosses) -> String {
    format!("{},{},{},{},{}", r.epoch, r.step, r.d_loss, r.g_adv_loss, r.g_mse_loss)
}

fn resume_into(state: &mut TrainState<f32>, path: &Path, epochs: u64) -> CmdResult {
    let g = Checkpoint::load(path)?;
    let d = Checkpoint::load(&sibling_discriminator(path)?)?;
    g.restore(&mut state.generator)?;
    d.restore(&mut state.discriminator)?;
    if (g.epoch, g.step) != (d.epoch, d.step) {
        return Err(Failure::runtime(format!(
            "generator (epoch {}) and discriminator (epoch {}) checkpoints differ",
            g.epoch, d.epoch
        )));
    }
    if g.epoch > epochs {
        return Err(Failure::usage(format!("checkpoint is at epoch {} but train.epochs = {epochs}", g.epoch)));
    }
    match (g.optimizer, d.optimizer) {
        (Some(go), Some(dopt)) => {
            state.g_opt = go;
            state.d_opt = dopt;
        }
        _ => return Err(Failure::runtime("checkpoint lacks optimizer state")),
    }
    state.epoch = g.epoch;
    state.step = g.step;
    Ok(())
}

/// Keeps the header and the first `epochs` rows of an existing loss file.
fn truncated_losses(path: &Path, epochs: u64) -> CmdResult<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_HEADER) {
        return Err(Failure::runtime(format!("{} is not a loss file", path.display())));
    }
    let rows: Vec<&str> = lines.take(epochs as usize).collect();
    if rows.len() as u64 != epochs {
        return Err(Failure::runtime(format!(
            "{} has {} rows, resume needs {epochs}",
            path.display(),
            rows.len()
        )));
    }
    let mut out = format!("{LOSS_HEADER}\n");
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    Ok(out)
}

pub fn run(a: &TrainArgs) -> CmdResult {
    let (cfg, snapshot) = RunConfig::load(&a.config)?;
    if !cfg.data.root.is_dir() {
        return Err(Failure::usage(format!("dataset {} not found", cfg.data.root.display())));
    }
    let range = cfg.range()?;
    let samples = read_dataset(&cfg.data.root)?;
    let (train, _) = split_train_test(&samples, &cfg.test_subjects());
    if train.len() < 2 {
        return Err(Failure::usage("fewer than 2 training samples after removing test subjects"));
    }
    let data = PairedSet::<f32>::from_samples(&train, &range)?;
    if data.image_size() != cfg.train.image_size {
        return Err(Failure::usage(format!(
            "dataset images are {0}x{0} but train.image_size = {1}",
            data.image_size(),
            cfg.train.image_size
        )));
    }
    let mut state = TrainState::<f32>::new(&cfg.train)?;
    if let Some(path) = &a.resume {
        resume_into(&mut state, path, cfg.train.epochs)?;
    }

    let out = &cfg.output.dir;
    create_dir(out)?;
    let loss_path = out.join(LOSSES);
    let text = if a.resume.is_some() {
        truncated_losses(&loss_path, state.epoch)?
    } else {
        format!("{LOSS_HEADER}\n")
    };
    fs::write(&loss_path, &text).map_err(|e| Error::io(&loss_path, e))?;
    let mut log = fs::OpenOptions::new().append(true).open(&loss_path).map_err(|e| Error::io(&loss_path, e))?;

    eprintln!(
        "training on {} samples ({}x{}), epochs {}..{}",
        data.len(),
        data.image_size(),
        data.image_size(),
        state.epoch + 1,
        cfg.train.epochs
    );
    while state.epoch < cfg.train.epochs {
        let row = train_epoch(&mut state, &data, &cfg.train)?;
        let line = loss_line(&row);
        writeln!(log, "{line}").map_err(|e| Error::io(&loss_path, e))?;
        eprintln!(
            "epoch {:>4}  d {:.5}  g_adv {:.5}  g_mse {:.6}  ({} ms)",
            row.epoch, row.d_loss, row.g_adv_loss, row.g_mse_loss, row.wall_ms
        );
        if row.epoch % cfg.output.checkpoint_every == 0 || row.epoch == cfg.train.epochs {
            let g = Checkpoint::of(&state.generator, state.epoch, state.step, &snapshot, Some(&state.g_opt));
            let d = Checkpoint::of(&state.discriminator, state.epoch, state.step, &snapshot, Some(&state.d_opt));
            g.save(&out.join(checkpoint_name(ModelKind::Generator, state.epoch)))?;
            d.save(&out.join(checkpoint_name(ModelKind::Discriminator, state.epoch)))?;
        }
    }
    println!(
        "trained to epoch {} ({} steps); outputs in {}",
        state.epoch,
        state.step,
        out.display()
    );
    Ok(())
}
