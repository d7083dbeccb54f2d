use std::path::Path;

use facedepth_core::data::normalize::{depth_maps, gray_batch, DepthRange};
use facedepth_core::data::{pgm, DepthMap, GrayImage};
use facedepth_core::nn::ModelKind;
use facedepth_core::{Generator, Network, WidthMultiplier};

use super::{create_dir, find_files, strip_suffix};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::{CmdResult, Failure, GenerateArgs};

const GRAY_SUFFIX: &str = "_gray.pgm";

/// Loads a generator checkpoint and the depth range of its run.
pub fn load_generator(path: &Path) -> CmdResult<(Generator<f32>, DepthRange)> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.kind != ModelKind::Generator {
        return Err(Failure::usage(format!("{} holds a {}, not a generator", path.display(), ckpt.kind.name())));
    }
    let range = RunConfig::parse(&ckpt.config)?.range()?;
    let mut g = Generator::new(WidthMultiplier::new(ckpt.multiplier)?, ckpt.image_size as usize)?;
    ckpt.restore(&mut g)?;
    Ok((g, range))
}

/// Side-by-side 8-bit strip: gray | ground truth (if any) | generated.
pub fn preview(gray: &GrayImage, truth: Option<&DepthMap>, generated: &DepthMap, range: &DepthRange) -> GrayImage {
    let s = gray.width();
    let panels = if truth.is_some() { 3 } else { 2 };
    let mut out = GrayImage::filled(s * panels, s, 0);
    let depth8 = |m: &DepthMap, x: usize, y: usize| range.to_8bit(m.get(x, y)) as u8;
    for y in 0..s {
        for x in 0..s {
            out.set(x, y, gray.get(x, y));
            let mut k = 1;
            if let Some(t) = truth {
                out.set(s + x, y, depth8(t, x, y));
                k = 2;
            }
            out.set(k * s + x, y, depth8(generated, x, y));
        }
    }
    out
}

pub fn run(a: &GenerateArgs) -> CmdResult {
    let (mut g, range) = load_generator(&a.ckpt)?;
    if !a.input.is_dir() {
        return Err(Failure::usage(format!("input {} not found", a.input.display())));
    }
    let inputs = find_files(&a.input, GRAY_SUFFIX)?;
    let size = g.image_size();
    let mut grays = Vec::with_capacity(inputs.len());
    for rel in &inputs {
        let img = pgm::read_gray(&a.input.join(rel))?;
        if img.width() != size || img.height() != size {
            return Err(Failure::usage(format!(
                "{} is {}x{}, the generator takes {size}x{size}",
                rel.display(),
                img.width(),
                img.height()
            )));
        }
        grays.push(img);
    }
    for (rels, imgs) in inputs.chunks(a.batch.max(1)).zip(grays.chunks(a.batch.max(1))) {
        let refs: Vec<&GrayImage> = imgs.iter().collect();
        let pred = g.predict(&gray_batch(&refs)?)?;
        for ((rel, gray), map) in rels.iter().zip(imgs).zip(depth_maps(&pred, &range)?) {
            let stem = strip_suffix(rel, GRAY_SUFFIX);
            let dir = a.out.join(stem.parent().unwrap_or(Path::new("")));
            create_dir(&dir)?;
            let name = stem.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
            let truth_path = a.input.join(stem.with_file_name(format!("{name}_depth.pgm")));
            let truth = if truth_path.is_file() { Some(pgm::read_depth(&truth_path)?) } else { None };
            pgm::write_depth(&dir.join(format!("{name}_depth.pgm")), &map)?;
            let strip = preview(gray, truth.as_ref().filter(|t| t.width() == size && t.height() == size), &map, &range);
            pgm::write_gray(&dir.join(format!("{name}_preview.pgm")), &strip)?;
        }
    }
    println!("generated {} depth maps in {}", inputs.len(), a.out.display());
    Ok(())
}
