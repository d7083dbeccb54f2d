use std::fs;
use std::io::Write;

use facedepth_core::data::crop::{face_crop, CropParams, CROP_SIZE};
use facedepth_core::data::layout::{
    depth_file_name, gray_file_name, read_annotations, subject_dir_name, subject_dirs, write_annotations, Annotation,
    ANNOTATIONS,
};
use facedepth_core::data::{pgm, FaceSample};
use facedepth_core::Error;
use serde::Serialize;

use super::create_dir;
use crate::{CmdResult, CropArgs, Failure};

#[derive(Serialize)]
struct BoxRow {
    subject: u32,
    frame: u32,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

pub fn run(a: &CropArgs) -> CmdResult {
    let params = CropParams {
        fx: a.fx,
        fy: a.fy,
        rx: a.rx,
        ry: a.ry,
        radius: a.radius,
    };
    params.validate()?;
    if !a.input.is_dir() {
        return Err(Failure::usage(format!("dataset {} not found", a.input.display())));
    }
    let subjects = subject_dirs(&a.input)?;
    // all annotation files are checked before anything is written
    let mut plan = Vec::with_capacity(subjects.len());
    for (id, dir) in subjects {
        let rows = read_annotations(&dir.join(ANNOTATIONS))?;
        plan.push((id, dir, rows));
    }
    create_dir(&a.out)?;
    let mut skipped = Vec::new();
    let mut boxes = csv::Writer::from_path(a.out.join("boxes.csv")).map_err(Error::from)?;
    let (mut kept, mut total) = (0usize, 0usize);
    for (id, dir, rows) in plan {
        let out_dir = a.out.join(subject_dir_name(id));
        create_dir(&out_dir)?;
        let mut out_rows = Vec::new();
        for r in rows {
            total += 1;
            let sample = FaceSample {
                gray: pgm::read_gray(&dir.join(gray_file_name(r.frame)))?,
                depth: pgm::read_depth(&dir.join(depth_file_name(r.frame)))?,
                subject_id: id,
                sequence_id: r.sequence,
                frame: r.frame,
                head_center: (r.center_x, r.center_y),
                pose: r.pose(),
            };
            let crop = match face_crop(&sample, &params) {
                Ok(c) => c,
                Err(e @ (Error::UnusableSample(_) | Error::Domain { .. } | Error::Shape { .. })) => {
                    skipped.push(format!("{}\t{e}", sample.key()));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            pgm::write_gray(&out_dir.join(gray_file_name(r.frame)), &crop.gray)?;
            pgm::write_depth(&out_dir.join(depth_file_name(r.frame)), &crop.depth)?;
            let b = crop.region;
            let s = CROP_SIZE as f64;
            out_rows.push(Annotation {
                center_x: (r.center_x - b.x0) * s / b.width(),
                center_y: (r.center_y - b.y0) * s / b.height(),
                ..r
            });
            boxes
                .serialize(BoxRow {
                    subject: id,
                    frame: r.frame,
                    x0: b.x0,
                    y0: b.y0,
                    x1: b.x1,
                    y1: b.y1,
                })
                .map_err(Error::from)?;
            kept += 1;
        }
        write_annotations(&out_dir.join(ANNOTATIONS), &out_rows)?;
    }
    boxes.flush().map_err(|e| Error::io(a.out.join("boxes.csv"), e))?;
    let log = a.out.join("skipped.log");
    let mut f = fs::File::create(&log).map_err(|e| Error::io(&log, e))?;
    for line in &skipped {
        writeln!(f, "{line}").map_err(|e| Error::io(&log, e))?;
    }
    println!("cropped {kept} of {total} samples to {}; {} skipped", a.out.display(), skipped.len());
    Ok(())
}
