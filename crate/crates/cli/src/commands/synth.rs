use facedepth_core::data::layout::write_dataset;
use facedepth_core::data::synth::synth_face_dataset;

use crate::{CmdResult, Failure, SynthArgs};

pub fn run(a: &SynthArgs) -> CmdResult {
    if a.subjects == 0 || a.frames == 0 {
        return Err(Failure::usage("--subjects and --frames must be positive"));
    }
    let samples = synth_face_dataset(a.subjects, a.frames, a.size, a.seed)?;
    write_dataset(&a.out, &samples)?;
    println!(
        "wrote {} frames of {} subjects ({}x{}) to {}",
        samples.len(),
        a.subjects,
        a.size,
        a.size,
        a.out.display()
    );
    Ok(())
}
