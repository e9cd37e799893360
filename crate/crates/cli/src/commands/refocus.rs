//! `refocus`: turn a stored light field into a focal-stack directory.

use anyhow::Context;
use ddff_core::data_io::load_lightfield;
use ddff_core::refocus::synthesize_stack;

use crate::config::Config;
use crate::stackio::save_stack_dir;

use super::{Outcome, Timer};

pub fn run(cfg: &Config) -> anyhow::Result<Outcome> {
    let lf_dir = cfg
        .refocus
        .lightfield
        .as_ref()
        .expect("validated before dispatch");
    let out = cfg.refocus.out.as_ref().expect("validated before dispatch");

    let timer = Timer::start();
    let lf = load_lightfield(lf_dir)
        .with_context(|| format!("loading light field from {}", lf_dir.display()))?;
    let load_s = timer.seconds();

    let timer = Timer::start();
    let stack = synthesize_stack(&lf, cfg.stack.slices, cfg.stack.d_near, cfg.stack.d_far)
        .context("synthesizing the focal stack")?;
    let refocus_s = timer.seconds();

    let timer = Timer::start();
    let files = save_stack_dir(out, &stack)
        .with_context(|| format!("writing stack to {}", out.display()))?;
    let write_s = timer.seconds();

    log::info!(
        "refocus: {} slice(s) over [{}, {}] -> {}",
        cfg.stack.slices,
        cfg.stack.d_near,
        cfg.stack.d_far,
        out.display()
    );
    Ok(Outcome {
        outputs: files,
        timings: vec![
            ("load".into(), load_s),
            ("refocus".into(), refocus_s),
            ("write".into(), write_s),
        ],
        ..Outcome::default()
    })
}
