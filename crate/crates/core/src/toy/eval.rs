use ndarray::Array2;

use crate::diff::Graph;
use crate::error::{Error, Result};
use crate::rng::RngState;

use super::model::{Chain, Latents, Stage, ToyModel};
use super::source::{make_source_batch, SOURCE_DIM};
use super::train::{forward, PassSpec};

const EVAL_BATCH: usize = 250;

/// Evaluation metrics. `max_power` is the largest per-batch average symbol
/// energy seen on the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mse: f64,
    pub psnr_db: f64,
    pub cbr: f64,
    pub max_power: f64,
}

pub fn psnr(mse: f64) -> f64 {
    10.0 * (1.0 / mse).log10()
}

/// Deterministic evaluation over `n_eval` fresh sources with rounded latents.
/// The source set and the channel draws depend only on `seed`, so
/// evaluations of different chains or models with the same seed are paired.
pub fn evaluate(
    model: &ToyModel,
    order: u32,
    snr_db: f64,
    chain: Chain,
    n_eval: usize,
    seed: u64,
) -> Result<EvalResult> {
    if model.stage < Stage::Phase2 {
        return Err(Error::PhaseOrder(format!(
            "evaluation needs a model trained through phase2, this one is at {}",
            model.stage.name()
        )));
    }
    if n_eval == 0 {
        return Err(Error::InvalidLength("n_eval must be >= 1".into()));
    }
    let base = RngState::named(seed, "eval");
    let spec = PassSpec {
        latents: Latents::Rounded,
        chain: Some(chain),
        order,
        snr_db,
        lambda: model.lambda,
    };
    let (mut sq_err, mut symbols, mut max_power) = (0.0, 0usize, 0.0f64);
    let mut done = 0;
    let mut batch = 0u64;
    while done < n_eval {
        let n = EVAL_BATCH.min(n_eval - done);
        let x = make_source_batch(n, base.child("source").substream(batch));
        let mut g = Graph::new();
        let bound = model.bind(&mut g, &|_| false);
        let pass = forward(model, &mut g, &bound, &x, &spec, base.child("draws").substream(batch))?;
        sq_err += pass.mse.unwrap() * (n * SOURCE_DIM) as f64;
        symbols += pass.symbols;
        max_power = max_power.max(pass.power.unwrap());
        done += n;
        batch += 1;
    }
    let mse = sq_err / (n_eval * SOURCE_DIM) as f64;
    Ok(EvalResult {
        mse,
        psnr_db: psnr(mse),
        cbr: symbols as f64 / (n_eval * SOURCE_DIM) as f64,
        max_power,
    })
}

/// Encoder output for a batch and the stage-2 mask applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub symbols: Array2<f64>,
    pub mask: Array2<f64>,
}

/// Channel input for a batch of sources (relaxed encoder output, before any
/// dither), for inspecting the conditioning path and the masks.
pub fn encode(model: &ToyModel, x: &Array2<f64>, order: u32, snr_db: f64) -> Result<Encoded> {
    let spec = PassSpec {
        latents: Latents::Rounded,
        chain: Some(Chain::Relaxed),
        order,
        snr_db,
        lambda: model.lambda,
    };
    let mut g = Graph::new();
    let bound = model.bind(&mut g, &|_| false);
    let pass = forward(model, &mut g, &bound, x, &spec, RngState::named(0, "encode"))?;
    let symbols = g.value(pass.encoded.unwrap()).clone();
    let mask = pass.mask.unwrap();
    Ok(Encoded {
        symbols: symbols.into_dimensionality().unwrap(),
        mask: mask.into_dimensionality().unwrap(),
    })
}
