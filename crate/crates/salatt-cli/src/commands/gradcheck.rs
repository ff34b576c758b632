//! `salatt gradcheck`: finite-difference verification of every parameter
//! block's gradient, per variant, at small fixed dimensions.

use clap::Args;

use salatt_core::error::{Error, Result};
use salatt_core::model::{
    model_grad_check, register_model_params, ModelConfig, Variant, GRADCHECK_RADIUS,
    GRADCHECK_SEED,
};
use salatt_core::params::ParamStore;
use salatt_core::region::{RegionFeatureBlock, RegionGrid, SynthGenerator, SynthSpec};
use salatt_core::rng::RngState;

pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Restrict the check to one variant (default: all five)
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Central difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Bias the analytic gradients so the check must fail (negative control)
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

/// The small configuration every variant is checked at.
pub fn gradcheck_model_config(variant: Variant) -> Result<ModelConfig> {
    Ok(ModelConfig {
        variant,
        feature_dim: 8,
        embed_dim: 6,
        question_layers: 1,
        question_hidden: 5,
        common_dim: 6,
        vocab_size: 11,
        answer_count: 4,
        dropout_rate: 0.0,
        grid: RegionGrid::new(4, 2, 1)?,
        normalize_features: false,
    })
}

fn gradcheck_block() -> Result<RegionFeatureBlock> {
    let generator = SynthGenerator::new(
        SynthSpec {
            grid: RegionGrid::new(4, 2, 1)?,
            feature_dim: 8,
            patterns: 4,
            noise_sigma: 0.4,
        },
        101,
    )?;
    let mut rng = RngState::seeded(102);
    Ok(generator.sample(&mut rng).0)
}

/// Run the check and return `(variant, block name, worst error)` rows.
pub fn run_gradcheck(
    variants: &[Variant],
    step: f64,
    corrupt: bool,
) -> Result<Vec<(Variant, String, f64)>> {
    let block = gradcheck_block()?;
    let tokens = [1usize, 2, 3];
    let label = 2;
    let mut report = Vec::new();
    for &variant in variants {
        let cfg = gradcheck_model_config(variant)?;
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 1)?;
        store.randomize(GRADCHECK_RADIUS, GRADCHECK_SEED);
        for (name, err) in model_grad_check(&cfg, &store, &block, &tokens, label, step, corrupt)? {
            report.push((variant, name, err));
        }
    }
    Ok(report)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let variants: Vec<Variant> = match args.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let report = run_gradcheck(&variants, args.step, args.corrupt_backward)?;
    let mut worst: f64 = 0.0;
    for (variant, name, err) in &report {
        println!("{variant} {name} {err:.3e}");
        worst = worst.max(*err);
    }
    println!("worst={worst:.3e}");
    println!("threshold={GRADCHECK_THRESHOLD:.0e}");
    if worst >= GRADCHECK_THRESHOLD {
        println!("result=fail");
        return Err(Error::Eval(format!(
            "gradient check failed: worst relative error {worst:.3e} >= {GRADCHECK_THRESHOLD:.0e}"
        )));
    }
    println!("result=pass");
    Ok(())
}
