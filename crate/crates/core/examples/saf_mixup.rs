//! One SAF-mixup step by hand: pair target features, weigh each pair with
//! the SAF module, and mix features and pseudo-labels alike.
//!
//! ```text
//! cargo run --example saf_mixup
//! ```

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use saf_lab::autodiff::{Tape, Tensor};
use saf_lab::mixup::{pseudo_label_probs, saf_mixup_with_labels, saf_supervision_loss, MixMode, MixupPolicy};
use saf_lab::nn::{Backbone, ModelBundle, ModelDims};
use saf_lab::LabRng;

fn main() -> saf_lab::Result<()> {
    let mut rng = LabRng::seed_from_u64(3);
    let dims = ModelDims::default();
    let mut bundle = ModelBundle::build(Backbone::Mdd, &dims, &mut rng)?;

    // Stand-ins for F(target): six rows of extractor output.
    let features = Tensor::new(6, dims.feature_dim, (0..6 * dims.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect())?;
    let probs = pseudo_label_probs(&mut bundle, &features, &mut rng)?;

    for mode in [MixMode::Saf, MixMode::Beta, MixMode::Constant] {
        let policy = MixupPolicy { mode, ..MixupPolicy::default() };
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let mixed = saf_mixup_with_labels(&mut bundle, &mut tape, x, &probs, None, &policy, &mut rng)?;
        println!("mode {mode}");
        let labels = tape.value(mixed.soft_labels.unwrap()).clone();
        for (k, (&(i, j), eta)) in mixed.pair_indices.iter().zip(&mixed.etas).enumerate() {
            println!(
                "  pair ({i}, {j})  eta {eta:.4}  y_i {:.3?}  y_j {:.3?}  mixed {:.3?}",
                probs.row(i),
                probs.row(j),
                labels.row(k)
            );
        }
        let loss = saf_supervision_loss(&mut bundle, &mut tape, &mixed, true, &mut rng)?;
        tape.backward(loss)?;
        bundle.pull_grads(&tape);
        let estimator_grad: f64 = bundle
            .saf
            .estimator()
            .params()
            .filter_map(|p| p.grad())
            .map(|g| g.norm().powi(2))
            .sum::<f64>()
            .sqrt();
        println!("  supervision loss {:.4}, |grad S_eta| {estimator_grad:.3e}", tape.value(loss).item()?);
        for p in bundle.params_mut() {
            p.clear_grad();
        }
    }
    Ok(())
}
