//! Central-difference check of the tape's gradients on a small
//! batch-normalized classifier, plus the sign flip of gradient reversal.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use saf_lab::autodiff::{Tape, Tensor};
use saf_lab::losses::cross_entropy;
use saf_lab::nn::{Activation, IdGen, Mlp, MlpSpec};
use saf_lab::LabRng;

const STEP: f64 = 1e-5;

fn loss(net: &Mlp, x: &Tensor, labels: &[usize]) -> saf_lab::Result<(f64, Mlp)> {
    let mut net = net.clone();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let logits = net.forward(&mut tape, xv, true, &mut LabRng::seed_from_u64(0))?;
    let l = cross_entropy(&mut tape, logits, labels)?;
    tape.backward(l)?;
    for p in net.params_mut() {
        p.pull_grad(&tape);
    }
    Ok((tape.value(l).item()?, net))
}

fn main() -> saf_lab::Result<()> {
    let mut rng = LabRng::seed_from_u64(7);
    let mut spec = MlpSpec::plain(3, &[6, 4], Activation::Relu, Activation::None);
    spec.use_batch_norm = vec![true, false];
    let net = Mlp::new("net", spec, 1.0, &mut IdGen::default(), &mut rng)?;
    let x = Tensor::new(8, 3, (0..24).map(|_| StandardNormal.sample(&mut rng)).collect())?;
    let labels = [0, 1, 2, 3, 0, 1, 2, 3];

    let (value, with_grads) = loss(&net, &x, &labels)?;
    println!("loss {value:.6}");
    println!("{:<14} {:>6} {:>12}", "parameter", "coords", "max rel err");
    for (i, p) in with_grads.params().enumerate() {
        let grad = p.grad().expect("pulled above");
        let mut worst = 0.0f64;
        for j in 0..grad.len() {
            let nudged = |delta: f64| {
                let mut n = net.clone();
                n.params_mut().nth(i).unwrap().value_mut().data_mut()[j] += delta;
                loss(&n, &x, &labels).map(|r| r.0)
            };
            let numeric = (nudged(STEP)? - nudged(-STEP)?) / (2.0 * STEP);
            let analytic = grad.data()[j];
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4));
        }
        println!("{:<14} {:>6} {:>12.2e}", p.name(), grad.len(), worst);
    }

    // d/dx Σ GRL_λ(x) = -λ everywhere.
    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::filled(2, 2, 1.5), true);
    let r = tape.grad_reverse(v, 0.3);
    let s = tape.sum(r);
    tape.backward(s)?;
    println!("gradient through reversal with lambda 0.3: {:?}", tape.grad(v).unwrap().data());
    Ok(())
}
