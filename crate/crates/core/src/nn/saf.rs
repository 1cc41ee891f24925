use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mlp::{Activation, IdGen, Mlp, MlpSpec};
use crate::autodiff::{Parameter, Tape, Var};
use crate::error::{Error, Result};

/// Distance kept between η and the ends of the unit interval.
pub const ETA_MARGIN: f64 = 1e-12;

/// Feature-pair weighting module: `k` parallel bottlenecks feeding a
/// sigmoid estimator that emits one mixing weight per pair.
///
/// Bottleneck `i` reads the first member of the pair when `i` is even and
/// the second when `i` is odd; with a single bottleneck both members pass
/// through it. The bottleneck outputs are summed before the estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct SafModule {
    bottlenecks: Vec<Mlp>,
    estimator: Mlp,
}

impl SafModule {
    pub fn new(
        input_width: usize,
        saf_width: usize,
        k: usize,
        lr_multiplier: f64,
        ids: &mut IdGen,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("the SAF module needs at least one bottleneck".into()));
        }
        let bottlenecks = (0..k)
            .map(|i| {
                let spec = MlpSpec::plain(input_width, &[saf_width], Activation::Relu, Activation::Relu);
                Mlp::new(&format!("M.S{}", i + 1), spec, lr_multiplier, ids, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = MlpSpec::plain(saf_width, &[1], Activation::Sigmoid, Activation::Sigmoid);
        let estimator = Mlp::new("M.eta", spec, lr_multiplier, ids, rng)?;
        Ok(Self {
            bottlenecks,
            estimator,
        })
    }

    pub fn bottleneck_count(&self) -> usize {
        self.bottlenecks.len()
    }

    pub fn input_width(&self) -> usize {
        self.bottlenecks[0].input_width()
    }

    pub fn bottlenecks(&self) -> &[Mlp] {
        &self.bottlenecks
    }

    pub fn bottlenecks_mut(&mut self) -> &mut [Mlp] {
        &mut self.bottlenecks
    }

    pub fn estimator(&self) -> &Mlp {
        &self.estimator
    }

    pub fn estimator_mut(&mut self) -> &mut Mlp {
        &mut self.estimator
    }

    /// Mixing weights `η ∈ (0, 1)` for row-aligned pairs, as an `m×1` column.
    pub fn weight(&mut self, tape: &mut Tape, first: Var, second: Var) -> Result<Var> {
        let width = self.input_width();
        for v in [first, second] {
            if tape.shape(v).1 != width {
                return Err(Error::Shape(format!(
                    "SAF input width {} does not match {width}",
                    tape.shape(v).1
                )));
            }
        }
        if tape.shape(first).0 != tape.shape(second).0 {
            return Err(Error::Shape("SAF pair members differ in row count".into()));
        }
        // No dropout or batch norm inside M, so the rng is never drawn.
        let mut no_rng = ChaCha8Rng::seed_from_u64(0);
        let routes: Vec<(usize, Var)> = if self.bottlenecks.len() == 1 {
            vec![(0, first), (0, second)]
        } else {
            (0..self.bottlenecks.len())
                .map(|i| (i, if i % 2 == 0 { first } else { second }))
                .collect()
        };
        let mut total: Option<Var> = None;
        for (i, input) in routes {
            let h = self.bottlenecks[i].forward(tape, input, false, &mut no_rng)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, h)?,
                None => h,
            });
        }
        let total = total.expect("at least one bottleneck");
        let eta = self.estimator.forward(tape, total, false, &mut no_rng)?;
        // A saturated sigmoid rounds to exactly 0 or 1 in f64.
        Ok(tape.clamp(eta, ETA_MARGIN, 1.0 - ETA_MARGIN))
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.bottlenecks
            .iter()
            .flat_map(|b| b.params())
            .chain(self.estimator.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.bottlenecks
            .iter_mut()
            .flat_map(|b| b.params_mut())
            .chain(self.estimator.params_mut())
    }
}
