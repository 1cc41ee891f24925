use rand::{Rng, RngCore};
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{ParamId, Parameter, RunningStats, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

/// Layer-by-layer description of a fully connected stack.
///
/// Each layer is `Linear → [BatchNorm] → activation → [Dropout]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub input_width: usize,
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout_rates: Vec<f64>,
    pub use_batch_norm: Vec<bool>,
}

impl MlpSpec {
    /// Plain stack with one activation everywhere and the given last activation.
    pub fn plain(input_width: usize, widths: &[usize], hidden: Activation, last: Activation) -> Self {
        let n = widths.len();
        let mut activations = vec![hidden; n];
        if let Some(a) = activations.last_mut() {
            *a = last;
        }
        Self {
            input_width,
            layer_widths: widths.to_vec(),
            activations,
            dropout_rates: vec![0.0; n],
            use_batch_norm: vec![false; n],
        }
    }

    pub fn output_width(&self) -> usize {
        self.layer_widths.last().copied().unwrap_or(self.input_width)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layer_widths.len();
        if n == 0 {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        if self.activations.len() != n || self.dropout_rates.len() != n || self.use_batch_norm.len() != n
        {
            return Err(Error::Config(format!(
                "MLP spec lists disagree: {n} widths, {} activations, {} dropout rates, {} batch-norm flags",
                self.activations.len(),
                self.dropout_rates.len(),
                self.use_batch_norm.len()
            )));
        }
        if self.input_width == 0 || self.layer_widths.contains(&0) {
            return Err(Error::Config("MLP widths must be positive".into()));
        }
        if let Some(r) = self.dropout_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("dropout rate {r} outside [0, 1)")));
        }
        Ok(())
    }
}

/// Sequential counter handing out parameter ids.
#[derive(Debug, Default)]
pub struct IdGen(usize);

impl IdGen {
    pub fn next(&mut self) -> ParamId {
        self.0 += 1;
        ParamId(self.0 - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub stats: RunningStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Parameter,
    pub bias: Parameter,
    pub batch_norm: Option<BatchNormLayer>,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// He-uniform weights for ReLU layers, Xavier-uniform otherwise; zero biases.
    pub fn new(
        name: &str,
        spec: MlpSpec,
        lr_multiplier: f64,
        ids: &mut IdGen,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layer_widths.len());
        let mut fan_in = spec.input_width;
        for (i, &fan_out) in spec.layer_widths.iter().enumerate() {
            let activation = spec.activations[i];
            let limit = match activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            let weight = Parameter::new(
                ids.next(),
                format!("{name}.{i}.weight"),
                Tensor::new(fan_in, fan_out, w)?,
                lr_multiplier,
            );
            let bias = Parameter::new(
                ids.next(),
                format!("{name}.{i}.bias"),
                Tensor::zeros(1, fan_out),
                lr_multiplier,
            );
            let batch_norm = spec.use_batch_norm[i].then(|| BatchNormLayer {
                gamma: Parameter::new(
                    ids.next(),
                    format!("{name}.{i}.bn.gamma"),
                    Tensor::filled(1, fan_out, 1.0),
                    lr_multiplier,
                ),
                beta: Parameter::new(
                    ids.next(),
                    format!("{name}.{i}.bn.beta"),
                    Tensor::zeros(1, fan_out),
                    lr_multiplier,
                ),
                stats: RunningStats::new(fan_out),
            });
            layers.push(DenseLayer {
                weight,
                bias,
                batch_norm,
                activation,
                dropout: spec.dropout_rates[i],
            });
            fan_in = fan_out;
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let rows = tape.shape(x).0;
        self.forward_anchored(tape, x, rows, training, rng)
    }

    /// Like [`Mlp::forward`], with batch-norm statistics taken from the
    /// first `stat_rows` rows.
    pub fn forward_anchored<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        x: Var,
        stat_rows: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let (_, width) = tape.shape(x);
        if width != self.spec.input_width {
            return Err(Error::Shape(format!(
                "input width {width} does not match layer input {}",
                self.spec.input_width
            )));
        }
        let mut h = x;
        for layer in &mut self.layers {
            let w = tape.param(&layer.weight);
            let b = tape.param(&layer.bias);
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if let Some(bn) = &mut layer.batch_norm {
                let gamma = tape.param(&bn.gamma);
                let beta = tape.param(&bn.beta);
                h = tape.batch_norm_anchored(h, gamma, beta, &mut bn.stats, training, stat_rows)?;
            }
            h = match layer.activation {
                Activation::Relu => tape.relu(h),
                Activation::Sigmoid => tape.sigmoid(h),
                Activation::None => h,
            };
            h = tape.dropout(h, layer.dropout, training, rng)?;
        }
        Ok(h)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|l| {
            let bn = l.batch_norm.iter().flat_map(|bn| [&bn.gamma, &bn.beta]);
            [&l.weight, &l.bias].into_iter().chain(bn)
        })
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|l| {
            let bn = l
                .batch_norm
                .iter_mut()
                .flat_map(|bn| [&mut bn.gamma, &mut bn.beta]);
            [&mut l.weight, &mut l.bias].into_iter().chain(bn)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_lists_must_agree() {
        let mut spec = MlpSpec::plain(3, &[4, 2], Activation::Relu, Activation::None);
        assert!(spec.validate().is_ok());
        spec.dropout_rates.pop();
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn init_limits_follow_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ids = IdGen::default();
        let spec = MlpSpec::plain(6, &[10, 4], Activation::Relu, Activation::None);
        let mlp = Mlp::new("t", spec, 1.0, &mut ids, &mut rng).unwrap();
        let he = 1.0f64;
        let xavier = (6.0f64 / 14.0).sqrt();
        assert!(mlp.layers[0].weight.value().data().iter().all(|w| w.abs() <= he));
        assert!(mlp.layers[1].weight.value().data().iter().all(|w| w.abs() <= xavier));
        assert!(mlp.layers[0].bias.value().data().iter().all(|&b| b == 0.0));
        assert_eq!(mlp.params().count(), 4);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ids = IdGen::default();
        let spec = MlpSpec::plain(3, &[2], Activation::None, Activation::None);
        let mut mlp = Mlp::new("t", spec, 1.0, &mut ids, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(5, 4));
        assert!(matches!(
            mlp.forward(&mut tape, x, false, &mut rng),
            Err(Error::Shape(_))
        ));
    }
}
